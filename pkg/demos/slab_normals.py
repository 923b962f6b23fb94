"""Why accumulate the gradient instead of pointing along it.

March a single ray through a semi-transparent Gaussian layer and track
both normal estimators sample by sample.  The pointwise density-gradient
normal n = -grad/|grad| reverses direction the moment the ray passes the
density peak, because the gradient itself reverses there.  The
transmittance-gradient normal integrates grad sigma along the traversed
prefix, so it only ever accumulates evidence and stays put.

Writes slab_normals.png (density profile, weights, and both dot-product
traces) next to this script.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from normalfield.grids import AnalyticField, analytic_query
from normalfield.normals import density_gradient_normal, transmittance_gradient_normals
from normalfield.rendering import probe_track

HERE = os.path.dirname(os.path.abspath(__file__))

field = AnalyticField("gaussian_slab")  # sigma(x) = 4 exp(-x^2 / (2 * 0.1^2))
direction = np.array([1.0, 0.0, 0.0])
camera_facing = -direction


def query(pos):
    sigma, grad = analytic_query(field, pos)
    return sigma, grad, sigma, sigma, grad


track, grad = probe_track(
    query, origin=(-1.5, 0.0, 0.0), direction=direction, near=0.0, far=3.0,
    n_samples=256,
)

n_dens, ok_dens = density_gradient_normal(grad)
n_trans, ok_trans = transmittance_gradient_normals(grad, track.delta)

dot_dens = np.where(ok_dens, n_dens @ camera_facing, np.nan)
dot_trans = np.where(ok_trans, n_trans @ camera_facing, np.nan)

peak = track.t[np.argmax(track.sigma_sharp)]
heavy = track.w > 0.01 * track.w.max()

print(f"density peak at t = {peak:.3f}")
print(f"samples carrying > 1% of max weight: {heavy.sum()}")
print(f"  transmittance normal dot range there: "
      f"[{np.nanmin(dot_trans[heavy]):+.6f}, {np.nanmax(dot_trans[heavy]):+.6f}]")
print(f"  density normal dot range there:       "
      f"[{np.nanmin(dot_dens[heavy]):+.6f}, {np.nanmax(dot_dens[heavy]):+.6f}]")

flips = np.sum(np.diff(np.sign(dot_dens[ok_dens])) != 0)
print(f"density-gradient sign flips along the ray: {flips}")

fig, axes = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
axes[0].plot(track.t, track.sigma_sharp, color="k")
axes[0].set_ylabel("sigma")
axes[1].plot(track.t, track.w, color="tab:gray")
axes[1].set_ylabel("weight w")
axes[2].plot(track.t, dot_dens, label="density gradient", color="tab:red")
axes[2].plot(track.t, dot_trans, label="transmittance gradient", color="tab:blue")
axes[2].axvline(peak, ls=":", color="k", lw=0.8)
axes[2].set_ylabel("dot with camera-facing normal")
axes[2].set_xlabel("t along ray")
axes[2].set_ylim(-1.1, 1.1)
axes[2].legend(loc="lower left")
fig.tight_layout()
out = os.path.join(HERE, "slab_normals.png")
fig.savefig(out, dpi=120)
print(f"wrote {out}")
