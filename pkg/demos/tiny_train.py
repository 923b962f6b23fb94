"""End-to-end reconstruction in a couple of minutes at desk scale.

Synthesizes a small matte-sphere dataset, optimizes 32^3 grids for 400
iterations, and reports held-out PSNR plus the angular error of all
three normal maps.  The run is intentionally short; the point is the
workflow, not the numbers (the acceptance suite trains the full budget).

Artifacts land in demos/tiny_run/.
"""

import os

import numpy as np

from normalfield.imageio import write_png
from normalfield.metrics import mae_degrees, psnr
from normalfield.rendering import RenderConfig, render_image
from normalfield.scenes import make_scene, read_dataset, write_dataset
from normalfield.training import TrainConfig, train_loop

HERE = os.path.dirname(os.path.abspath(__file__))
RUN = os.path.join(HERE, "tiny_run")

scene = make_scene("matte_sphere", n_views=8, resolution=48, seed=0)
write_dataset(scene, os.path.join(RUN, "train"), view_ids=[0, 1, 2, 4, 5, 6])
write_dataset(scene, os.path.join(RUN, "test"), view_ids=[3, 7])

# Random per-ray backgrounds keep the optimizer off the translucent-haze
# shortcut (a constant backdrop only constrains per-ray totals), and the
# hot density lr covers the empty-to-opaque distance in few iterations.
cfg = TrainConfig(
    iterations=400,
    rays_per_batch=512,
    samples_per_ray=48,
    resolution=32,
    sh_degree=2,
    lr_grid=(2e-1, 2e-3),
    lambda_n_schedule=(0.01, 1.0, 160),
    background_augment=True,
    seed=0,
    probe_every=100,
)
data = read_dataset(os.path.join(RUN, "train"))
fields, paths = train_loop(data, cfg, RUN)
print(f"checkpoint: {paths['checkpoint']}")

test = read_dataset(os.path.join(RUN, "test"))
rcfg = RenderConfig(samples_per_ray=96)
for i, cam in enumerate(test.cameras):
    out = render_image(fields, cam, rcfg)
    p = psnr(out.color, test.images[i])
    rows = []
    for label, nmap, ok in (
        ("trans", out.normal_trans, out.valid_trans),
        ("pred", out.normal_pred, out.valid_pred),
        ("density", out.normal_density, out.valid_density),
    ):
        mae, _ = mae_degrees(nmap, ok, test.normals[i], test.alphas[i])
        rows.append(f"{label} {mae:5.2f}")
    print(f"held-out view {i}: psnr {p:6.2f} dB   mae deg: " + "   ".join(rows))
    if i == 0:
        write_png(os.path.join(RUN, "held_out0.png"), out.color)
        nvis = np.where(out.valid_pred[..., None], (out.normal_pred + 1) * 0.5, 0.0)
        write_png(os.path.join(RUN, "held_out0_normals.png"), nvis)
print(f"images in {RUN}")
