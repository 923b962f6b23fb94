"""The three normal estimators and normal-map compositing.

Normals that are genuinely undefined (empty prefix, vanishing gradient,
background pixel) are reported as null: every function returns a vector
array paired with a boolean validity mask, and consumers skip invalid
entries instead of substituting a fallback direction.
"""

from dataclasses import dataclass

import numpy as np

EPS_GRAD = 1e-12  # below this norm a gradient direction is meaningless
EPS_NORM = 1e-12  # softening for the learnable normals


@dataclass
class NormalTrack:
    """Per-sample normal estimates along a batch of rays."""

    n_density: np.ndarray  # (..., N, 3)
    valid_density: np.ndarray
    n_trans: np.ndarray  # (..., N, 3)
    valid_trans: np.ndarray
    n_pred: np.ndarray  # (..., N, 3), always defined


def density_gradient_normal(grad_sigma):
    """Negated normalized density gradient: -g/|g|, null when |g| < eps.

    The classic estimator; on a semi-transparent layer its sign flips
    past the density peak because the gradient itself reverses there.
    """
    g = np.asarray(grad_sigma, dtype=np.float64)
    norm = np.linalg.norm(g, axis=-1)
    valid = norm >= EPS_GRAD
    n = np.zeros_like(g)
    safe = np.where(valid, norm, 1.0)
    n = -g / safe[..., None]
    n[~valid] = 0.0
    return n, valid


def transmittance_gradient_normals(grad_sigma_smooth, delta):
    """Accumulated-gradient normals along each ray, sample index last-but-one.

    n_i = -(sum_{j<i} grad_sigma(x_j) delta_j) normalized.  The running
    sum only ever accumulates, so the estimate cannot flip sign past a
    density peak the way the pointwise gradient does.  Index 0 (empty
    prefix) and degenerate prefixes are null.
    """
    g = np.asarray(grad_sigma_smooth, dtype=np.float64)
    d = np.asarray(delta, dtype=np.float64)
    term = g * d[..., None]
    acc = np.zeros_like(term)
    np.cumsum(term[..., :-1, :], axis=-2, out=acc[..., 1:, :])
    norm = np.linalg.norm(acc, axis=-1)
    valid = norm >= EPS_GRAD
    safe = np.where(valid, norm, 1.0)
    n = -acc / safe[..., None]
    n[~valid] = 0.0
    return n, valid


def predicted_normal(raw):
    """Softened normalization v / sqrt(|v|^2 + eps): differentiable at 0."""
    v = np.asarray(raw, dtype=np.float64)
    s = (v * v).sum(axis=-1, keepdims=True)
    return v / np.sqrt(s + EPS_NORM)


def composite_normal_map(w, normals, valid=None):
    """Weight-blend per-sample normals into one unit vector per ray.

    Null when the accumulated weight over valid samples is below 0.5
    (background) or the blended vector is degenerate.
    """
    w = np.asarray(w, dtype=np.float64)
    n = np.asarray(normals, dtype=np.float64)
    if valid is None:
        valid = np.ones(w.shape, dtype=bool)
    wv = w * valid
    m = (wv[..., None] * n).sum(axis=-2)
    wsum = wv.sum(axis=-1)
    norm = np.linalg.norm(m, axis=-1)
    ok = (wsum >= 0.5) & (norm >= EPS_GRAD)
    out = np.zeros_like(m)
    safe = np.where(ok, norm, 1.0)
    out = m / safe[..., None]
    out[~ok] = 0.0
    return out, ok
