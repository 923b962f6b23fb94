"""Reflection-aware shading: SH environment light, materials, reflect.

Radiance leaving a sample is c_d + tint * E(r) where r is the mirror
reflection of the view direction about the predicted normal and E is a
learnable real-spherical-harmonics expansion passed through softplus so
it stays positive.  Everything here is differentiable in the SH
coefficients, the raw material channels and the raw normal vectors; the
basis gradients below make the reflected-direction dependence exact.
"""

from dataclasses import dataclass

import numpy as np

from . import tape as ad

# real SH constants, hard normalization (same table plenoxels-style voxel
# renderers use)
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def n_sh_coeffs(degree):
    return (degree + 1) ** 2


def sh_basis(dirs, degree=3):
    """Evaluate the real SH basis at unit directions (..., 3) -> (..., n)."""
    if not 0 <= degree <= 3:
        raise ValueError("sh_basis supports degrees 0..3")
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = np.empty(d.shape[:-1] + (n_sh_coeffs(degree),))
    out[..., 0] = SH_C0
    if degree >= 1:
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = SH_C2[0] * x * y
        out[..., 5] = SH_C2[1] * y * z
        out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * x * z
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = SH_C3[1] * x * y * z
        out[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_grad(dirs, degree=3):
    """d basis / d direction for the polynomial forms above: (..., n, 3)."""
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    n = n_sh_coeffs(degree)
    g = np.zeros(d.shape[:-1] + (n, 3))
    if degree >= 1:
        g[..., 1, 1] = -SH_C1
        g[..., 2, 2] = SH_C1
        g[..., 3, 0] = -SH_C1
    if degree >= 2:
        g[..., 4, 0] = SH_C2[0] * y
        g[..., 4, 1] = SH_C2[0] * x
        g[..., 5, 1] = SH_C2[1] * z
        g[..., 5, 2] = SH_C2[1] * y
        g[..., 6, 0] = -2.0 * SH_C2[2] * x
        g[..., 6, 1] = -2.0 * SH_C2[2] * y
        g[..., 6, 2] = 4.0 * SH_C2[2] * z
        g[..., 7, 0] = SH_C2[3] * z
        g[..., 7, 2] = SH_C2[3] * x
        g[..., 8, 0] = 2.0 * SH_C2[4] * x
        g[..., 8, 1] = -2.0 * SH_C2[4] * y
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        g[..., 9, 0] = SH_C3[0] * 6.0 * x * y
        g[..., 9, 1] = SH_C3[0] * (3.0 * xx - 3.0 * yy)
        g[..., 10, 0] = SH_C3[1] * y * z
        g[..., 10, 1] = SH_C3[1] * x * z
        g[..., 10, 2] = SH_C3[1] * x * y
        g[..., 11, 0] = SH_C3[2] * (-2.0 * x * y)
        g[..., 11, 1] = SH_C3[2] * (4.0 * zz - xx - 3.0 * yy)
        g[..., 11, 2] = SH_C3[2] * 8.0 * y * z
        g[..., 12, 0] = SH_C3[3] * (-6.0 * x * z)
        g[..., 12, 1] = SH_C3[3] * (-6.0 * y * z)
        g[..., 12, 2] = SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
        g[..., 13, 0] = SH_C3[4] * (4.0 * zz - 3.0 * xx - yy)
        g[..., 13, 1] = SH_C3[4] * (-2.0 * x * y)
        g[..., 13, 2] = SH_C3[4] * 8.0 * x * z
        g[..., 14, 0] = SH_C3[5] * 2.0 * x * z
        g[..., 14, 1] = SH_C3[5] * (-2.0 * y * z)
        g[..., 14, 2] = SH_C3[5] * (xx - yy)
        g[..., 15, 0] = SH_C3[6] * (3.0 * xx - 3.0 * yy)
        g[..., 15, 1] = SH_C3[6] * (-6.0 * x * y)
    return g


def sh_eval(coeffs, dirs, degree=3):
    """Tape primitive: SH expansion sum_b Y_b(dir) coeffs[b] -> (M, 3).

    coeffs is a Var (n, 3); dirs a Var (M, 3) of (near-)unit directions.
    Differentiable in both; the direction adjoint goes through the exact
    polynomial basis gradients so reflections backprop into normals.
    """
    tape = coeffs.tape if isinstance(coeffs, ad.Var) else dirs.tape
    coeffs = tape._wrap(coeffs)
    dirs = tape._wrap(dirs)
    basis = sh_basis(dirs.data, degree)  # (M, n)
    out = basis @ coeffs.data

    def vjp(g):
        gc = basis.T @ g if coeffs.needs_grad else None
        gd = None
        if dirs.needs_grad:
            dbasis = sh_basis_grad(dirs.data, degree)  # (M, n, 3)
            gb = g @ coeffs.data.T  # (M, n), lets BLAS do the channel sum
            gd = np.einsum("mb,mba->ma", gb, dbasis)
        return (gc, gd)

    return tape.record(out, (coeffs, dirs), vjp)


# ----------------------------------------------------------------------
# environment + materials


@dataclass
class EnvMapSH:
    """Learnable environment radiance as an SH expansion per RGB channel."""

    degree: int
    coeffs: np.ndarray  # ((degree+1)^2, 3)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        want = (n_sh_coeffs(self.degree), 3)
        if self.coeffs.shape != want:
            raise ValueError(f"EnvMapSH coeffs must have shape {want}")


@dataclass
class MaterialSample:
    diffuse: np.ndarray  # RGB in (0,1)
    tint: np.ndarray  # RGB in (0,1)


def env_radiance(env: EnvMapSH, dirs):
    """softplus(SH expansion) at unit directions: strictly positive RGB."""
    lin = sh_basis(dirs, env.degree) @ env.coeffs
    return np.maximum(lin, 0.0) + np.log1p(np.exp(-np.abs(lin)))


def reflect(v, n):
    """Mirror v about n: 2 (v.n) n - v.  Unit inputs give a unit output."""
    v = np.asarray(v, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return 2.0 * (v * n).sum(axis=-1, keepdims=True) * n - v


def shade(material: MaterialSample, env: EnvMapSH, n_pred, view):
    """Linear-space sample color: diffuse + tint * env(reflect(view, n))."""
    r = reflect(view, n_pred)
    return material.diffuse + material.tint * env_radiance(env, r)


def fit_sh(fn, degree=3, n_dirs=4096):
    """Least-squares SH coefficients reproducing fn(dirs) -> (M, 3).

    Directions come from a Fibonacci sphere so the normal equations are
    well conditioned; if fn lies in the SH span the fit is exact to
    roundoff.
    """
    i = np.arange(n_dirs, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n_dirs
    phi = i * (np.pi * (3.0 - np.sqrt(5.0)))
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    dirs = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)
    basis = sh_basis(dirs, degree)
    target = np.asarray(fn(dirs), dtype=np.float64)
    coeffs, *_ = np.linalg.lstsq(basis, target, rcond=None)
    return coeffs


def equirect_dirs(width, height):
    """Pixel-center directions for an equirectangular panorama (H, W, 3).

    Row 0 is the +z pole, column 0 is azimuth -pi.
    """
    v = (np.arange(height) + 0.5) / height  # polar angle fraction
    u = (np.arange(width) + 0.5) / width
    theta = v * np.pi
    phi = u * 2.0 * np.pi - np.pi
    st, ct = np.sin(theta), np.cos(theta)
    d = np.empty((height, width, 3))
    d[..., 0] = st[:, None] * np.cos(phi)[None, :]
    d[..., 1] = st[:, None] * np.sin(phi)[None, :]
    d[..., 2] = ct[:, None] * np.ones_like(phi)[None, :]
    return d
