"""Spatial fields: dense voxel grids and closed-form test densities.

All learnable quantities live on dense trilinearly-interpolated voxel
grids.  A single pre-activation grid feeds two density activations, a
sharp one (exp) used for rendering weights and a smooth one (softplus)
used for normal estimation; both see the same underlying values, so one
set of parameters controls both.
"""

from dataclasses import dataclass, field

import numpy as np

#: pre-activation value reported outside the bbox of "empty outside" grids
DEFAULT_B_EMPTY = -10.0


def softplus(b):
    """Numerically stable ln(1 + exp(b)), good for |b| up to ~700."""
    b = np.asarray(b, dtype=np.float64)
    return np.maximum(b, 0.0) + np.log1p(np.exp(-np.abs(b)))


def sigmoid(b):
    b = np.asarray(b, dtype=np.float64)
    out = np.empty_like(b)
    pos = b >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-b[pos]))
    eb = np.exp(b[~pos])
    out[~pos] = eb / (1.0 + eb)
    return out


@dataclass
class DualDensity:
    """The two activated densities and their derivatives w.r.t. b."""

    sigma_sharp: np.ndarray   # exp(b), drives rendering weights
    sigma_smooth: np.ndarray  # softplus(b), drives normal estimation
    d_sharp_db: np.ndarray    # = sigma_sharp
    d_smooth_db: np.ndarray   # = sigmoid(b)


def dual_activate(b):
    """Map pre-activation density b to its sharp/smooth activation pair.

    Raises ValueError on non-finite input.
    """
    b = np.asarray(b, dtype=np.float64)
    if not np.all(np.isfinite(b)):
        raise ValueError("dual_activate: non-finite pre-activation density")
    sharp = np.exp(b)
    return DualDensity(
        sigma_sharp=sharp,
        sigma_smooth=softplus(b),
        d_sharp_db=sharp,
        d_smooth_db=sigmoid(b),
    )


@dataclass
class VoxelGrid:
    """Dense vertex grid over an axis-aligned bounding box.

    data has shape (nx, ny, nz, C) with vertex (0,0,0) at bbox_min and
    vertex (nx-1, ny-1, nz-1) at bbox_max.  Queries outside the bbox are
    clamped to the boundary, except grids in "empty" mode which report a
    constant pre-activation value instead (used for density so rays see
    empty space outside the scene box).
    """

    data: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    outside_mode: str = "clamp"  # "clamp" | "empty"
    empty_value: float = DEFAULT_B_EMPTY

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4:
            raise ValueError("VoxelGrid data must be (nx, ny, nz, C)")
        if min(self.data.shape[:3]) < 2:
            raise ValueError("VoxelGrid needs at least 2 vertices per axis")
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64).reshape(3)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64).reshape(3)
        if not np.all(self.bbox_max > self.bbox_min):
            raise ValueError("VoxelGrid bbox max must exceed min per axis")
        if self.outside_mode not in ("clamp", "empty"):
            raise ValueError(f"unknown outside_mode {self.outside_mode!r}")

    @property
    def resolution(self):
        return self.data.shape[:3]

    @property
    def channels(self):
        return self.data.shape[3]

    def cell_size(self):
        res = np.array(self.resolution, dtype=np.float64)
        return (self.bbox_max - self.bbox_min) / (res - 1.0)


@dataclass
class InterpCoeffs:
    """Precomputed trilinear stencil for a batch of query points.

    Shared between the plain query path and the gradient tape so corner
    indices and weights are computed once per (grid geometry, positions).
    """

    idx: np.ndarray      # (M, 8) flat vertex indices
    weights: np.ndarray  # (M, 8) value weights, rows sum to 1
    dweights: np.ndarray  # (M, 3, 8) d(weights)/d(world position)
    inside: np.ndarray   # (M,) bool, False where the query left the bbox
    n_vertices: int


def interp_coeffs(grid: VoxelGrid, positions) -> InterpCoeffs:
    """Trilinear corner indices/weights for world-space query points."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    nx, ny, nz = grid.resolution
    res = np.array([nx, ny, nz], dtype=np.float64)
    scale = (res - 1.0) / (grid.bbox_max - grid.bbox_min)
    g = (pos - grid.bbox_min) * scale  # grid-space coords
    inside = np.all((pos >= grid.bbox_min) & (pos <= grid.bbox_max), axis=1)

    g = np.clip(g, 0.0, res - 1.0)
    cell = np.minimum(np.floor(g), res - 2.0).astype(np.int64)
    f = g - cell  # fractional offset in [0, 1]

    m = pos.shape[0]
    # corner order: x fastest-changing last, i.e. (dx, dy, dz) lexicographic
    off = np.array(
        [(dx * ny + dy) * nz + dz for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)],
        dtype=np.int64,
    )
    base = (cell[:, 0] * ny + cell[:, 1]) * nz + cell[:, 2]
    idx = base[:, None] + off[None, :]

    # per-axis factor pairs (near, far) = (1-f, f), combined by broadcasting
    wx = np.stack([1.0 - f[:, 0], f[:, 0]], axis=1)  # (M, 2)
    wy = np.stack([1.0 - f[:, 1], f[:, 1]], axis=1)
    wz = np.stack([1.0 - f[:, 2], f[:, 2]], axis=1)
    weights = (
        wx[:, :, None, None] * wy[:, None, :, None] * wz[:, None, None, :]
    ).reshape(m, 8)

    # derivative of the weight product w.r.t. world position: replace one
    # axis factor by +-1 and scale grid->world; zero where the query was
    # clamped onto the bbox (the clamp kills the dependence on position)
    sgn = np.array([-1.0, 1.0])
    dweights = np.empty((m, 3, 2, 2, 2))
    yz = wy[:, :, None] * wz[:, None, :]  # (M, 2, 2)
    dweights[:, 0] = (scale[0] * sgn)[None, :, None, None] * yz[:, None, :, :]
    xz = wx[:, :, None] * wz[:, None, :]
    dweights[:, 1] = (scale[1] * sgn)[None, None, :, None] * xz[:, :, None, :]
    xy = wx[:, :, None] * wy[:, None, :]
    dweights[:, 2] = (scale[2] * sgn)[None, None, None, :] * xy[:, :, :, None]
    dweights = dweights.reshape(m, 3, 8)
    clamped = (g <= 0.0) | (g >= res - 1.0)  # (M, 3) per-axis clamp flags
    dweights *= ~clamped[:, :, None]

    return InterpCoeffs(
        idx=idx,
        weights=weights,
        dweights=dweights,
        inside=inside,
        n_vertices=nx * ny * nz,
    )


def grid_query(grid: VoxelGrid, positions):
    """Trilinear value and exact spatial gradient of the interpolant.

    Returns (values, gradients) of shapes (..., C) and (..., C, 3).  The
    gradient is the derivative of the trilinear interpolant itself, which
    is piecewise constant per axis inside a cell and discontinuous across
    cell faces.
    """
    pos = np.asarray(positions, dtype=np.float64)
    lead = pos.shape[:-1]
    co = interp_coeffs(grid, pos)
    flat = grid.data.reshape(-1, grid.channels)
    corner_vals = flat[co.idx]  # (M, 8, C)
    values = np.einsum("mkc,mk->mc", corner_vals, co.weights)
    grads = np.einsum("mkc,mak->mca", corner_vals, co.dweights)
    if grid.outside_mode == "empty":
        out = ~co.inside
        values[out] = grid.empty_value
        grads[out] = 0.0
    return values.reshape(lead + (grid.channels,)), grads.reshape(
        lead + (grid.channels, 3)
    )


@dataclass
class AnalyticField:
    """Closed-form density with an exact gradient, for probes and tests.

    Kinds:
      gaussian_slab: 1-D Gaussian density profile across a plane,
          sigma(x) = amplitude * exp(-(x.axis - offset)^2 / (2 width^2)).
      solid_sphere: sigmoid-graded ball,
          sigma(x) = amplitude * sigmoid(steepness * (radius - |x - center|)).
      double_bump: two Gaussian layers along one axis.
    """

    kind: str
    amplitude: float = 4.0
    width: float = 0.1
    offset: float = 0.0
    axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 1.0
    steepness: float = 20.0
    amplitude2: float = 2.0
    width2: float = 0.1
    offset2: float = 0.5

    def __post_init__(self):
        if self.kind not in ("gaussian_slab", "solid_sphere", "double_bump"):
            raise ValueError(f"unknown analytic field kind {self.kind!r}")
        self.axis = np.asarray(self.axis, dtype=np.float64)
        self.axis = self.axis / np.linalg.norm(self.axis)
        self.center = np.asarray(self.center, dtype=np.float64)


def _gaussian_profile(u, offset, amplitude, width):
    z = (u - offset) / width
    sig = amplitude * np.exp(-0.5 * z * z)
    dsig_du = -sig * (u - offset) / (width * width)
    return sig, dsig_du


def analytic_query(fld: AnalyticField, positions):
    """Closed-form (sigma, grad_sigma) at world positions (..., 3)."""
    pos = np.asarray(positions, dtype=np.float64)
    lead = pos.shape[:-1]
    p = pos.reshape(-1, 3)

    if fld.kind == "gaussian_slab":
        u = p @ fld.axis
        sig, dsig = _gaussian_profile(u, fld.offset, fld.amplitude, fld.width)
        grad = dsig[:, None] * fld.axis[None, :]
    elif fld.kind == "double_bump":
        u = p @ fld.axis
        s1, d1 = _gaussian_profile(u, fld.offset, fld.amplitude, fld.width)
        s2, d2 = _gaussian_profile(u, fld.offset2, fld.amplitude2, fld.width2)
        sig = s1 + s2
        grad = (d1 + d2)[:, None] * fld.axis[None, :]
    else:  # solid_sphere
        rel = p - fld.center
        r = np.linalg.norm(rel, axis=1)
        s = sigmoid(fld.steepness * (fld.radius - r))
        sig = fld.amplitude * s
        dsig_dr = -fld.amplitude * fld.steepness * s * (1.0 - s)
        safe = np.maximum(r, 1e-12)
        grad = (dsig_dr / safe)[:, None] * rel
        grad[r < 1e-12] = 0.0

    return sig.reshape(lead), grad.reshape(lead + (3,))
