"""Ray generation, stratified sampling, volume quadrature, tone mapping.

The same differentiable forward pass (forward_batch) serves training and
image rendering; rendering simply never calls backward.  Compositing is
done in linear radiance, clamped to [0,1], then gamma mapped to sRGB
once per pixel.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from . import normals as nrm
from . import tape as ad
from .grids import interp_coeffs
from .shading import sh_eval

DEPTH_EPS = 1e-8

# ----------------------------------------------------------------------
# cameras and rays


@dataclass
class Camera:
    """Pinhole camera: 3x4 camera-to-world pose, y-down image, looks along -z."""

    pose: np.ndarray  # (3, 4) [R | t]
    fov_y: float  # radians
    width: int
    height: int

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(3, 4)
        rot = self.pose[:, :3]
        if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-8:
            raise ValueError("camera rotation is not orthonormal")
        if not 0.0 < self.fov_y < np.pi:
            raise ValueError("fov_y must lie in (0, pi)")

    @property
    def focal(self):
        return (self.height / 2.0) / np.tan(self.fov_y / 2.0)

    @property
    def position(self):
        return self.pose[:, 3]


def look_at(position, target, fov_y, width, height, up=(0.0, 0.0, 1.0)):
    """Camera at `position` looking at `target`; +z-up world by default."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    zc = position - target
    zc = zc / np.linalg.norm(zc)
    upv = np.asarray(up, dtype=np.float64)
    xc = np.cross(upv, zc)
    if np.linalg.norm(xc) < 1e-8:  # looking straight along up
        xc = np.cross(np.array([1.0, 0.0, 0.0]), zc)
    xc = xc / np.linalg.norm(xc)
    yc = np.cross(zc, xc)
    pose = np.concatenate([np.stack([xc, yc, zc], axis=1), position[:, None]], axis=1)
    return Camera(pose=pose, fov_y=fov_y, width=width, height=height)


def generate_rays(camera: Camera, px, jitter=0.5):
    """World-space rays through pixels px (N, 2) as (ix, iy) indices.

    jitter is the in-pixel offset in [0,1)^2 (scalar or (N, 2)); 0.5 puts
    the ray through the pixel center.  Returns (origins, unit directions).
    """
    px = np.asarray(px, dtype=np.float64).reshape(-1, 2)
    jitter = np.broadcast_to(np.asarray(jitter, dtype=np.float64), px.shape)
    u = px[:, 0] + jitter[:, 0]
    v = px[:, 1] + jitter[:, 1]
    f = camera.focal
    d_cam = np.stack(
        [
            (u - camera.width / 2.0) / f,
            -(v - camera.height / 2.0) / f,
            -np.ones_like(u),
        ],
        axis=-1,
    )
    d_world = d_cam @ camera.pose[:, :3].T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.position, d_world.shape).copy()
    return origins, d_world


def pixel_grid(camera: Camera):
    """(H*W, 2) integer pixel coordinates in row-major order."""
    ix, iy = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    return np.stack([ix.ravel(), iy.ravel()], axis=-1)


def ray_box_intersect(origins, dirs, bbox_min, bbox_max):
    """Slab test; returns (t_near, t_far, hit) with t_near clamped to >= 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (bbox_min - origins) * inv
        t1 = (bbox_max - origins) * inv
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    # axes with zero direction: inside the slab -> (-inf, inf), else empty
    par_in = (origins >= bbox_min) & (origins <= bbox_max)
    zero = dirs == 0.0
    lo = np.where(zero, np.where(par_in, -np.inf, np.inf), lo)
    hi = np.where(zero, np.where(par_in, np.inf, -np.inf), hi)
    t_near = np.maximum(lo.max(axis=-1), 0.0)
    t_far = hi.min(axis=-1)
    hit = t_far > t_near
    return t_near, t_far, hit


# ----------------------------------------------------------------------
# sampling and quadrature


def sample_stratified(near, far, n, u=None):
    """One sample per equal bin of [near, far]; u=None means bin centers.

    near/far may be scalars or per-ray arrays.  delta[i] = t[i+1] - t[i]
    with the last spacing set to the bin width.
    """
    near = np.asarray(near, dtype=np.float64)
    far = np.asarray(far, dtype=np.float64)
    if n < 2:
        raise ValueError("need at least 2 samples per ray")
    if np.any(near < 0.0) or np.any(far <= near):
        raise ValueError("invalid sampling range (need 0 <= near < far)")
    width = (far - near) / n
    k = np.arange(n, dtype=np.float64)
    if u is None:
        u = 0.5
    t = near[..., None] + (k + u) * width[..., None]
    delta = np.empty_like(t)
    delta[..., :-1] = t[..., 1:] - t[..., :-1]
    delta[..., -1] = width
    return t, delta


@dataclass
class RaySampleTrack:
    """Everything recorded along one batch of rays (leading axes free)."""

    t: np.ndarray
    delta: np.ndarray
    position: np.ndarray
    b: np.ndarray
    grad_b: np.ndarray
    sigma_sharp: np.ndarray
    sigma_smooth: np.ndarray
    T: np.ndarray
    w: np.ndarray


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3) sRGB
    alpha: np.ndarray  # (H, W)
    depth: np.ndarray  # (H, W)
    normal_density: np.ndarray  # (H, W, 3), zero rows where invalid
    valid_density: np.ndarray
    normal_trans: np.ndarray
    valid_trans: np.ndarray
    normal_pred: np.ndarray
    valid_pred: np.ndarray


def composite(sigma_sharp, delta, colors, background):
    """Plain-numpy quadrature: returns (linear color, alpha, T, w).

    T_i is the transmittance BEFORE sample i (T_0 = 1); the returned w
    satisfies sum(w) + T_final = 1 exactly up to roundoff.
    """
    sig = np.asarray(sigma_sharp, dtype=np.float64)
    if not np.all(np.isfinite(sig)):
        bad = int(np.argwhere(~np.isfinite(sig))[0][-1])
        raise ValueError(f"non-finite density at sample index {bad}")
    d = np.asarray(delta, dtype=np.float64)
    s = sig * d
    prefix = np.zeros_like(s)
    np.cumsum(s[..., :-1], axis=-1, out=prefix[..., 1:])
    T = np.exp(-prefix)
    w = T * (1.0 - np.exp(-s))
    T_final = np.exp(-s.sum(axis=-1))
    colors = np.asarray(colors, dtype=np.float64)
    bg = np.asarray(background, dtype=np.float64)
    lin = (w[..., None] * colors).sum(axis=-2) + T_final[..., None] * bg
    alpha = 1.0 - T_final
    return lin, alpha, T, w


SRGB_KNEE = 0.0031308


def tone_map(linear):
    """Linear [0,1] radiance to sRGB gamma encoding, per channel."""
    u = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    lo = 12.92 * u
    hi = 1.055 * np.power(u, 1.0 / 2.4, where=u > 0, out=np.ones_like(u)) - 0.055
    return np.where(u <= SRGB_KNEE, lo, hi)


def tone_unmap(srgb):
    """sRGB gamma back to linear [0,1] radiance; inverse of tone_map."""
    s = np.asarray(srgb, dtype=np.float64)
    return np.where(
        s <= 12.92 * SRGB_KNEE, s / 12.92, ((s + 0.055) / 1.055) ** 2.4
    )


def tone_map_var(lin):
    """Tape version of tone_map; input already clamped to [0,1]."""
    cond = lin.data <= SRGB_KNEE
    safe = ad.where(cond, 1.0, lin)  # keeps the power branch away from 0
    powed = ad.power(safe, 1.0 / 2.4) * 1.055 - 0.055
    return ad.where(cond, lin * 12.92, powed)


# ----------------------------------------------------------------------
# the differentiable pipeline


def forward_batch(tape, fields, origins, dirs, t, delta, background):
    """Record the full render of a ray batch on `tape`.

    origins/dirs (R,3), t/delta (R,S) are constants; the learnable grids
    and SH coefficients enter as leaves.  Returns a namespace with the
    leaf Vars, per-sample Vars and validity masks needed by the losses
    and by map compositing.
    """
    r_count, s_count = t.shape
    m = r_count * s_count
    pos = origins[:, None, :] + t[..., None] * dirs[:, None, :]

    leaves = SimpleNamespace(
        density=tape.leaf(fields.density.data.reshape(-1, 1)),
        normal=tape.leaf(fields.normal.data.reshape(-1, 3)),
        diffuse=tape.leaf(fields.diffuse.data.reshape(-1, 3)),
        tint=tape.leaf(fields.tint.data.reshape(-1, 3)),
        env=tape.leaf(fields.env.coeffs),
    )

    co = interp_coeffs(fields.density, pos)  # all grids share this stencil
    inside = co.inside[:, None]

    b = tape.where(inside, tape.gather(leaves.density, co), fields.density.empty_value)
    grad_b = tape.where(
        inside[:, :, None], tape.gather_grad(leaves.density, co), 0.0
    )  # (M,1,3)

    sigma_sharp = ad.exp(b)  # rendering density
    sg_b = ad.sigmoid(b)  # d softplus / db, scales grad_b below

    s_opt = sigma_sharp.reshape(r_count, s_count) * delta
    w = ad.composite(s_opt)  # (R,S)
    T_final = ad.exp(-s_opt.sum(axis=1))  # (R,)

    # smooth-density spatial gradient drives both gradient estimators
    grad_smooth = (sg_b.reshape(m, 1, 1) * grad_b).reshape(r_count, s_count, 3)
    accum = ad.cumsum_exclusive(grad_smooth * delta[..., None], axis=1)
    n_trans = ad.normalize_eps(-accum, eps=nrm.EPS_NORM)
    valid_trans = np.linalg.norm(accum.data, axis=-1) >= nrm.EPS_GRAD
    n_dens = ad.normalize_eps(-grad_smooth, eps=nrm.EPS_NORM)
    valid_dens = np.linalg.norm(grad_smooth.data, axis=-1) >= nrm.EPS_GRAD

    n_pred = ad.normalize_eps(
        tape.gather(leaves.normal, co).reshape(r_count, s_count, 3), eps=nrm.EPS_NORM
    )

    diffuse = ad.sigmoid(tape.gather(leaves.diffuse, co)).reshape(r_count, s_count, 3)
    tint = ad.sigmoid(tape.gather(leaves.tint, co)).reshape(r_count, s_count, 3)

    view = -dirs[:, None, :]  # sample-to-camera, constant
    refl = (ad.dot(n_pred, tape.constant(view)) * 2.0) * n_pred - view
    env_lin = sh_eval(leaves.env, refl.reshape(m, 3), fields.env.degree)
    c_samples = diffuse + tint * ad.ln1p_exp(env_lin).reshape(r_count, s_count, 3)

    lin = (w.reshape(r_count, s_count, 1) * c_samples).sum(axis=1)
    lin = lin + T_final.reshape(r_count, 1) * np.asarray(background, dtype=np.float64)
    srgb = tone_map_var(ad.clamp(lin, 0.0, 1.0))

    return SimpleNamespace(
        leaves=leaves,
        srgb=srgb,
        w=w,
        T_final=T_final,
        n_pred=n_pred,
        n_trans=n_trans,
        valid_trans=valid_trans,
        n_dens=n_dens,
        valid_dens=valid_dens,
        b=b,
        t=t,
        delta=delta,
        position=pos,
        grad_smooth=grad_smooth,
    )


def _resolve_workers(threads=None):
    if threads is None:
        threads = int(os.environ.get("NORMALFIELD_THREADS", "0"))
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


@dataclass
class RenderConfig:
    samples_per_ray: int = 128
    background: tuple = (1.0, 1.0, 1.0)
    chunk: int = 4096
    threads: int = 0  # 0 = NORMALFIELD_THREADS / auto


def render_rays(fields, origins, dirs, cfg: RenderConfig):
    """Deterministic (bin-center) forward render of arbitrary rays.

    Returns per-ray color/alpha/depth plus composited per-ray normals.
    """
    near, far, hit = ray_box_intersect(
        origins, dirs, fields.density.bbox_min, fields.density.bbox_max
    )
    near = np.where(hit, near, 1.0)
    far = np.where(hit, far, 1.0 + 1e-6)
    t, delta = sample_stratified(near, far, cfg.samples_per_ray)

    tape = ad.Tape()
    fb = forward_batch(tape, fields, origins, dirs, t, delta, cfg.background)

    w = fb.w.data
    alpha = 1.0 - fb.T_final.data
    depth = (w * t).sum(axis=-1) / np.maximum(w.sum(axis=-1), DEPTH_EPS)
    nd, vd = nrm.composite_normal_map(w, fb.n_dens.data, fb.valid_dens)
    nt, vt = nrm.composite_normal_map(w, fb.n_trans.data, fb.valid_trans)
    npr, vp = nrm.composite_normal_map(w, fb.n_pred.data)
    color = fb.srgb.data
    fb = None
    tape.release()
    return SimpleNamespace(
        color=color,
        alpha=alpha,
        depth=depth,
        normal_density=nd,
        valid_density=vd,
        normal_trans=nt,
        valid_trans=vt,
        normal_pred=npr,
        valid_pred=vp,
    )


def render_image(fields, camera: Camera, cfg: RenderConfig = None) -> RenderOutput:
    """Render every pixel of `camera` through the fitted fields."""
    cfg = cfg or RenderConfig()
    px = pixel_grid(camera)
    origins, dirs = generate_rays(camera, px, jitter=0.5)
    n = px.shape[0]

    out = RenderOutput(
        color=np.zeros((n, 3)),
        alpha=np.zeros(n),
        depth=np.zeros(n),
        normal_density=np.zeros((n, 3)),
        valid_density=np.zeros(n, dtype=bool),
        normal_trans=np.zeros((n, 3)),
        valid_trans=np.zeros(n, dtype=bool),
        normal_pred=np.zeros((n, 3)),
        valid_pred=np.zeros(n, dtype=bool),
    )

    def run_chunk(lo):
        hi = min(lo + cfg.chunk, n)
        res = render_rays(fields, origins[lo:hi], dirs[lo:hi], cfg)
        out.color[lo:hi] = res.color
        out.alpha[lo:hi] = res.alpha
        out.depth[lo:hi] = res.depth
        out.normal_density[lo:hi] = res.normal_density
        out.valid_density[lo:hi] = res.valid_density
        out.normal_trans[lo:hi] = res.normal_trans
        out.valid_trans[lo:hi] = res.valid_trans
        out.normal_pred[lo:hi] = res.normal_pred
        out.valid_pred[lo:hi] = res.valid_pred

    starts = range(0, n, cfg.chunk)
    workers = _resolve_workers(cfg.threads if cfg.threads > 0 else None)
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_chunk, starts))
    else:
        for lo in starts:
            run_chunk(lo)

    h, wdt = camera.height, camera.width
    out.color = out.color.reshape(h, wdt, 3)
    out.alpha = out.alpha.reshape(h, wdt)
    out.depth = out.depth.reshape(h, wdt)
    out.normal_density = out.normal_density.reshape(h, wdt, 3)
    out.valid_density = out.valid_density.reshape(h, wdt)
    out.normal_trans = out.normal_trans.reshape(h, wdt, 3)
    out.valid_trans = out.valid_trans.reshape(h, wdt)
    out.normal_pred = out.normal_pred.reshape(h, wdt, 3)
    out.valid_pred = out.valid_pred.reshape(h, wdt)
    return out


def probe_track(query, origin, direction, near, far, n_samples):
    """March one ray through a density query and record the full track.

    `query` maps positions (N,3) to (b, grad_b, sigma_sharp, sigma_smooth,
    grad_smooth); used by the ray-probe tool with either an analytic field
    or checkpoint grids.
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    t, delta = sample_stratified(float(near), float(far), int(n_samples))
    pos = origin[None, :] + t[:, None] * direction[None, :]
    b, grad_b, sig_sharp, sig_smooth, grad_smooth = query(pos)
    s = sig_sharp * delta
    prefix = np.zeros_like(s)
    np.cumsum(s[:-1], axis=-1, out=prefix[1:])
    T = np.exp(-prefix)
    w = T * (1.0 - np.exp(-s))
    track = RaySampleTrack(
        t=t,
        delta=delta,
        position=pos,
        b=b,
        grad_b=grad_b,
        sigma_sharp=sig_sharp,
        sigma_smooth=sig_smooth,
        T=T,
        w=w,
    )
    return track, grad_smooth
