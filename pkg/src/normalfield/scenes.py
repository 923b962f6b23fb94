"""Synthetic scenes with analytic ground truth, and dataset (de)serialization.

Scenes are deliberately built inside the model family: the procedural
environment is softplus of a polynomial of degree <= 3 in the direction
(sky gradient plus one broad lobe), so a degree-3 SH expansion can
represent it exactly and end-to-end reconstruction error is optimization
error, not model bias.  Sphere ground truth uses exact ray intersection
with analytic normals and mirror shading; the translucent slab is
integrated by brute-force quadrature against its closed-form density.
"""

import json
import os
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .errors import DataError
from .fields import SceneFields, init_fields
from .grids import AnalyticField, VoxelGrid, analytic_query, softplus
from .imageio import read_pfm, read_png, write_pfm, write_png
from .rendering import Camera, generate_rays, look_at, pixel_grid, tone_map
from .shading import EnvMapSH, fit_sh, reflect

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))

SCENE_KINDS = ("gaussian_slab", "matte_sphere", "shiny_sphere", "two_spheres")


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    diffuse: np.ndarray  # GT albedo in (0,1)
    tint: np.ndarray  # GT specular tint in [0,1)


@dataclass
class SyntheticScene:
    kind: str
    cameras: list
    spheres: list
    slab: AnalyticField = None
    slab_diffuse: np.ndarray = None
    # environment: softplus(base + grad * d_z + lobe * ((1 + d.axis)/2)^3)
    env_base: np.ndarray = field(default_factory=lambda: np.array([-1.2, -1.0, -0.6]))
    env_grad: np.ndarray = field(default_factory=lambda: np.array([0.35, 0.45, 0.8]))
    env_lobe: np.ndarray = field(default_factory=lambda: np.array([2.2, 1.9, 1.15]))
    env_axis: np.ndarray = None
    background: np.ndarray = field(default_factory=lambda: np.ones(3))
    bbox_min: np.ndarray = field(default_factory=lambda: np.full(3, -1.1))
    bbox_max: np.ndarray = field(default_factory=lambda: np.full(3, 1.1))
    seed: int = 0

    def env_pre(self, dirs):
        """Pre-softplus radiance polynomial, (..., 3)."""
        d = np.asarray(dirs, dtype=np.float64)
        up = d[..., 2:3]
        lobe = ((1.0 + d @ self.env_axis) / 2.0) ** 3
        return self.env_base + self.env_grad * up + self.env_lobe * lobe[..., None]

    def env_radiance_gt(self, dirs):
        return softplus(self.env_pre(dirs))


def make_scene(kind, n_views=16, resolution=64, seed=0, fov_y=np.deg2rad(45.0)):
    """Build geometry + a Fibonacci lattice of inward-looking cameras."""
    if kind not in SCENE_KINDS:
        raise DataError(f"unknown scene kind {kind!r}")
    if n_views < 2:
        raise ValueError("need at least 2 views")

    spheres, slab, slab_diffuse = [], None, None
    if kind == "matte_sphere":
        spheres = [
            Sphere(np.zeros(3), 1.0, np.array([0.70, 0.25, 0.20]), np.zeros(3))
        ]
    elif kind == "shiny_sphere":
        spheres = [
            Sphere(
                np.zeros(3),
                1.0,
                np.array([0.15, 0.15, 0.17]),
                np.array([0.55, 0.55, 0.55]),
            )
        ]
    elif kind == "two_spheres":
        spheres = [
            Sphere(
                np.array([-0.52, 0.0, 0.0]),
                0.5,
                np.array([0.65, 0.20, 0.15]),
                np.zeros(3),
            ),
            Sphere(
                np.array([0.55, 0.0, 0.05]),
                0.45,
                np.array([0.10, 0.10, 0.12]),
                np.array([0.50, 0.50, 0.55]),
            ),
        ]
    else:  # gaussian_slab
        slab = AnalyticField(kind="gaussian_slab", amplitude=4.0, width=0.1)
        slab_diffuse = np.array([0.60, 0.60, 0.62])

    axis = np.array([0.45, 0.3, 0.85])
    scene = SyntheticScene(
        kind=kind,
        cameras=[],
        spheres=spheres,
        slab=slab,
        slab_diffuse=slab_diffuse,
        env_axis=axis / np.linalg.norm(axis),
        seed=seed,
    )

    # distance so the bounding sphere spans ~60% of the vertical frame
    r_bound = 1.0
    dist = r_bound / np.sin(0.3 * fov_y)
    for i in range(n_views):
        z = (i + 0.5) / n_views
        s = np.sqrt(1.0 - z * z)
        phi = i * GOLDEN_ANGLE
        pos = dist * np.array([s * np.cos(phi), s * np.sin(phi), z])
        scene.cameras.append(
            look_at(pos, np.zeros(3), fov_y, resolution, resolution)
        )
    return scene


# ----------------------------------------------------------------------
# ground-truth rendering


def _intersect_spheres(origins, dirs, spheres):
    """Nearest positive hit over a sphere list: (t, hit, index)."""
    n = origins.shape[0]
    t_best = np.full(n, np.inf)
    idx = np.full(n, -1)
    for k, sp in enumerate(spheres):
        oc = origins - sp.center
        b = (oc * dirs).sum(axis=-1)
        c = (oc * oc).sum(axis=-1) - sp.radius**2
        disc = b * b - c
        ok = disc > 0.0
        t = -b - np.sqrt(np.where(ok, disc, 0.0))
        ok &= t > 1e-6
        closer = ok & (t < t_best)
        t_best[closer] = t[closer]
        idx[closer] = k
    return t_best, idx >= 0, idx


def render_ground_truth(scene: SyntheticScene, camera: Camera, slab_samples=4096):
    """Exact (or high-resolution quadrature) GT maps for one camera.

    Returns (sRGB image, normal map, alpha map, depth map).  Normals are
    zero outside the foreground; alpha is binary for opaque geometry.
    """
    h, w = camera.height, camera.width
    origins, dirs = generate_rays(camera, pixel_grid(camera), jitter=0.5)
    image = np.empty((h * w, 3))
    normal = np.zeros((h * w, 3))
    alpha = np.zeros(h * w)
    depth = np.zeros(h * w)

    if scene.kind == "gaussian_slab":
        # camera rays against the analytic density, brute-force quadrature
        near, far = 0.05, 2.0 * np.linalg.norm(camera.position) + 2.0
        tk = near + (np.arange(slab_samples) + 0.5) * (far - near) / slab_samples
        dt = (far - near) / slab_samples
        pos = origins[:, None, :] + tk[None, :, None] * dirs[:, None, :]
        sigma, _ = analytic_query(scene.slab, pos)
        s = sigma * dt
        prefix = np.zeros_like(s)
        np.cumsum(s[:, :-1], axis=1, out=prefix[:, 1:])
        trans = np.exp(-prefix)
        wq = trans * (1.0 - np.exp(-s))
        t_final = np.exp(-s.sum(axis=1))
        lin = wq.sum(axis=1, keepdims=True) * scene.slab_diffuse
        lin += t_final[:, None] * scene.background
        image = tone_map(lin)
        alpha = 1.0 - t_final
        depth = (wq * tk).sum(axis=1) / np.maximum(wq.sum(axis=1), 1e-8)
        facing = -np.sign(dirs[:, 0:1])
        fg = (alpha > 0.5) & (np.abs(dirs[:, 0]) > 1e-12)
        normal[fg] = facing[fg] * np.array([1.0, 0.0, 0.0])
    else:
        t, hit, idx = _intersect_spheres(origins, dirs, scene.spheres)
        image[:] = tone_map(np.broadcast_to(scene.background, (h * w, 3)))
        for k, sp in enumerate(scene.spheres):
            sel = hit & (idx == k)
            if not sel.any():
                continue
            p = origins[sel] + t[sel, None] * dirs[sel]
            n = (p - sp.center) / sp.radius
            v = -dirs[sel]
            env = scene.env_radiance_gt(reflect(v, n))
            lin = sp.diffuse + sp.tint * env
            image[sel] = tone_map(lin)
            normal[sel] = n
            depth[sel] = t[sel]
        alpha = hit.astype(np.float64)

    return (
        image.reshape(h, w, 3),
        normal.reshape(h, w, 3),
        alpha.reshape(h, w),
        depth.reshape(h, w),
    )


# ----------------------------------------------------------------------
# the parameter set that reproduces a sphere scene exactly


def oracle_fields(scene: SyntheticScene, resolution=48, sh_degree=3):
    """Hand-constructed grids/SH that should render the GT (sphere kinds).

    Density ramps from empty to solid across about one voxel around each
    surface; normals point radially; materials invert their activations;
    SH coefficients are the least-squares projection of the (in-span)
    pre-softplus environment polynomial.
    """
    if not scene.spheres:
        raise ValueError("oracle fields are defined for sphere scenes only")
    fields = init_fields(resolution, scene.bbox_min, scene.bbox_max, sh_degree, seed=0)
    res = fields.density.resolution
    cell = float(fields.density.cell_size().min())
    axes = [
        np.linspace(scene.bbox_min[a], scene.bbox_max[a], res[a]) for a in range(3)
    ]
    px, py, pz = np.meshgrid(*axes, indexing="ij")
    pos = np.stack([px, py, pz], axis=-1)

    signed = np.full(res, np.inf)
    nearest = np.zeros(res, dtype=np.int64)
    for k, sp in enumerate(scene.spheres):
        d = np.linalg.norm(pos - sp.center, axis=-1) - sp.radius
        closer = d < signed
        signed[closer] = d[closer]
        nearest[closer] = k

    slope = 22.0 / cell  # full [-10, 12] swing across one voxel
    fields.density.data[..., 0] = np.clip(-signed * slope, -10.0, 12.0)

    def logit(u):
        u = np.clip(u, 1e-6, 1.0 - 1e-6)
        return np.log(u / (1.0 - u))

    for k, sp in enumerate(scene.spheres):
        mask = nearest == k
        rel = pos[mask] - sp.center
        nvec = rel / np.maximum(np.linalg.norm(rel, axis=-1, keepdims=True), 1e-9)
        fields.normal.data[mask] = nvec
        fields.diffuse.data[mask] = logit(sp.diffuse)
        fields.tint.data[mask] = logit(sp.tint)

    fields.env = EnvMapSH(degree=sh_degree, coeffs=fit_sh(scene.env_pre, sh_degree))
    return fields


# ----------------------------------------------------------------------
# dataset serialization


def write_dataset(scene: SyntheticScene, out_dir, view_ids=None):
    """Render GT for the chosen views and write the on-disk dataset."""
    os.makedirs(out_dir, exist_ok=True)
    for sub in ("rgb", "normal", "alpha"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    if view_ids is None:
        view_ids = range(len(scene.cameras))

    frames = []
    for i, vid in enumerate(view_ids):
        cam = scene.cameras[vid]
        image, normal, alpha, _ = render_ground_truth(scene, cam)
        names = {
            "rgb": f"rgb/{i:04d}.png",
            "normal": f"normal/{i:04d}.pfm",
            "alpha": f"alpha/{i:04d}.pfm",
        }
        write_png(os.path.join(out_dir, names["rgb"]), image)
        write_pfm(os.path.join(out_dir, names["normal"]), normal)
        write_pfm(os.path.join(out_dir, names["alpha"]), alpha)
        frames.append({"transform": cam.pose.tolist(), **names})

    cam0 = scene.cameras[0]
    meta = {
        "kind": scene.kind,
        "fov_y": cam0.fov_y,
        "width": cam0.width,
        "height": cam0.height,
        "background": scene.background.tolist(),
        "bbox_min": scene.bbox_min.tolist(),
        "bbox_max": scene.bbox_max.tolist(),
        "frames": frames,
    }
    with open(os.path.join(out_dir, "transforms.json"), "w") as f:
        json.dump(meta, f, indent=1)


def read_dataset(path):
    """Load a dataset directory back into memory (cameras + GT maps)."""
    tj = os.path.join(path, "transforms.json")
    try:
        with open(tj) as f:
            meta = json.load(f)
    except OSError as e:
        raise DataError(f"cannot read dataset: {tj} ({e})") from None
    except json.JSONDecodeError as e:
        raise DataError(f"corrupt transforms.json: {tj} ({e})") from None

    cameras, images, normals, alphas = [], [], [], []
    for fr in meta["frames"]:
        cameras.append(
            Camera(
                pose=np.array(fr["transform"], dtype=np.float64),
                fov_y=meta["fov_y"],
                width=meta["width"],
                height=meta["height"],
            )
        )
        images.append(read_png(os.path.join(path, fr["rgb"])))
        normals.append(read_pfm(os.path.join(path, fr["normal"])))
        alphas.append(read_pfm(os.path.join(path, fr["alpha"])))
    return SimpleNamespace(
        meta=meta,
        cameras=cameras,
        images=np.stack(images),
        normals=np.stack(normals),
        alphas=np.stack(alphas),
    )
