"""Losses, schedules, Adam, and the reconstruction loop.

The normal loss blends two variants with identical forward values: an
unrestricted term through which density parameters feel the normal
supervision, and a stopped term that only trains the predicted normals.
The blend weight warms up log-linearly so early (noisy) geometry is not
dragged around by random normals.
"""

import json
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from . import tape as ad
from .errors import DataError, NumericalError
from .fields import init_fields, save_checkpoint
from .metrics import psnr
from .rendering import (
    RenderConfig,
    forward_batch,
    generate_rays,
    ray_box_intersect,
    render_image,
    sample_stratified,
    tone_map,
    tone_unmap,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# counter-RNG stream ids
_STREAM_BATCH = 0
_STREAM_PIXEL = 1
_STREAM_DEPTH = 2
_STREAM_BG = 3

LOG_HEADER = "iter,loss_c,loss_n,lambda_n,lr_grid,psnr_probe"


@dataclass
class TrainConfig:
    iterations: int = 2000
    rays_per_batch: int = 4096
    samples_per_ray: int = 128
    resolution: int = 48  # grid vertices per axis
    sh_degree: int = 3
    lr_grid: tuple = (1e-2, 1e-4)  # log decay over all iterations
    lr_env: tuple = (5e-3, 1e-4)
    lambda_n_schedule: tuple = (0.01, 1.0, 800)  # (start, end, warmup iters)
    normal_loss_weight: tuple = (6e-2, 3e-3, 2000)  # (start, end, decay iters)
    adam: tuple = (0.9, 0.99, 1e-15)  # (beta1, beta2, eps)
    seed: int = 0
    background: tuple = (1.0, 1.0, 1.0)
    # Composite each training ray over a random background color instead of
    # the fixed one, recompositing the GT pixel to match (exact, since the
    # blend is linear in the background and the dataset stores alpha).  A
    # constant background admits fog solutions: a translucent shell plus
    # interior haze reproduces every pixel while the geometry stays mush.
    # Randomizing the background leaves opaque-or-empty as the only density
    # configuration that matches all recomposited views.
    background_augment: bool = False
    normal_supervision: str = "trans"  # "trans" | "density" (ablation)
    # Decoupled decay of raw density toward the empty level (per step:
    # b -= lr * weight_decay * (b - empty)).  Sparsity prior: color and
    # alpha only pin the per-ray totals, not where along the ray the
    # weight sits, so haze spread through the interior can match every
    # pixel while the normal estimates stay mush.  The decay drains
    # density the images do not demand and concentrates the rest.
    weight_decay: float = 0.0
    probe_every: int = 100

    def __post_init__(self):
        for name in ("iterations", "rays_per_batch", "samples_per_ray", "resolution"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        ls, le, k = self.lambda_n_schedule
        if not (0.0 < ls <= le <= 1.0):
            raise ValueError("lambda schedule needs 0 < start <= end <= 1")
        if k < 1:
            raise ValueError("lambda warmup must be >= 1 iteration")
        for pair in (self.lr_grid, self.lr_env, self.normal_loss_weight[:2]):
            if min(pair) <= 0.0:
                raise ValueError("learning rates and loss weights must be positive")
        if self.normal_supervision not in ("trans", "density"):
            raise ValueError("normal_supervision must be 'trans' or 'density'")


def load_config(path=None, overrides=None):
    """TOML file (keys mirror TrainConfig fields) + CLI overrides."""
    data = {}
    if path is not None:
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except OSError as e:
            raise DataError(f"cannot read config: {path} ({e})") from None
        except tomllib.TOMLDecodeError as e:
            raise DataError(f"bad TOML in {path}: {e}") from None
    unknown = set(data) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("lr_grid", "lr_env", "lambda_n_schedule", "normal_loss_weight",
                "adam", "background"):
        if key in data:
            data[key] = tuple(data[key])
    return TrainConfig(**data)


# ----------------------------------------------------------------------
# schedules


def log_decay(k, start, end, total):
    """exp(lerp(ln start, ln end, k/total)), clamped past `total`."""
    u = min(max(k, 0), total) / total
    return float(np.exp((1.0 - u) * np.log(start) + u * np.log(end)))


def lambda_schedule(k, cfg: TrainConfig):
    start, end, warmup = cfg.lambda_n_schedule
    return log_decay(k, start, end, warmup)


# ----------------------------------------------------------------------
# losses (tape-level)


def color_loss(pred_srgb, gt_srgb):
    """Squared RGB error summed over channels, averaged over rays."""
    n_rays = pred_srgb.shape[0]
    d = pred_srgb - np.asarray(gt_srgb, dtype=np.float64)
    return (d * d).sum() * (1.0 / n_rays)


def predicted_normal_loss(w, n_pred, n_sup, valid, lambda_n):
    """Per-sample weighted disagreement between np and its supervision.

    Two terms with identical forward values: the bidirectional one trains
    both sides, the stopped one trains only n_pred.  lambda_n in [0, 1]
    blends their gradients.  Samples with null supervision are masked out
    of both.
    """
    if not 0.0 <= lambda_n <= 1.0:
        raise ValueError("lambda_n must lie in [0, 1]")
    n_rays = w.shape[0]
    mask = valid.astype(np.float64)

    d_bi = n_pred - n_sup
    term_bi = (w * ((d_bi * d_bi).sum(axis=-1) * mask)).sum() * (1.0 / n_rays)

    d_uni = n_pred - ad.stop_gradient(n_sup)
    term_uni = (
        ad.stop_gradient(w) * ((d_uni * d_uni).sum(axis=-1) * mask)
    ).sum() * (1.0 / n_rays)

    return term_bi * lambda_n + term_uni * (1.0 - lambda_n)


# ----------------------------------------------------------------------
# Adam


class Adam:
    """One optimizer instance per parameter block; bias-corrected moments."""

    def __init__(self, shape, beta1=0.9, beta2=0.99, eps=1e-15):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grad, lr):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ----------------------------------------------------------------------
# the loop


def _flatten_dataset(dataset):
    v, h, w, _ = dataset.images.shape
    gt = dataset.images.reshape(v * h * w, 3)
    alpha = dataset.alphas.reshape(v * h * w)
    ix, iy = np.meshgrid(np.arange(w), np.arange(h))
    px = np.stack([ix.ravel(), iy.ravel()], axis=-1)
    return gt, alpha, px, v, h, w


def train_loop(dataset, cfg: TrainConfig, out_dir, fields=None, quiet=False):
    """Fit fields to a dataset; writes checkpoint.nfld, train_log.csv, run.json."""
    os.makedirs(out_dir, exist_ok=True)
    meta = dataset.meta
    bbox_min = np.array(meta["bbox_min"], dtype=np.float64)
    bbox_max = np.array(meta["bbox_max"], dtype=np.float64)
    if fields is None:
        fields = init_fields(
            cfg.resolution, bbox_min, bbox_max, cfg.sh_degree, seed=cfg.seed
        )

    gt_flat, alpha_flat, px_one, n_views, h, w = _flatten_dataset(dataset)
    n_rays_total = gt_flat.shape[0]
    view_of = np.repeat(np.arange(n_views), h * w)
    px_all = np.tile(px_one, (n_views, 1))
    gt_lin = tone_unmap(gt_flat) if cfg.background_augment else None
    bg_data = np.asarray(meta["background"], dtype=np.float64)

    blocks = fields.blocks()
    beta1, beta2, eps = cfg.adam
    opt = {name: Adam(arr.shape, beta1, beta2, eps) for name, arr in blocks.items()}

    b1, b2 = cfg.lambda_n_schedule[0], cfg.lambda_n_schedule[1]
    probe_cfg = RenderConfig(
        samples_per_ray=cfg.samples_per_ray,
        background=cfg.background,
        threads=1,
    )

    log_path = os.path.join(out_dir, "train_log.csv")
    run_path = os.path.join(out_dir, "run.json")
    with open(run_path, "w") as f:
        json.dump(
            {
                "config": asdict(cfg),
                "adam": {"beta1": beta1, "beta2": beta2, "eps": eps},
                "lambda_n": {"start": b1, "end": b2, "warmup": cfg.lambda_n_schedule[2]},
                "n_views": n_views,
                "resolution_px": [w, h],
            },
            f,
            indent=1,
        )

    log = open(log_path, "w")
    log.write(LOG_HEADER + "\n")
    try:
        for k in range(cfg.iterations):
            # ray batch, in-pixel jitter and depth jitter from the counter RNG
            u = rng.uniform(cfg.seed, _STREAM_BATCH, k, np.arange(cfg.rays_per_batch))
            ray_ids = (u * n_rays_total).astype(np.int64)
            jit = np.stack(
                [
                    rng.uniform(cfg.seed, _STREAM_PIXEL, k, ray_ids, 0),
                    rng.uniform(cfg.seed, _STREAM_PIXEL, k, ray_ids, 1),
                ],
                axis=-1,
            )
            origins = np.empty((cfg.rays_per_batch, 3))
            dirs = np.empty((cfg.rays_per_batch, 3))
            for v in np.unique(view_of[ray_ids]):
                sel = view_of[ray_ids] == v
                origins[sel], dirs[sel] = generate_rays(
                    dataset.cameras[v], px_all[ray_ids[sel]], jit[sel]
                )

            near, far, hit = ray_box_intersect(origins, dirs, bbox_min, bbox_max)
            near = np.where(hit, near, 1.0)
            far = np.where(hit, far, 1.0 + 1e-6)
            u_t = rng.uniform(
                cfg.seed,
                _STREAM_DEPTH,
                k,
                ray_ids[:, None],
                np.arange(cfg.samples_per_ray)[None, :],
            )
            t, delta = sample_stratified(near, far, cfg.samples_per_ray, u_t)

            if cfg.background_augment:
                bg = rng.uniform(
                    cfg.seed, _STREAM_BG, k, ray_ids[:, None], np.arange(3)[None, :]
                )
                shift = (1.0 - alpha_flat[ray_ids])[:, None] * (bg - bg_data)
                gt_batch = tone_map(np.clip(gt_lin[ray_ids] + shift, 0.0, 1.0))
            else:
                bg = cfg.background
                gt_batch = gt_flat[ray_ids]

            tape = ad.Tape()
            fb = forward_batch(tape, fields, origins, dirs, t, delta, bg)

            loss_c = color_loss(fb.srgb, gt_batch)
            lam = lambda_schedule(k, cfg)
            if cfg.normal_supervision == "trans":
                n_sup, valid = fb.n_trans, fb.valid_trans
            else:
                n_sup, valid = fb.n_dens, fb.valid_dens
            loss_n = predicted_normal_loss(fb.w, fb.n_pred, n_sup, valid, lam)
            w_n = log_decay(k, *cfg.normal_loss_weight)
            total = loss_c + w_n * loss_n

            if not np.isfinite(total.data):
                raise NumericalError(
                    f"training diverged at iteration {k}: "
                    f"loss_c={loss_c.data}, loss_n={loss_n.data}"
                )

            tape.backward(total)

            lr_g = log_decay(k, *cfg.lr_grid, cfg.iterations)
            lr_e = log_decay(k, *cfg.lr_env, cfg.iterations)
            opt["density"].step(blocks["density"], fb.leaves.density.grad, lr_g)
            opt["normal"].step(blocks["normal"], fb.leaves.normal.grad, lr_g)
            opt["diffuse"].step(blocks["diffuse"], fb.leaves.diffuse.grad, lr_g)
            opt["tint"].step(blocks["tint"], fb.leaves.tint.grad, lr_g)
            opt["env_sh"].step(blocks["env_sh"], fb.leaves.env.grad, lr_e)
            if cfg.weight_decay > 0.0:
                # Decoupled pull of raw density toward the empty level,
                # scaled by the live lr.  Kept outside the loss on purpose:
                # fed through Adam the moment normalization would blow the
                # tiny constant pull up to full-lr steps everywhere and
                # flatten the data gradient.  Applied directly, voxels the
                # images actually constrain override it easily, while haze
                # in the constraint null space drains away.
                dec = lr_g * cfg.weight_decay
                blocks["density"] -= dec * (
                    blocks["density"] - fields.density.empty_value
                )
            fb = None
            tape.release()  # per-batch graphs otherwise pile up until OOM

            probe = ""
            if k % cfg.probe_every == 0 or k == cfg.iterations - 1:
                img = render_image(fields, dataset.cameras[0], probe_cfg).color
                probe = f"{psnr(img, dataset.images[0]):.10g}"
                if not quiet:
                    print(
                        f"iter {k}: loss_c={loss_c.data:.5g} "
                        f"loss_n={loss_n.data:.5g} psnr={probe}",
                        flush=True,
                    )
            log.write(
                f"{k},{float(loss_c.data):.10g},{float(loss_n.data):.10g},"
                f"{lam:.10g},{lr_g:.10g},{probe}\n"
            )
    finally:
        log.close()

    ckpt = os.path.join(out_dir, "checkpoint.nfld")
    save_checkpoint(fields, ckpt)
    return fields, {"checkpoint": ckpt, "log": log_path, "run": run_path}
