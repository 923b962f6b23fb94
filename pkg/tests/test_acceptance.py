"""Acceptance suite: one test (one PASSED/FAILED line under pytest -v) per
shipping criterion.

Fast criteria run in seconds.  The reconstruction and ablation criteria
train three 2,000-iteration models on a shared synthetic dataset through
module fixtures, so the full file costs 35-40 minutes of CPU.  Measured
numbers print with -s (or in the failure report); thresholds are
hard-coded and must not be loosened to make a run pass.
"""

import hashlib
import json
import time

import numpy as np
import pytest

from normalfield import gradcheck as gc
from normalfield import tape as ad
from normalfield.grids import AnalyticField, analytic_query
from normalfield.metrics import mae_degrees, psnr
from normalfield.normals import density_gradient_normal, transmittance_gradient_normals
from normalfield.rendering import (
    RenderConfig,
    composite,
    forward_batch,
    probe_track,
    render_image,
)
from normalfield.scenes import make_scene, read_dataset, write_dataset
from normalfield.training import (
    TrainConfig,
    lambda_schedule,
    log_decay,
    predicted_normal_loss,
    train_loop,
)

BACKGROUND = np.ones(3)


# ----------------------------------------------------------------------
# shared end-to-end fixtures (shiny sphere, 16 train + 4 held-out views,
# 64x64 px, 48^3 grids, SH degree 3, 2,000 iterations, seed 0)

# Batch shape, learning rates, and the background handling are calibration
# choices, not part of the criteria; these values reach the thresholds on a
# single CPU core inside the runtime target.  Random per-ray backgrounds are
# load-bearing: against the constant white backdrop the optimizer settles on
# translucent haze that matches every pixel (color and alpha constrain only
# per-ray totals, never where along the ray the weight sits) and normals
# come out mush.  The hot density lr is equally load-bearing: Adam moves
# raw density about lr per step, and the empty-to-opaque journey is ~8
# units in under 2,000 steps.
TRAIN_CFG = dict(
    iterations=2000,
    rays_per_batch=1024,
    samples_per_ray=96,
    resolution=48,
    sh_degree=3,
    lr_grid=(2e-1, 1e-3),
    normal_loss_weight=(6e-2, 1e-2, 2000),
    background_augment=True,
    seed=0,
    probe_every=500,
)


@pytest.fixture(scope="module")
def dataset_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept_data")
    n = 20
    scene = make_scene("shiny_sphere", n_views=n, resolution=64, seed=0)
    test_ids = sorted(set(np.round(np.linspace(0, n - 1, 4)).astype(int)))
    train_ids = [i for i in range(n) if i not in test_ids]
    assert len(train_ids) == 16 and len(test_ids) == 4
    write_dataset(scene, root / "train", train_ids)
    write_dataset(scene, root / "test", test_ids)
    return root


def _train(dataset_dirs, out_root, name, **cfg_overrides):
    cfg = TrainConfig(**{**TRAIN_CFG, **cfg_overrides})
    data = read_dataset(dataset_dirs / "train")
    t0 = time.perf_counter()
    fields, paths = train_loop(data, cfg, out_root / name, quiet=True)
    wall = time.perf_counter() - t0
    return fields, paths, wall


@pytest.fixture(scope="module")
def run_full(dataset_dirs, tmp_path_factory):
    return _train(dataset_dirs, tmp_path_factory.mktemp("runs"), "full")


@pytest.fixture(scope="module")
def run_density_supervised(dataset_dirs, tmp_path_factory):
    return _train(
        dataset_dirs, tmp_path_factory.mktemp("runs"), "density",
        normal_supervision="density",
    )


@pytest.fixture(scope="module")
def run_no_warmup(dataset_dirs, tmp_path_factory):
    return _train(
        dataset_dirs, tmp_path_factory.mktemp("runs"), "lambda1",
        lambda_n_schedule=(1.0, 1.0, 800),
    )


def _held_out_metrics(fields, dataset_dirs):
    """Mean PSNR and transmittance-normal-map MAE over the 4 test views."""
    test = read_dataset(dataset_dirs / "test")
    cfg = RenderConfig(samples_per_ray=128)
    psnrs, maes = [], []
    for i, cam in enumerate(test.cameras):
        out = render_image(fields, cam, cfg)
        psnrs.append(psnr(out.color, test.images[i]))
        mae, _ = mae_degrees(
            out.normal_trans, out.valid_trans, test.normals[i], test.alphas[i]
        )
        maes.append(mae)
    return float(np.mean(psnrs)), float(np.mean(maes))


# ----------------------------------------------------------------------
# 1. slab probe: transmittance normals stay aligned through a
#    semi-transparent layer while pointwise density normals flip


def test_slab_normal_consistency():
    t0 = time.perf_counter()
    field = AnalyticField("gaussian_slab")
    direction = np.array([1.0, 0.0, 0.0])
    axis = -direction  # layer normal on the side facing the camera

    def query(pos):
        sigma, grad = analytic_query(field, pos)
        return sigma, grad, sigma, sigma, grad

    track, grad = probe_track(
        query, origin=(-1.5, 0.05, 0.02), direction=direction,
        near=0.0, far=3.0, n_samples=256,
    )
    n_dens, ok_dens = density_gradient_normal(grad)
    n_trans, ok_trans = transmittance_gradient_normals(grad, track.delta)

    important = track.w > 0.01 * track.w.max()
    assert ok_trans[important].all()
    dots_trans = n_trans[important] @ axis
    dens_dots = (n_dens @ axis)[ok_dens]
    sign_flips = int(np.sum(np.diff(np.sign(dens_dots)) != 0))
    wall = time.perf_counter() - t0

    print(
        f"\n  slab: min trans dot {dots_trans.min():.6f} over "
        f"{int(important.sum())} samples, density sign flips {sign_flips}, "
        f"{wall:.3f} s"
    )
    assert dots_trans.min() > 0.999
    assert sign_flips >= 1
    assert wall < 1.0


# ----------------------------------------------------------------------
# 2. every differentiable op and both losses pass central differences


def test_gradient_verification_suite():
    t0 = time.perf_counter()
    rows = gc.run_suite(seed=0)
    wall = time.perf_counter() - t0
    worst = max(rows, key=lambda r: r[1] / r[2])
    print(f"\n  gradcheck: {len(rows)} cases, worst {worst[0]} at {worst[1]:.3g}, {wall:.2f} s")
    failures = [(n, e, t) for n, e, t in rows if not e <= t]
    assert failures == []
    assert all(e <= 1e-4 for n, e, t in rows if t >= 1e-4)
    assert wall < 60.0


# ----------------------------------------------------------------------
# 3. quadrature against the closed-form piecewise-constant integral


def test_compositing_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    n_rays, n_samples = 10_000, 24
    sigma = rng.uniform(0.0, 30.0, (n_rays, n_samples))
    sigma[rng.random((n_rays, n_samples)) < 0.3] = 0.0
    delta = rng.uniform(0.01, 0.2, (n_rays, n_samples))
    colors = rng.random((n_rays, n_samples, 3))
    bg = rng.random(3)

    # closed form: for piecewise-constant sigma the per-segment integral
    # of T(t) sigma c dt is exactly T_i (1 - e^{-sigma_i delta_i}) c_i,
    # accumulated here with independent arithmetic (per-ray python loop)
    expected = np.empty((n_rays, 3))
    T_fin = np.empty(n_rays)
    for r in range(n_rays):
        T = 1.0
        acc = np.zeros(3)
        for i in range(n_samples):
            a = 1.0 - np.exp(-sigma[r, i] * delta[r, i])
            acc += T * a * colors[r, i]
            T *= np.exp(-sigma[r, i] * delta[r, i])
        expected[r] = acc + T * bg
        T_fin[r] = T

    lin, alpha, T, w = composite(sigma, delta, colors, bg)
    err = np.abs(lin - expected).max()
    partition = np.abs(w.sum(axis=1) + np.exp(-(sigma * delta).sum(axis=1)) - 1.0).max()
    wall = time.perf_counter() - t0

    print(f"\n  composite: max err {err:.3g}, partition {partition:.3g}, {wall:.2f} s")
    assert err <= 1e-10
    assert partition <= 1e-12
    assert wall < 10.0


# ----------------------------------------------------------------------
# 4. stop-gradient: lambda 0 leaves the density grid untouched by the
#    normal loss, lambda 1 reaches it, forward value never changes


def test_stop_gradient_semantics():
    t0 = time.perf_counter()
    params, fields_from, origins, dirs, t, delta, gt = gc._toy_problem(seed=3)

    def density_adjoint(lam):
        tape = ad.Tape()
        fb = forward_batch(tape, fields_from(params), origins, dirs, t, delta, BACKGROUND)
        loss = predicted_normal_loss(fb.w, fb.n_pred, fb.n_trans, fb.valid_trans, lam)
        tape.backward(loss)
        return float(loss.data), np.abs(tape.grad_of(fb.leaves.density)).max()

    v0, g0 = density_adjoint(0.0)
    v_half, _ = density_adjoint(0.5)
    v1, g1 = density_adjoint(1.0)
    wall = time.perf_counter() - t0

    print(
        f"\n  stop-gradient: loss {v1:.12f} under all lambdas, density adjoint "
        f"{g0:.3g} at lambda=0 vs {g1:.3g} at lambda=1, {wall:.2f} s"
    )
    assert g0 == 0.0
    assert g1 > 0.0
    assert abs(v0 - v1) <= 1e-12 and abs(v_half - v1) <= 1e-12
    assert wall < 5.0


# ----------------------------------------------------------------------
# 5. end-to-end reconstruction quality on held-out views


def test_toy_reconstruction_quality(run_full, dataset_dirs):
    fields, paths, wall = run_full
    mean_psnr, mean_mae = _held_out_metrics(fields, dataset_dirs)
    print(
        f"\n  reconstruction: held-out PSNR {mean_psnr:.2f} dB, "
        f"trans-normal MAE {mean_mae:.2f} deg, train {wall / 60:.1f} min"
    )
    assert mean_psnr >= 24.0
    assert mean_mae <= 10.0


# ----------------------------------------------------------------------
# 6. ablations under the same seed and budget: supervising the predicted
#    normals with pointwise density normals must be clearly worse, and
#    skipping the warmup must not be better


def test_ablation_ordering(run_full, run_density_supervised, run_no_warmup, dataset_dirs):
    _, full_mae = _held_out_metrics(run_full[0], dataset_dirs)
    _, dens_mae = _held_out_metrics(run_density_supervised[0], dataset_dirs)
    _, nowu_mae = _held_out_metrics(run_no_warmup[0], dataset_dirs)
    print(
        f"\n  ablations: full {full_mae:.2f} deg, density-supervised "
        f"{dens_mae:.2f} deg, no-warmup {nowu_mae:.2f} deg"
    )
    assert full_mae <= dens_mae - 2.0
    assert full_mae <= nowu_mae + 0.5


# ----------------------------------------------------------------------
# 7. schedules: warmup endpoints and log-linearity, lr endpoints match
#    the config, optimizer constants surfaced in the run log


def test_schedule_correctness(run_full):
    cfg = TrainConfig(**TRAIN_CFG)
    start, end, warmup = cfg.lambda_n_schedule
    assert lambda_schedule(0, cfg) == pytest.approx(0.01, abs=1e-15)
    assert lambda_schedule(warmup, cfg) == pytest.approx(1.0, abs=1e-15)
    assert lambda_schedule(warmup + 500, cfg) == pytest.approx(1.0, abs=1e-15)

    ks = np.arange(warmup + 1)
    logs = np.log([lambda_schedule(int(k), cfg) for k in ks])
    slopes = np.diff(logs)
    assert np.abs(slopes - slopes[0]).max() <= 1e-12

    lr0, lr1 = cfg.lr_grid
    assert log_decay(0, lr0, lr1, cfg.iterations) == pytest.approx(lr0, rel=1e-15)
    assert log_decay(cfg.iterations, lr0, lr1, cfg.iterations) == pytest.approx(lr1, rel=1e-15)
    e0, e1 = cfg.lr_env
    assert log_decay(0, e0, e1, cfg.iterations) == pytest.approx(e0, rel=1e-15)
    assert log_decay(cfg.iterations, e0, e1, cfg.iterations) == pytest.approx(e1, rel=1e-15)

    with open(run_full[1]["run"]) as f:
        run = json.load(f)
    assert run["adam"] == {"beta1": 0.9, "beta2": 0.99, "eps": 1e-15}
    assert run["lambda_n"] == {"start": start, "end": end, "warmup": warmup}
    assert run["config"]["lr_grid"] == [lr0, lr1]
    print("\n  schedules: lambda 0.01 -> 1 log-linear, lr endpoints and adam constants logged")


# ----------------------------------------------------------------------
# 8. bit-identical artifacts from twin seeded runs


def test_determinism(dataset_dirs, tmp_path):
    cfg = TrainConfig(**{**TRAIN_CFG, "iterations": 40, "probe_every": 20})
    data = read_dataset(dataset_dirs / "train")
    digests = []
    for name in ("a", "b"):
        _, paths = train_loop(data, cfg, tmp_path / name, quiet=True)
        ck = hashlib.sha256((tmp_path / name / "checkpoint.nfld").read_bytes()).hexdigest()
        log = hashlib.sha256((tmp_path / name / "train_log.csv").read_bytes()).hexdigest()
        digests.append((ck, log))
    print(f"\n  determinism: checkpoint {digests[0][0][:12]}.., log {digests[0][1][:12]}..")
    assert digests[0] == digests[1]
