"""Command line front end.

Subcommands cover the whole workflow: synthesize a dataset, train,
render maps from a checkpoint, evaluate held-out views, probe a ray,
verify gradients, and export the environment map.

Exit codes: 0 success, 2 bad arguments, 3 data/IO problem, 4 numerical
failure (divergence or a failed gradient check).
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import gradcheck as gc
from .errors import DataError, NumericalError
from .fields import load_checkpoint
from .grids import AnalyticField, analytic_query, dual_activate, grid_query
from .imageio import write_pfm, write_png
from .metrics import MetricReport, mae_degrees, psnr
from .normals import density_gradient_normal, transmittance_gradient_normals
from .rendering import RenderConfig, probe_track, render_image, tone_map
from .scenes import SCENE_KINDS, make_scene, read_dataset, write_dataset
from .shading import env_radiance, equirect_dirs
from .training import TrainConfig, load_config, train_loop


def _vec3(text):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    return np.array(parts)


def _build_parser():
    p = argparse.ArgumentParser(
        prog="normalfield",
        description="differentiable volume rendering with "
        "transmittance-gradient normals",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sc = sub.add_parser("scene", help="synthetic scene utilities")
    scsub = sc.add_subparsers(dest="scene_command", required=True)
    g = scsub.add_parser("generate", help="write a train/test dataset")
    g.add_argument("--kind", choices=SCENE_KINDS, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--train-views", type=int, default=16)
    g.add_argument("--test-views", type=int, default=4)
    g.add_argument("--resolution", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(run=_cmd_scene_generate)

    t = sub.add_parser("train", help="fit fields to a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="TOML file with TrainConfig keys")
    t.add_argument("--iterations", type=int)
    t.add_argument("--rays-per-batch", type=int)
    t.add_argument("--samples-per-ray", type=int)
    t.add_argument("--resolution", type=int)
    t.add_argument("--sh-degree", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument(
        "--normal-supervision", choices=("trans", "density"), default=None
    )
    t.add_argument(
        "--background-augment",
        action="store_true",
        default=None,
        help="composite training rays over random backgrounds",
    )
    t.add_argument("--lambda-start", type=float, help="warmup start value")
    t.add_argument("--lambda-warmup", type=int, help="warmup length in iterations")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(run=_cmd_train)

    r = sub.add_parser("render", help="render one view from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True, help="dataset dir supplying the camera")
    r.add_argument("--view", type=int, default=0)
    r.add_argument(
        "--mode",
        choices=("color", "normal-trans", "normal-density", "normal-pred", "depth"),
        default="color",
    )
    r.add_argument("--out", required=True)
    r.add_argument("--samples", type=int, default=128)
    r.set_defaults(run=_cmd_render)

    e = sub.add_parser("eval", help="metrics against held-out ground truth")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="CSV path for the per-view report")
    e.add_argument(
        "--normals", choices=("trans", "pred", "density"), default="trans"
    )
    e.add_argument("--samples", type=int, default=128)
    e.set_defaults(run=_cmd_eval)

    pr = sub.add_parser("probe", help="dump per-sample quantities along one ray")
    src = pr.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument(
        "--field", choices=("gaussian_slab", "solid_sphere", "double_bump")
    )
    pr.add_argument("--origin", type=_vec3, required=True)
    pr.add_argument("--direction", type=_vec3, required=True)
    pr.add_argument("--near", type=float, default=0.0)
    pr.add_argument("--far", type=float, default=4.0)
    pr.add_argument("--samples", type=int, default=256)
    pr.add_argument(
        "--axis", type=_vec3, help="reference direction (default: -direction)"
    )
    pr.add_argument("--out", help="CSV path (default: stdout)")
    pr.set_defaults(run=_cmd_probe)

    gcp = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    gcp.add_argument("--out", help="CSV report path")
    gcp.add_argument("--seed", type=int, default=0)
    gcp.set_defaults(run=_cmd_gradcheck)

    env = sub.add_parser("env", help="environment map utilities")
    envsub = env.add_subparsers(dest="env_command", required=True)
    ex = envsub.add_parser("export", help="write the environment as equirect PFM")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--out", required=True)
    ex.add_argument("--width", type=int, default=512)
    ex.add_argument("--height", type=int, default=256)
    ex.set_defaults(run=_cmd_env_export)

    return p


def _cmd_scene_generate(args):
    n = args.train_views + args.test_views
    scene = make_scene(args.kind, n_views=n, resolution=args.resolution, seed=args.seed)
    test_ids = set(np.round(np.linspace(0, n - 1, args.test_views)).astype(int)) \
        if args.test_views else set()
    train_ids = [i for i in range(n) if i not in test_ids]
    write_dataset(scene, os.path.join(args.out, "train"), train_ids)
    if test_ids:
        write_dataset(scene, os.path.join(args.out, "test"), sorted(test_ids))
    print(
        f"scene generate: kind={args.kind} train={len(train_ids)} "
        f"test={len(test_ids)} res={args.resolution} -> {args.out}"
    )
    return 0


def _cmd_train(args):
    overrides = {}
    for key in (
        "iterations",
        "rays_per_batch",
        "samples_per_ray",
        "resolution",
        "sh_degree",
        "seed",
        "normal_supervision",
        "background_augment",
    ):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    cfg = load_config(args.config, overrides) if args.config else TrainConfig(**overrides)
    if args.lambda_start is not None or args.lambda_warmup is not None:
        s, e, k = cfg.lambda_n_schedule
        if args.lambda_start is not None:
            s = args.lambda_start
        if args.lambda_warmup is not None:
            k = args.lambda_warmup
        cfg = dataclasses.replace(cfg, lambda_n_schedule=(s, e, k))
    dataset = read_dataset(args.data)
    fields, paths = train_loop(dataset, cfg, args.out, quiet=args.quiet)
    print(f"train: wrote {paths['checkpoint']}")
    return 0


def _render_view(fields, camera, samples):
    cfg = RenderConfig(samples_per_ray=samples)
    return render_image(fields, camera, cfg)


def _cmd_render(args):
    fields = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.data)
    if not 0 <= args.view < len(dataset.cameras):
        raise DataError(
            f"view {args.view} out of range (dataset has {len(dataset.cameras)})"
        )
    out = _render_view(fields, dataset.cameras[args.view], args.samples)
    base, ext = os.path.splitext(args.out)

    if args.mode == "color":
        write_png(args.out if ext else args.out + ".png", out.color)
        print(f"render: color -> {args.out}")
        return 0
    if args.mode == "depth":
        pfm = base + ".pfm"
        write_pfm(pfm, out.depth)
        lo, hi = out.depth.min(), out.depth.max()
        preview = (out.depth - lo) / max(hi - lo, 1e-12)
        write_png(base + ".png", np.repeat(preview[..., None], 3, axis=-1))
        print(f"render: depth -> {pfm} (+PNG preview)")
        return 0

    nmap, ok = {
        "normal-trans": (out.normal_trans, out.valid_trans),
        "normal-density": (out.normal_density, out.valid_density),
        "normal-pred": (out.normal_pred, out.valid_pred),
    }[args.mode]
    pfm = base + ".pfm"
    write_pfm(pfm, nmap)
    preview = np.where(ok[..., None], (nmap + 1.0) * 0.5, 0.0)
    write_png(base + ".png", preview)
    print(f"render: {args.mode} -> {pfm} (+PNG preview)")
    return 0


def _cmd_eval(args):
    fields = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.data)
    report = MetricReport()
    for i, camera in enumerate(dataset.cameras):
        out = _render_view(fields, camera, args.samples)
        nmap, ok = {
            "trans": (out.normal_trans, out.valid_trans),
            "density": (out.normal_density, out.valid_density),
            "pred": (out.normal_pred, out.valid_pred),
        }[args.normals]
        view_psnr = psnr(out.color, dataset.images[i])
        mae, fg = mae_degrees(nmap, ok, dataset.normals[i], dataset.alphas[i])
        report.add(i, view_psnr, mae, fg)
    if args.out:
        report.to_csv(args.out)
    print(
        f"eval: views={len(dataset.cameras)} mean_psnr={report.mean_psnr:.4f} dB "
        f"mean_mae={report.mean_mae:.4f} deg (normals={args.normals})"
    )
    return 0


def _probe_query_checkpoint(fields):
    def query(pos):
        b, grad_b = grid_query(fields.density, pos)
        b = b[:, 0]
        grad_b = grad_b[:, 0, :]
        act = dual_activate(b)
        grad_smooth = act.d_smooth_db[:, None] * grad_b
        return b, grad_b, act.sigma_sharp, act.sigma_smooth, grad_smooth

    return query


def _probe_query_analytic(kind):
    field = AnalyticField(kind=kind)

    def query(pos):
        sigma, grad = analytic_query(field, pos)
        # analytic densities are already nonnegative: report them raw and
        # feed both normal estimators the same spatial gradient
        return sigma, grad, sigma, sigma, grad

    return query


def _cmd_probe(args):
    if args.checkpoint:
        query = _probe_query_checkpoint(load_checkpoint(args.checkpoint))
    else:
        query = _probe_query_analytic(args.field)
    direction = args.direction / np.linalg.norm(args.direction)
    axis = args.axis if args.axis is not None else -direction
    axis = axis / np.linalg.norm(axis)

    track, grad_smooth = probe_track(
        query, args.origin, direction, args.near, args.far, args.samples
    )
    n_dens, valid_dens = density_gradient_normal(grad_smooth)
    n_trans, valid_trans = transmittance_gradient_normals(grad_smooth, track.delta)

    lines = ["t,b,sigma_sharp,sigma_smooth,T,w,n_density_dot_axis,"
             "n_trans_dot_axis,angle_density_deg,angle_trans_deg"]
    for i in range(args.samples):
        cells = [
            f"{track.t[i]:.10g}",
            f"{track.b[i]:.10g}",
            f"{track.sigma_sharp[i]:.10g}",
            f"{track.sigma_smooth[i]:.10g}",
            f"{track.T[i]:.10g}",
            f"{track.w[i]:.10g}",
        ]
        for n, valid in ((n_dens, valid_dens), (n_trans, valid_trans)):
            if valid[i]:
                d = float(np.dot(n[i], axis))
                cells.append(f"{d:.10g}")
            else:
                cells.append("")
        for n, valid in ((n_dens, valid_dens), (n_trans, valid_trans)):
            if valid[i]:
                d = np.clip(float(np.dot(n[i], axis)), -1.0, 1.0)
                cells.append(f"{np.degrees(np.arccos(d)):.10g}")
            else:
                cells.append("")
        lines.append(",".join(cells))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    t_final = track.T[-1] * np.exp(-track.sigma_sharp[-1] * track.delta[-1])
    print(
        f"probe: {args.samples} samples, alpha={track.w.sum():.6f}, "
        f"T_final={t_final:.6f}",
        file=sys.stderr,
    )
    return 0


def _cmd_gradcheck(args):
    rows = gc.run_suite(seed=args.seed)
    if args.out:
        gc.write_report(rows, args.out)
    for name, err, tol in rows:
        status = "ok" if err <= tol else "FAIL"
        print(f"{status:4s} {name:36s} max_rel_err={err:.3e} tol={tol:g}")
    gc.check(rows)
    print(f"gradcheck: {len(rows)} checks passed")
    return 0


def _cmd_env_export(args):
    fields = load_checkpoint(args.checkpoint)
    dirs = equirect_dirs(args.width, args.height)
    radiance = env_radiance(fields.env, dirs.reshape(-1, 3))
    img = radiance.reshape(args.height, args.width, 3)
    base, ext = os.path.splitext(args.out)
    pfm = args.out if ext.lower() == ".pfm" else base + ".pfm"
    write_pfm(pfm, img.astype(np.float32))
    write_png(base + ".png", tone_map(np.clip(img, 0.0, 1.0)))
    print(f"env export: {args.width}x{args.height} -> {pfm} (+PNG preview)")
    return 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.run(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
