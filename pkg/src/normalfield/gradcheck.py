"""Finite-difference verification of every differentiable primitive.

Each case builds a scalar function of one or more parameter blocks,
computes analytic gradients with the tape, and compares against central
differences.  The composite primitive gets an extra closed-form check of
its adjoint at a much tighter tolerance.
"""

import numpy as np

from . import tape as ad
from .errors import NumericalError
from .fields import SceneFields, init_fields
from .grids import VoxelGrid, interp_coeffs
from .rendering import forward_batch, sample_stratified, tone_map_var
from .shading import sh_eval
from .training import color_loss, predicted_normal_loss

DEFAULT_TOL = 1e-4


def _run_case(name, params, build, tol=DEFAULT_TOL, max_coords=200):
    """build(tape, leaves) -> scalar Var; returns (name, max_rel_err, tol)."""

    def f(p):
        tape = ad.Tape()
        leaves = {k: tape.leaf(v) for k, v in p.items()}
        return float(build(tape, leaves).data)

    tape = ad.Tape()
    leaves = {k: tape.leaf(v) for k, v in params.items()}
    out = build(tape, leaves)
    tape.backward(out)
    grads = {k: leaves[k].grad for k in params}
    err = ad.fd_check(f, params, grads, max_coords=max_coords)
    return (name, err, tol)


def _composite_adjoint_case():
    """Tape adjoint of the compositing weights vs a brute-force derivation.

    w_k = T_k (1 - e^{-s_k}) gives dw_k/ds_i = -w_k for i < k and
    T_k e^{-s_k} at i = k; the brute-force double loop below evaluates
    that directly and must agree with the tape to roundoff.
    """
    rng = np.random.default_rng(3)
    s_val = rng.uniform(0.01, 1.2, size=(4, 9))
    g = rng.normal(size=(4, 9))

    tape = ad.Tape()
    s = tape.leaf(s_val.copy())
    w = ad.composite(s)
    loss = (w * g).sum()
    tape.backward(loss)
    got = s.grad

    prefix = np.zeros_like(s_val)
    np.cumsum(s_val[:, :-1], axis=1, out=prefix[:, 1:])
    trans = np.exp(-prefix)
    wv = trans * (1.0 - np.exp(-s_val))
    want = np.zeros_like(s_val)
    n = s_val.shape[1]
    for r in range(s_val.shape[0]):
        for i in range(n):
            acc = g[r, i] * trans[r, i] * np.exp(-s_val[r, i])
            for k in range(i + 1, n):
                acc -= g[r, k] * wv[r, k]
            want[r, i] = acc
    err = np.abs(got - want).max() / max(np.abs(want).max(), 1e-12)
    return ("composite_adjoint_closed_form", float(err), 1e-10)


def _toy_problem(seed=0, n_rays=3, n_samples=12, res=8):
    """A tiny end-to-end scene: fields + rays + GT colors for loss cases."""
    rng = np.random.default_rng(seed)
    bbox = np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0])
    base = init_fields(res, bbox[0], bbox[1], sh_degree=2, seed=seed)
    # push some density into the box so the losses see real weights
    base.density.data[...] = rng.uniform(-1.0, 2.5, size=base.density.data.shape)

    origins = np.tile(np.array([0.0, 0.0, 2.5]), (n_rays, 1))
    dirs = np.stack(
        [rng.uniform(-0.25, 0.25, n_rays), rng.uniform(-0.25, 0.25, n_rays),
         -np.ones(n_rays)],
        axis=-1,
    )
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    t, delta = sample_stratified(1.3, 3.7, n_samples)
    t = np.tile(t, (n_rays, 1))
    delta = np.tile(delta, (n_rays, 1))
    gt = rng.uniform(0.0, 1.0, size=(n_rays, 3))

    params = {
        "density": base.density.data.reshape(-1, 1).copy(),
        "normal": base.normal.data.reshape(-1, 3).copy(),
        "diffuse": base.diffuse.data.reshape(-1, 3).copy(),
        "tint": base.tint.data.reshape(-1, 3).copy(),
        "env_sh": base.env.coeffs.copy() + rng.normal(0, 0.3, base.env.coeffs.shape),
    }

    def fields_from(p):
        res3 = base.density.resolution

        def grid(name, c, mode="clamp"):
            return VoxelGrid(
                data=p[name].reshape(res3 + (c,)),
                bbox_min=bbox[0],
                bbox_max=bbox[1],
                outside_mode=mode,
            )

        env = type(base.env)(degree=base.env.degree, coeffs=p["env_sh"])
        return SceneFields(
            density=grid("density", 1, "empty"),
            normal=grid("normal", 3),
            diffuse=grid("diffuse", 3),
            tint=grid("tint", 3),
            env=env,
        )

    return params, fields_from, origins, dirs, t, delta, gt


def _total_loss_case(lambda_n, seed=0):
    """Full pipeline gradient at a blend weight.

    The one-directional term runs through stop_gradient, so its finite
    difference reference freezes the stopped quantities (weights and
    target normals) at the base point; the tape gradient of the real loss
    must match that frozen function's derivative exactly when the
    stop_gradient barriers sit in the right places.
    """
    params, fields_from, origins, dirs, t, delta, gt = _toy_problem(seed)

    tape = ad.Tape()
    fb = forward_batch(
        tape, fields_from(params), origins, dirs, t, delta, (1.0, 1.0, 1.0)
    )
    loss = color_loss(fb.srgb, gt) + 0.05 * predicted_normal_loss(
        fb.w, fb.n_pred, fb.n_trans, fb.valid_trans, lambda_n
    )
    tape.backward(loss)
    grads = {
        "density": fb.leaves.density.grad,
        "normal": fb.leaves.normal.grad,
        "diffuse": fb.leaves.diffuse.grad,
        "tint": fb.leaves.tint.grad,
        "env_sh": fb.leaves.env.grad,
    }

    w0 = fb.w.data.copy()
    n0 = fb.n_trans.data.copy()
    valid0 = fb.valid_trans.copy()
    mask = valid0.astype(np.float64)
    n_rays = w0.shape[0]

    def f(p):
        tp = ad.Tape()
        b = forward_batch(tp, fields_from(p), origins, dirs, t, delta, (1.0, 1.0, 1.0))
        w, n_pred, n_sup = b.w.data, b.n_pred.data, b.n_trans.data
        sq_bi = ((n_pred - n_sup) ** 2).sum(axis=-1) * mask
        sq_uni = ((n_pred - n0) ** 2).sum(axis=-1) * mask
        term_bi = (w * sq_bi).sum() / n_rays
        term_uni = (w0 * sq_uni).sum() / n_rays
        ln = lambda_n * term_bi + (1.0 - lambda_n) * term_uni
        lc = ((b.srgb.data - gt) ** 2).sum() / n_rays
        return lc + 0.05 * ln

    base = f(params)
    if abs(base - float(loss.data)) > 1e-12 * max(1.0, abs(base)):
        raise NumericalError(
            f"loss forward mismatch at lambda={lambda_n}: {base} vs {loss.data}"
        )
    err = ad.fd_check(f, params, grads, max_coords=60)
    return (f"total_loss_lambda_{lambda_n:g}", err, DEFAULT_TOL)


def run_suite(seed=0):
    """All verification rows: (name, max_rel_err, tolerance)."""
    rng = np.random.default_rng(seed)
    rows = []

    x0 = rng.normal(size=(5, 3))
    rows.append(
        _run_case(
            "quadratic_exact",
            {"x": x0.copy()},
            lambda tape, lv: (lv["x"] * lv["x"]).sum(),
            tol=1e-8,
        )
    )

    a0 = rng.uniform(0.5, 2.0, size=(4, 3))
    b0 = rng.uniform(0.5, 2.0, size=(4, 3))
    rows.append(
        _run_case(
            "add_mul_div",
            {"a": a0.copy(), "b": b0.copy()},
            lambda tape, lv: ((lv["a"] * lv["b"] + lv["a"]) / lv["b"]).sum(),
        )
    )
    rows.append(
        _run_case(
            "exp",
            {"x": rng.uniform(-2, 2, (6,)).copy()},
            lambda tape, lv: tape.exp(lv["x"]).sum(),
        )
    )
    rows.append(
        _run_case(
            "ln1p_exp",
            {"x": rng.uniform(-3, 3, (6,)).copy()},
            lambda tape, lv: tape.ln1p_exp(lv["x"]).sum(),
        )
    )
    rows.append(
        _run_case(
            "sigmoid",
            {"x": rng.uniform(-3, 3, (6,)).copy()},
            lambda tape, lv: tape.sigmoid(lv["x"]).sum(),
        )
    )
    rows.append(
        _run_case(
            "power",
            {"x": rng.uniform(0.2, 1.5, (6,)).copy()},
            lambda tape, lv: tape.power(lv["x"], 1.0 / 2.4).sum(),
        )
    )
    rows.append(
        _run_case(
            "dot",
            {"a": rng.normal(size=(4, 3)).copy(), "b": rng.normal(size=(4, 3)).copy()},
            lambda tape, lv: ad.dot(lv["a"], lv["b"]).sum(),
        )
    )
    nproj = rng.normal(size=(5, 3))
    rows.append(
        _run_case(
            "normalize_eps",
            {"v": rng.normal(size=(5, 3)).copy()},
            lambda tape, lv: (ad.normalize_eps(lv["v"]) * nproj).sum(),
        )
    )
    rows.append(
        _run_case(
            "clamp",
            {"x": rng.uniform(0.1, 0.9, (8,)).copy()},
            lambda tape, lv: (tape.clamp(lv["x"], 0.0, 1.0) ** 2.0).sum(),
        )
    )
    rows.append(
        _run_case(
            "cumsum_exclusive",
            {"x": rng.normal(size=(3, 7)).copy()},
            lambda tape, lv: (
                ad.cumsum_exclusive(lv["x"], axis=1) * np.arange(21).reshape(3, 7)
            ).sum(),
        )
    )
    rows.append(
        _run_case(
            "tone_map",
            {"x": rng.uniform(0.05, 0.95, (9,)).copy()},
            lambda tape, lv: tone_map_var(lv["x"]).sum(),
        )
    )

    proj = rng.normal(size=(6, 3))
    dirs0 = rng.normal(size=(6, 3))
    dirs0 /= np.linalg.norm(dirs0, axis=-1, keepdims=True)
    rows.append(
        _run_case(
            "sh_eval",
            {"coeffs": rng.normal(size=(16, 3)).copy(), "dirs": dirs0.copy()},
            lambda tape, lv: (sh_eval(lv["coeffs"], lv["dirs"], 3) * proj).sum(),
        )
    )

    grid = VoxelGrid(
        data=rng.normal(size=(3, 3, 3, 2)),
        bbox_min=(-1, -1, -1),
        bbox_max=(1, 1, 1),
    )
    pts = rng.uniform(-0.95, 0.95, size=(7, 3))
    co = interp_coeffs(grid, pts)
    pg = rng.normal(size=(7, 2))
    pgg = rng.normal(size=(7, 2, 3))
    rows.append(
        _run_case(
            "trilinear_gather",
            {"g": grid.data.reshape(-1, 2).copy()},
            lambda tape, lv: (tape.gather(lv["g"], co) * pg).sum(),
        )
    )
    rows.append(
        _run_case(
            "trilinear_gather_spatial",
            {"g": grid.data.reshape(-1, 2).copy()},
            lambda tape, lv: (tape.gather_grad(lv["g"], co) * pgg).sum(),
        )
    )

    cw = rng.normal(size=(3, 8))
    rows.append(
        _run_case(
            "composite",
            {"s": rng.uniform(0.02, 1.4, size=(3, 8)).copy()},
            lambda tape, lv: (ad.composite(lv["s"]) * cw).sum(),
        )
    )
    rows.append(_composite_adjoint_case())

    # losses on a 2-sample ray: color w.r.t. density, normal loss w.r.t. normals
    params, fields_from, origins, dirs, t, delta, gt = _toy_problem(
        seed=1, n_rays=2, n_samples=2
    )

    def color_only(p):
        tape = ad.Tape()
        fb = forward_batch(
            tape, fields_from({**params, **p}), origins, dirs, t, delta, (1, 1, 1)
        )
        return tape, fb, color_loss(fb.srgb, gt)

    tape, fb, loss = color_only(params)
    tape.backward(loss)
    err = ad.fd_check(
        lambda p: float(color_only(p)[2].data),
        {"density": params["density"]},
        {"density": fb.leaves.density.grad},
        max_coords=80,
    )
    rows.append(("color_loss_wrt_density", err, DEFAULT_TOL))

    def nloss_only(p):
        tape = ad.Tape()
        fb = forward_batch(
            tape, fields_from({**params, **p}), origins, dirs, t, delta, (1, 1, 1)
        )
        return tape, fb, predicted_normal_loss(
            fb.w, fb.n_pred, fb.n_trans, fb.valid_trans, 1.0
        )

    tape, fb, loss = nloss_only(params)
    tape.backward(loss)
    err = ad.fd_check(
        lambda p: float(nloss_only(p)[2].data),
        {"normal": params["normal"]},
        {"normal": fb.leaves.normal.grad},
        max_coords=80,
    )
    rows.append(("normal_loss_lambda1_wrt_normals", err, DEFAULT_TOL))

    for lam in (0.0, 0.5, 1.0):
        rows.append(_total_loss_case(lam, seed=2))

    return rows


def write_report(rows, path):
    with open(path, "w") as f:
        f.write("op,max_rel_err,tolerance\n")
        for name, err, tol in rows:
            f.write(f"{name},{err:.6g},{tol:g}\n")


def check(rows):
    bad = [(n, e, t) for n, e, t in rows if not (e <= t)]
    if bad:
        detail = "; ".join(f"{n}: {e:.3g} > {t:g}" for n, e, t in bad)
        raise NumericalError(f"gradient verification failed: {detail}")
