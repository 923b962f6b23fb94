"""Spherical harmonics, environment radiance, reflection."""

import numpy as np
import pytest

from normalfield import tape as ad
from normalfield.shading import (
    EnvMapSH,
    MaterialSample,
    env_radiance,
    equirect_dirs,
    fit_sh,
    n_sh_coeffs,
    reflect,
    sh_basis,
    sh_basis_grad,
    sh_eval,
    shade,
)


def _fib_dirs(n):
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2 * i + 1) / n
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    s = np.sqrt(np.maximum(0, 1 - z * z))
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


def test_coefficient_counts():
    assert [n_sh_coeffs(d) for d in range(4)] == [1, 4, 9, 16]


def test_basis_dc_term_constant():
    dirs = _fib_dirs(100)
    basis = sh_basis(dirs, 0)
    np.testing.assert_allclose(basis[:, 0], 0.28209479177387814, rtol=1e-14)


def test_basis_orthonormality_monte_carlo():
    # equal-area directions make the sphere average a good quadrature:
    # (4pi/N) sum Y_i Y_j -> delta_ij
    dirs = _fib_dirs(200_000)
    basis = sh_basis(dirs, 3)
    gram = 4 * np.pi * (basis.T @ basis) / dirs.shape[0]
    np.testing.assert_allclose(gram, np.eye(16), atol=2e-3)


def test_basis_degree_prefix_consistency():
    dirs = _fib_dirs(50)
    full = sh_basis(dirs, 3)
    for d in range(3):
        np.testing.assert_array_equal(sh_basis(dirs, d), full[:, : n_sh_coeffs(d)])


def test_basis_gradient_matches_fd():
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(40, 3))
    g = sh_basis_grad(dirs, 3)
    h = 1e-6
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        fd = (sh_basis(dirs + e, 3) - sh_basis(dirs - e, 3)) / (2 * h)
        np.testing.assert_allclose(g[..., axis], fd, rtol=2e-5, atol=1e-8)


def test_sh_eval_matches_basis_contraction_and_backprops():
    rng = np.random.default_rng(1)
    coeffs = rng.normal(size=(16, 3))
    dirs = _fib_dirs(30)
    tape = ad.Tape()
    cv = tape.leaf(coeffs.copy())
    dv = tape.leaf(dirs.copy())
    out = sh_eval(cv, dv, 3)
    np.testing.assert_allclose(out.data, sh_basis(dirs, 3) @ coeffs, rtol=1e-13)
    tape.backward(out.sum())
    assert np.abs(cv.grad).sum() > 0 and np.abs(dv.grad).sum() > 0
    # coefficient adjoint has a closed form: column sums of the basis
    want = np.tile(sh_basis(dirs, 3).sum(axis=0)[:, None], (1, 3))
    np.testing.assert_allclose(cv.grad, want, rtol=1e-12)


def test_env_radiance_strictly_positive():
    rng = np.random.default_rng(2)
    env = EnvMapSH(degree=3, coeffs=rng.normal(0, 3, size=(16, 3)))
    vals = env_radiance(env, _fib_dirs(500))
    assert np.all(vals > 0.0)
    assert np.all(np.isfinite(vals))


def test_env_shape_validation():
    with pytest.raises(ValueError):
        EnvMapSH(degree=3, coeffs=np.zeros((9, 3)))


def test_reflect_is_an_involution_preserving_norm():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(100, 3))
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    n = rng.normal(size=(100, 3))
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    r = reflect(v, n)
    np.testing.assert_allclose(np.linalg.norm(r, axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(reflect(r, n), v, atol=1e-12)
    # mirror normal reflects onto itself
    np.testing.assert_allclose(reflect(n, n), n, atol=1e-12)


def test_reflect_frozen_example():
    r = reflect(np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 0.0]))
    np.testing.assert_allclose(r, [0.0, 0.0, -1.0], atol=1e-15)


def test_shade_composes_diffuse_and_tinted_reflection():
    env = EnvMapSH(degree=0, coeffs=np.zeros((1, 3)))
    mat = MaterialSample(diffuse=np.array([0.25, 0.5, 0.75]), tint=np.zeros(3))
    out = shade(mat, env, np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(out, mat.diffuse)  # zero tint leaves only diffuse
    mat2 = MaterialSample(diffuse=np.zeros(3), tint=np.ones(3))
    out2 = shade(mat2, env, np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(out2, np.log(2.0))  # softplus(0) per channel


def test_fit_sh_exact_for_in_span_function():
    rng = np.random.default_rng(4)
    true_coeffs = rng.normal(size=(16, 3))

    def fn(dirs):
        return sh_basis(dirs, 3) @ true_coeffs

    got = fit_sh(fn, degree=3)
    np.testing.assert_allclose(got, true_coeffs, atol=1e-10)


def test_equirect_dirs_unit_and_poles():
    d = equirect_dirs(64, 32)
    assert d.shape == (32, 64, 3)
    np.testing.assert_allclose(np.linalg.norm(d, axis=-1), 1.0, atol=1e-12)
    assert d[0, :, 2].min() > 0.99  # top row looks up
    assert d[-1, :, 2].max() < -0.99  # bottom row looks down
