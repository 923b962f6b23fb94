"""Normal estimators: density-gradient, transmittance-gradient, predicted."""

import numpy as np
import pytest

from normalfield.grids import AnalyticField, analytic_query
from normalfield.normals import (
    composite_normal_map,
    density_gradient_normal,
    predicted_normal,
    transmittance_gradient_normals,
)
from normalfield.rendering import sample_stratified


def _slab_track(origin, direction, n=256, far=3.0, amplitude=4.0, width=0.1):
    fld = AnalyticField(kind="gaussian_slab", amplitude=amplitude, width=width)
    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    t, delta = sample_stratified(0.0, far, n)
    pos = np.asarray(origin) + t[:, None] * direction
    sigma, grad = analytic_query(fld, pos)
    return t, delta, sigma, grad, direction


def test_density_gradient_normal_unit_and_direction():
    g = np.array([[2.0, 0.0, 0.0], [0.0, -3.0, 0.0]])
    n, valid = density_gradient_normal(g)
    assert valid.all()
    np.testing.assert_allclose(n[0], [-1.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(n[1], [0.0, 1.0, 0.0], atol=1e-12)


def test_density_gradient_normal_null_below_threshold():
    n, valid = density_gradient_normal(np.array([[1e-13, 0.0, 0.0]]))
    assert not valid[0]
    np.testing.assert_array_equal(n[0], 0.0)


def test_density_normal_flips_across_slab_peak():
    t, delta, sigma, grad, d = _slab_track([-1.5, 0.2, 0.1], [1.0, 0.0, 0.0])
    n, valid = density_gradient_normal(grad)
    dots = n @ np.array([-1.0, 0.0, 0.0])
    w_mask = sigma > 0.01 * sigma.max()
    signs = np.sign(dots[valid & w_mask])
    assert (np.diff(signs) != 0).sum() >= 1


def test_trans_normal_consistent_across_slab_peak():
    t, delta, sigma, grad, d = _slab_track([-1.5, 0.2, 0.1], [1.0, 0.0, 0.0])
    n, valid = transmittance_gradient_normals(grad, delta)
    # weights of the optical quadrature select the visible samples
    s = sigma * delta
    prefix = np.zeros_like(s)
    np.cumsum(s[:-1], out=prefix[1:])
    w = np.exp(-prefix) * (1 - np.exp(-s))
    sel = (w > 0.01 * w.max()) & valid
    dots = (n @ np.array([-1.0, 0.0, 0.0]))[sel]
    assert dots.min() > 0.999


def test_trans_normal_accumulation_telescopes_to_density_difference():
    # directional component of the accumulated gradient equals the change
    # of the field along the ray, so it cannot change sign past the peak
    fld = AnalyticField(kind="gaussian_slab", amplitude=4.0, width=0.1)
    d = np.array([1.0, 0.0, 0.0])
    origin = np.array([-1.5, 0.0, 0.0])
    t, delta = sample_stratified(0.0, 3.0, 4096)
    pos = origin + t[:, None] * d
    _, grad = analytic_query(fld, pos)
    acc = np.cumsum(grad * delta[:, None], axis=0)
    acc = np.vstack([np.zeros(3), acc[:-1]])  # exclusive prefix
    along = acc @ d
    # the exclusive midpoint sum through sample i approximates the integral
    # of the directional derivative up to the left bin edge of sample i
    edges = t - 0.5 * delta
    sigma_edge, _ = analytic_query(fld, origin + edges[:, None] * d)
    want = sigma_edge - sigma_edge[0]
    np.testing.assert_allclose(along, want, atol=1e-3)


def test_trans_normal_first_sample_is_null():
    t, delta, sigma, grad, d = _slab_track([-1.5, 0.0, 0.0], [1.0, 0.0, 0.0])
    _, valid = transmittance_gradient_normals(grad, delta)
    assert not valid[0]  # empty prefix has no accumulated gradient


def test_trans_normal_batch_shape():
    rng = np.random.default_rng(0)
    grad = rng.normal(size=(7, 12, 3))
    delta = rng.uniform(0.01, 0.1, size=(7, 12))
    n, valid = transmittance_gradient_normals(grad, delta)
    assert n.shape == (7, 12, 3)
    assert valid.shape == (7, 12)
    norms = np.linalg.norm(n[valid], axis=-1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-9)


def test_predicted_normal_soft_normalization():
    v = np.array([[3.0, 0.0, 4.0]])
    n = predicted_normal(v)
    np.testing.assert_allclose(n[0], [0.6, 0.0, 0.8], atol=1e-9)
    # zero input maps to zero, not NaN
    z = predicted_normal(np.zeros((1, 3)))
    np.testing.assert_array_equal(z, 0.0)


def test_composite_normal_map_weighted_average():
    w = np.array([[0.6, 0.3]])
    normals = np.array([[[1.0, 0, 0], [0, 1.0, 0]]])
    nmap, ok = composite_normal_map(w, normals)
    assert ok[0]
    want = np.array([0.6, 0.3, 0.0])
    np.testing.assert_allclose(nmap[0], want / np.linalg.norm(want), atol=1e-12)


def test_composite_normal_map_nulls_transparent_pixels():
    w = np.array([[0.2, 0.1]])  # total weight below the coverage threshold
    normals = np.tile(np.array([1.0, 0, 0]), (1, 2, 1))
    nmap, ok = composite_normal_map(w, normals)
    assert not ok[0]
    np.testing.assert_array_equal(nmap[0], 0.0)


def test_composite_normal_map_respects_validity_mask():
    w = np.array([[0.5, 0.4]])
    normals = np.array([[[1.0, 0, 0], [-1.0, 0, 0]]])
    valid = np.array([[True, False]])
    nmap, ok = composite_normal_map(w, normals, valid)
    assert ok[0]
    np.testing.assert_allclose(nmap[0], [1.0, 0.0, 0.0], atol=1e-12)
