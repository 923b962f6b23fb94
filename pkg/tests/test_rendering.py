"""Cameras, ray generation, stratified sampling, compositing, tone map."""

import numpy as np
import pytest

from normalfield.rendering import (
    Camera,
    composite,
    generate_rays,
    look_at,
    pixel_grid,
    ray_box_intersect,
    sample_stratified,
    tone_map,
)


def test_camera_rejects_non_orthonormal_pose():
    pose = np.eye(3, 4)
    pose[0, 1] = 0.5
    with pytest.raises(ValueError):
        Camera(pose=pose, fov_y=np.deg2rad(45), width=8, height=8)


def test_camera_rejects_bad_fov():
    with pytest.raises(ValueError):
        Camera(pose=np.eye(3, 4), fov_y=0.0, width=8, height=8)
    with pytest.raises(ValueError):
        Camera(pose=np.eye(3, 4), fov_y=np.pi, width=8, height=8)


def test_look_at_camera_points_at_target():
    cam = look_at(np.array([0.0, -3.0, 1.0]), np.zeros(3), np.deg2rad(40), 16, 16)
    # center pixel ray passes through the target
    center = np.array([[16 / 2 - 0.5, 16 / 2 - 0.5]])
    o, d = generate_rays(cam, center, jitter=0.5)
    t_closest = -(o[0] @ d[0]) / (d[0] @ d[0])
    closest = o[0] + t_closest * d[0]
    assert np.linalg.norm(closest) < 1e-9
    # rotation block is orthonormal
    r = cam.pose[:, :3]
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)


def test_look_at_degenerate_up_falls_back():
    cam = look_at(np.array([0.0, 0.0, 3.0]), np.zeros(3), np.deg2rad(45), 8, 8)
    r = cam.pose[:, :3]
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)


def test_generate_rays_unit_directions_and_y_down():
    cam = look_at(np.array([2.0, 1.0, 0.5]), np.zeros(3), np.deg2rad(50), 12, 10)
    px = pixel_grid(cam)
    o, d = generate_rays(cam, px, jitter=0.5)
    assert o.shape == (120, 3) and d.shape == (120, 3)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(o - cam.position, 0.0, atol=1e-12)
    # moving down the image (v up by one row) rotates rays toward camera -y
    y_cam = cam.pose[:, 1]
    row0 = d[:12].mean(axis=0)
    row9 = d[-12:].mean(axis=0)
    assert (row9 - row0) @ y_cam < 0.0


def test_focal_length_matches_fov():
    cam = look_at(np.array([0, 3.0, 0]), np.zeros(3), np.deg2rad(60), 32, 32)
    assert cam.focal == pytest.approx((32 / 2) / np.tan(np.deg2rad(30)), rel=1e-12)


def test_ray_box_intersect_cases():
    lo, hi = np.zeros(3), np.ones(3)
    o = np.array([[-1.0, 0.5, 0.5], [0.5, 0.5, 0.5], [-1.0, 5.0, 0.5]])
    d = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    near, far, hit = ray_box_intersect(o, d, lo, hi)
    assert hit[0] and near[0] == pytest.approx(1.0) and far[0] == pytest.approx(2.0)
    assert hit[1] and near[1] == pytest.approx(0.0)  # origin inside: near clamps to 0
    assert far[1] == pytest.approx(0.5)
    assert not hit[2]  # parallel ray outside the slab


def test_sample_stratified_deterministic_centers():
    t, delta = sample_stratified(1.0, 3.0, 4)
    np.testing.assert_allclose(t, [1.25, 1.75, 2.25, 2.75])
    np.testing.assert_allclose(delta, 0.5)


def test_sample_stratified_jittered_stays_in_bins():
    rng = np.random.default_rng(0)
    u = rng.uniform(0, 1, size=(5, 8))
    t, delta = sample_stratified(2.0, 4.0, 8, u=u)
    width = 0.25
    edges = 2.0 + width * np.arange(8)
    assert np.all(t >= edges) and np.all(t < edges + width)
    # deltas are forward differences with the final one set to the bin width
    np.testing.assert_allclose(delta[:, :-1], t[:, 1:] - t[:, :-1], atol=1e-15)
    np.testing.assert_allclose(delta[:, -1], width)
    assert np.all(delta > 0)


def test_sample_stratified_vector_near_far():
    near = np.array([0.0, 1.0])
    far = np.array([1.0, 5.0])
    t, delta = sample_stratified(near, far, 4)
    assert t.shape == (2, 4)
    np.testing.assert_allclose(t[0], [0.125, 0.375, 0.625, 0.875])
    np.testing.assert_allclose(delta[1], 1.0)


def test_sample_stratified_validates_range():
    with pytest.raises(ValueError):
        sample_stratified(2.0, 1.0, 4)
    with pytest.raises(ValueError):
        sample_stratified(-1.0, 1.0, 4)


def test_composite_two_sample_frozen_example():
    sigma = np.array([[0.5, 1.0]])
    delta = np.ones((1, 2))
    colors = np.array([[[1.0, 0, 0], [0, 1.0, 0]]])
    lin, alpha, T, w = composite(sigma, delta, colors, np.zeros(3))
    np.testing.assert_allclose(
        lin[0], [0.3934693402873666, 0.38340049956420363, 0.0], rtol=1e-14
    )
    assert alpha[0] == pytest.approx(1.0 - np.exp(-1.5), rel=1e-14)
    np.testing.assert_allclose(T[0], [1.0, np.exp(-0.5)], rtol=1e-14)


def test_composite_partition_of_unity_random_rays():
    rng = np.random.default_rng(1)
    sigma = rng.uniform(0.0, 5.0, size=(500, 16))
    delta = rng.uniform(0.01, 0.2, size=(500, 16))
    colors = rng.uniform(0, 1, size=(500, 16, 3))
    _, alpha, _, w = composite(sigma, delta, colors, np.ones(3))
    t_final = 1.0 - alpha
    np.testing.assert_allclose(w.sum(axis=1) + t_final, 1.0, atol=1e-12)


def test_composite_opaque_limit():
    sigma = np.array([[50.0]])
    delta = np.ones((1, 1))
    colors = np.array([[[0.2, 0.4, 0.6]]])
    lin, alpha, _, _ = composite(sigma, delta, colors, np.ones(3))
    np.testing.assert_allclose(lin[0], [0.2, 0.4, 0.6], atol=1e-20)
    assert alpha[0] == pytest.approx(1.0, abs=1e-20)


def test_composite_background_passthrough_when_empty():
    lin, alpha, _, _ = composite(
        np.zeros((1, 4)), np.ones((1, 4)), np.zeros((1, 4, 3)), np.array([1.0, 0.5, 0.25])
    )
    np.testing.assert_allclose(lin[0], [1.0, 0.5, 0.25], atol=1e-15)
    assert alpha[0] == 0.0


def test_composite_rejects_non_finite_density():
    with pytest.raises(ValueError, match="sample index 2"):
        composite(
            np.array([[0.1, 0.2, np.nan, 0.3]]),
            np.ones((1, 4)),
            np.zeros((1, 4, 3)),
            np.zeros(3),
        )


def test_tone_map_endpoints_knee_and_frozen_value():
    assert tone_map(0.0) == pytest.approx(0.0)
    assert tone_map(1.0) == pytest.approx(1.0, abs=1e-12)
    assert tone_map(0.5) == pytest.approx(1.055 * 0.5 ** (1 / 2.4) - 0.055, rel=1e-14)
    # continuity at the linear/power knee
    knee = 0.0031308
    assert abs(tone_map(knee - 1e-9) - tone_map(knee + 1e-9)) < 1e-6
    # monotone on a sweep
    u = np.linspace(0, 1, 1001)
    assert np.all(np.diff(tone_map(u)) >= 0)


def test_tone_map_clamps_out_of_range_input():
    assert tone_map(2.0) == pytest.approx(1.0, abs=1e-12)
    assert tone_map(-1.0) == pytest.approx(0.0)


def test_tone_unmap_inverts_tone_map():
    from normalfield.rendering import tone_unmap

    u = np.linspace(0.0, 1.0, 1001)
    np.testing.assert_allclose(tone_unmap(tone_map(u)), u, atol=1e-12)
    s = np.linspace(0.0, 1.0, 1001)
    np.testing.assert_allclose(tone_map(tone_unmap(s)), s, atol=1e-12)
