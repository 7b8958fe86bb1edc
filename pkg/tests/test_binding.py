import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from splatsim.binding import RigidFit, apply_binding, build_binding, fit_rigid, kabsch, kernel_weights
from splatsim.errors import BindingError, ValidationError
from splatsim.gaussians import GaussianScene, eval_sh, quat_to_matrix


def _scene(rng, n=40, degree=2, object_ids=None):
    return GaussianScene(rng.uniform(0, 1, (n, 3)), rng.normal(size=(n, 4)), np.exp(rng.uniform(-4, -2, (n, 3))),
                         rng.uniform(0.1, 0.9, n), rng.normal(scale=0.3, size=(n, (degree + 1) ** 2, 3)),
                         object_ids)  # fmt: skip


def _rigid(pts, R, t):
    return pts @ R.T + t


def test_coincident_single_neighbour_gets_full_weight():
    b = build_binding([[0.2, 0.3, 0.4]], [[1.0, 1.0, 1.0], [0.2, 0.3, 0.4]], k=1, bandwidth=0.1)
    assert b.neighbors[0, 0] == 1 and b.weights[0, 0] == 1.0


def test_symmetric_pair_gets_half_each():
    b = build_binding([[0.0, 0.0, 0.0]], [[-0.1, 0, 0], [0.1, 0, 0]], k=2, bandwidth=0.05)
    np.testing.assert_allclose(b.weights[0], [0.5, 0.5], rtol=1e-15)


def test_weights_follow_gaussian_kernel(rng):
    d = np.sort(rng.uniform(0, 1, (5, 8)), axis=1)
    w = kernel_weights(d, 0.3)
    ref = np.exp(-(d**2) / (2 * 0.09))
    np.testing.assert_allclose(w, ref / ref.sum(axis=1, keepdims=True), rtol=1e-12)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
    # far-away neighbours do not underflow to 0/0
    assert np.isfinite(kernel_weights(d + 1e3, 1e-3)).all()


def test_binding_independent_of_storage_order(rng):
    rest = rng.uniform(0, 1, (60, 3))
    centers = rng.uniform(0, 1, (25, 3))
    perm = rng.permutation(60)
    a = build_binding(centers, rest, k=6, bandwidth=0.2)
    b = build_binding(centers, rest[perm], k=6, bandwidth=0.2)
    # map b's neighbour indices back to a's storage
    np.testing.assert_array_equal(perm[b.neighbors], a.neighbors)
    np.testing.assert_array_equal(b.weights, a.weights)


def test_binding_never_crosses_objects(rng):
    rest = rng.uniform(0, 1, (50, 3))
    d_obj = (rest[:, 0] > 0.5).astype(int)
    centers = rng.uniform(0, 1, (30, 3))
    g_obj = rng.integers(0, 2, 30)
    b = build_binding(centers, rest, k=5, bandwidth=0.2, gaussian_objects=g_obj, driving_objects=d_obj)
    assert (d_obj[b.neighbors] == g_obj[:, None]).all()
    with pytest.raises(BindingError, match="object 2"):
        build_binding(centers, rest, gaussian_objects=np.full(30, 2), driving_objects=d_obj)
    s = build_binding(centers, rest, gaussian_objects=np.full(30, 2), driving_objects=d_obj, static_objects=[2])
    assert s.static.all() and (s.weights == 0).all()
    with pytest.raises(ValidationError):
        build_binding(centers, rest, k=0)


def test_fit_identity_and_translation(rng):
    rest = rng.uniform(0, 1, (30, 3))
    b = build_binding(rng.uniform(0, 1, (10, 3)), rest, k=6, bandwidth=0.3)
    fits = fit_rigid(b, rest)
    assert fits.identity.all() and (fits.rotation == np.eye(3)).all() and (fits.translation == 0).all()
    fits = fit_rigid(b, rest + [1.0, 2.0, 3.0])
    np.testing.assert_allclose(fits.rotation, np.broadcast_to(np.eye(3), fits.rotation.shape), atol=1e-12)
    np.testing.assert_allclose(fits.translation, np.broadcast_to([1.0, 2.0, 3.0], (10, 3)), atol=1e-12)


def test_fit_recovers_37_degrees_about_z(rng):
    rest = rng.uniform(0, 1, (30, 3))
    R = oracles.axis_angle_matrix([0, 0, 1], math.radians(37))
    b = build_binding(rng.uniform(0, 1, (10, 3)), rest, k=6, bandwidth=0.3)
    fits = fit_rigid(b, _rigid(rest, R, 0))
    np.testing.assert_allclose(fits.rotation, np.broadcast_to(R, fits.rotation.shape), atol=1e-9)
    np.testing.assert_allclose(fits.translation, 0, atol=1e-9)


@given(seed=st.integers(0, 2**32 - 1))
def test_kabsch_matches_horn_quaternion_fit(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(7, 3))
    w = rng.uniform(0.1, 1.0, 7)
    w /= w.sum()
    q = _rigid(p, oracles.random_rotation(rng), rng.normal(size=3)) + rng.normal(scale=0.05, size=(7, 3))
    R, t, ok = kabsch(p, q, w)
    R_ref, t_ref = oracles.horn_fit(p, q, w)
    assert ok
    np.testing.assert_allclose(R, R_ref, atol=1e-8)
    np.testing.assert_allclose(t, t_ref, atol=1e-8)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)


def test_reflection_is_corrected(rng):
    p = rng.normal(size=(8, 3))
    R, _, ok = kabsch(p, p * [1, 1, -1], np.full(8, 1 / 8))
    assert ok and np.linalg.det(R) == pytest.approx(1.0)


def test_collinear_neighbours_fall_back_to_translation():
    p = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]])
    q = _rigid(p, oracles.axis_angle_matrix([0, 0, 1], 0.5), [0.1, 0.2, 0.3])
    R, t, ok = kabsch(p, q, np.full(3, 1 / 3))
    assert not ok and (R == np.eye(3)).all()
    np.testing.assert_allclose(t, q.mean(axis=0) - p.mean(axis=0), atol=1e-15)


def test_global_rigid_motion_is_reproduced(rng):
    scene = _scene(rng, n=50)
    rest = rng.uniform(-0.1, 1.1, (120, 3))
    b = build_binding(scene.centers, rest, k=8, bandwidth=0.1)
    R, t = oracles.random_rotation(rng), rng.normal(size=3)
    moved = apply_binding(scene, b, fit_rigid(b, _rigid(rest, R, t)))
    np.testing.assert_allclose(moved.centers, _rigid(scene.centers, R, t), atol=1e-9)
    np.testing.assert_allclose(moved.covariances(), R @ scene.covariances() @ R.T, atol=1e-9)
    assert np.linalg.eigvalsh(moved.covariances()).min() > 0
    # SH follow the rotation: colour seen along R d equals the original along d
    d = np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])
    for i in range(5):
        np.testing.assert_allclose(eval_sh(moved.sh[i], R @ d), eval_sh(scene.sh[i], d), atol=1e-9)


def test_pure_translation_keeps_covariance_and_sh(rng):
    scene = _scene(rng)
    rest = rng.uniform(0, 1, (80, 3))
    b = build_binding(scene.centers, rest, k=8, bandwidth=0.2)
    moved = apply_binding(scene, b, fit_rigid(b, rest + [0.5, 0, -0.25]))
    np.testing.assert_allclose(moved.covariances(), scene.covariances(), atol=1e-15)
    np.testing.assert_allclose(moved.sh, scene.sh, atol=1e-12)
    np.testing.assert_allclose(moved.centers, scene.centers + [0.5, 0, -0.25], atol=1e-12)


def test_identity_is_bit_exact_and_idempotent(rng):
    scene = _scene(rng)
    rest = rng.uniform(0, 1, (80, 3))
    b = build_binding(scene.centers, rest, k=8, bandwidth=0.2)
    same = apply_binding(scene, b, fit_rigid(b, rest))
    for name in ("centers", "rotations", "scales", "opacities", "sh"):
        assert np.array_equal(getattr(same, name), getattr(scene, name))
    again = apply_binding(same, b, fit_rigid(b, rest))
    assert np.array_equal(again.rotations, scene.rotations)


def test_only_moved_object_changes(rng):
    ids = np.r_[np.zeros(20, int), np.ones(20, int)]
    scene = _scene(rng, object_ids=ids)
    scene.centers[20:] += 2.0
    rest = np.r_[rng.uniform(0, 1, (40, 3)), rng.uniform(2, 3, (40, 3))]
    d_obj = np.r_[np.zeros(40, int), np.ones(40, int)]
    b = build_binding(scene.centers, rest, k=6, bandwidth=0.2, gaussian_objects=ids, driving_objects=d_obj)
    cur = rest.copy()
    cur[:40] = _rigid(cur[:40], oracles.axis_angle_matrix([1, 0, 0], 0.3), [0, 0, 0.1])
    moved = apply_binding(scene, b, fit_rigid(b, cur))
    assert np.array_equal(moved.centers[20:], scene.centers[20:])
    assert not np.allclose(moved.centers[:20], scene.centers[:20])


def test_stretch_mode_applies_deformation(rng):
    scene = _scene(rng, n=10)
    rest = rng.uniform(0, 1, (40, 3))
    b = build_binding(scene.centers, rest, k=6, bandwidth=0.2)
    F = np.diag([1.2, 1.0, 0.9])
    cur = rest @ F.T
    moved = apply_binding(scene, b, fit_rigid(b, cur), mode="stretch", deformation=np.tile(F, (40, 1, 1)))
    np.testing.assert_allclose(moved.covariances(), F @ scene.covariances() @ F.T, rtol=1e-9, atol=1e-15)
    with pytest.raises(ValidationError):
        apply_binding(scene, b, fit_rigid(b, cur), mode="stretch")
    with pytest.raises(ValidationError):
        apply_binding(scene, b, fit_rigid(b, cur), mode="warp")


def test_fit_shape_errors(rng):
    b = build_binding(rng.uniform(size=(3, 3)), rng.uniform(size=(10, 3)))
    with pytest.raises(ValidationError):
        fit_rigid(b, np.zeros((9, 3)))
    with pytest.raises(ValidationError):
        apply_binding(_scene(rng, n=4), b, RigidFit.identity_fits(4))


def test_rotation_quaternion_matches_fit(rng):
    scene = _scene(rng, n=5)
    rest = rng.uniform(0, 1, (30, 3))
    b = build_binding(scene.centers, rest, k=8, bandwidth=0.3)
    R = oracles.axis_angle_matrix([1, 1, 0], 1.1)
    moved = apply_binding(scene, b, fit_rigid(b, _rigid(rest, R, 0)))
    for i in range(5):
        np.testing.assert_allclose(quat_to_matrix(moved.rotations[i]), R @ quat_to_matrix(scene.rotations[i]), atol=1e-9)
