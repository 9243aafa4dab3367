# tests/test_se3.py
import numpy as np
import pytest

from core.se3 import (
    Pose,
    Twist,
    apply_twist,
    encode_pose_points,
    exp_so3,
    exp_twist,
    hat,
    interpolate_pose,
    log_pose_error,
    log_so3,
    pose_distance,
    rotation_angle,
)


def random_pose(rng, max_angle=3.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose(exp_so3(axis * rng.uniform(0, max_angle)), rng.uniform(-1, 1, 3))


def test_hat_is_cross_product(rng):
    a, b = rng.normal(size=3), rng.normal(size=3)
    np.testing.assert_allclose(hat(a) @ b, np.cross(a, b), atol=1e-15)


def test_exp_log_roundtrip(rng):
    for _ in range(200):
        xi = Twist(rng.normal(size=3), rng.normal(size=3))
        if np.linalg.norm(xi.angular) > 3.0:
            continue
        T = exp_twist(xi, 1.0)
        back = log_pose_error(Pose.identity(), T)
        np.testing.assert_allclose(back.vector, xi.vector, atol=1e-9)


def test_log_error_carries_current_onto_target(rng):
    for _ in range(50):
        a, b = random_pose(rng), random_pose(rng)
        c = apply_twist(a, log_pose_error(a, b), 1.0)
        dm, drad = pose_distance(c, b)
        assert dm < 1e-9 and drad < 1e-9


def test_left_composition_with_exp_twist_only_closes_at_the_origin():
    a = Pose(exp_so3(np.array([0.0, 0.0, 0.3])), (0.5, 0.2, 0.1))
    b = Pose(exp_so3(np.array([0.2, 0.0, 0.9])), (0.4, -0.1, 0.3))
    xi = log_pose_error(a, b)
    dm, _ = pose_distance(exp_twist(xi, 1.0) @ a, b)
    assert dm > 1e-3
    dm, drad = pose_distance(apply_twist(a, xi, 1.0), b)
    assert dm < 1e-9 and drad < 1e-9
    at_origin = Pose(a.rotation, np.zeros(3))
    moved = Pose(b.rotation, b.translation - a.translation)
    dm, drad = pose_distance(exp_twist(log_pose_error(at_origin, moved), 1.0) @ at_origin, moved)
    assert dm < 1e-9 and drad < 1e-9


def test_apply_twist_rotates_in_place():
    pose = Pose.from_translation((1.0, 2.0, 3.0))
    out = apply_twist(pose, Twist((0.0, 0.0, np.pi / 2), (0.0, 0.0, 0.0)), 1.0)
    np.testing.assert_allclose(out.translation, [1.0, 2.0, 3.0], atol=1e-12)
    assert rotation_angle(out.rotation) == pytest.approx(np.pi / 2)


def test_pure_translation_twist():
    out = apply_twist(Pose.identity(), Twist.zero() + Twist((0, 0, 0), (0.1, 0.0, -0.2)), 2.0)
    np.testing.assert_allclose(out.translation, [0.2, 0.0, -0.4], atol=1e-15)


def test_degenerate_flag_near_pi():
    R = exp_so3(np.array([0.0, 0.0, np.pi - 1e-9]))
    _, degenerate = log_so3(R)
    assert degenerate
    _, flag = log_pose_error(Pose.identity(), Pose(R, np.zeros(3)), with_flag=True)
    assert flag


def test_compose_inverse_identity(rng):
    a = random_pose(rng)
    e = a @ a.inverse()
    np.testing.assert_allclose(e.as_matrix(), np.eye(4), atol=1e-12)
    assert a.is_valid()


def test_from_xyz_rpy_matches_fixed_axes():
    p = Pose.from_xyz_rpy((0, 0, 0), (0.0, 0.0, np.pi / 2))
    np.testing.assert_allclose(p.rotation @ [1, 0, 0], [0, 1, 0], atol=1e-12)


def test_interpolate_endpoints_and_midpoint(rng):
    a, b = random_pose(rng, 2.0), random_pose(rng, 2.0)
    assert pose_distance(interpolate_pose(a, b, 0.0), a) == pytest.approx((0.0, 0.0), abs=1e-9)
    assert pose_distance(interpolate_pose(a, b, 1.0), b) == pytest.approx((0.0, 0.0), abs=1e-9)
    mid = interpolate_pose(a, b, 0.5)
    _, total = pose_distance(a, b)
    assert pose_distance(a, mid)[1] == pytest.approx(total / 2, abs=1e-9)


def test_encoded_points_centre_is_translation(rng):
    pose = random_pose(rng)
    pts = encode_pose_points(pose)
    assert pts.shape == (3, 9)
    np.testing.assert_allclose(pts[:, 8], pose.translation, atol=1e-15)
    # corners sit sqrt(3) from the centre
    np.testing.assert_allclose(np.linalg.norm(pts[:, :8] - pts[:, 8:], axis=0), np.sqrt(3), atol=1e-12)


def test_twist_rejects_non_finite():
    with pytest.raises(ValueError):
        Twist((np.nan, 0, 0), (0, 0, 0))
