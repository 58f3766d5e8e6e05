import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachsim.spatial import (
    Pose,
    PoseError,
    integrate_pose,
    matrix_to_quat,
    pose_error,
    quat_from_rotvec,
    quat_log,
    quat_normalize,
    quat_to_matrix,
    translational_distance,
)


def random_pose(rng):
    q = quat_normalize(rng.normal(size=4))
    return Pose(rng.normal(size=3), q)


def test_pose_error_identity_is_zero():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = random_pose(rng)
        e = pose_error(x, x)
        assert np.allclose(e.linear, 0.0, atol=1e-12)
        assert np.allclose(e.angular, 0.0, atol=1e-12)


def test_pose_error_pure_translation():
    x = Pose(np.array([1.0, 0.0, 0.0]))
    x_d = Pose(np.zeros(3))
    e = pose_error(x, x_d)
    assert np.allclose(e.linear, [1.0, 0.0, 0.0])
    assert np.allclose(e.angular, 0.0)


def _matrix_log_oracle(R):
    # independent rotation-matrix logarithm via eigen decomposition of the
    # skew part and the trace angle formula
    angle = np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0))
    if angle < 1e-12:
        return np.zeros(3)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return angle * w / (2.0 * np.sin(angle))


def test_pose_error_quarter_turn_matches_matrix_log():
    half = np.pi / 4.0
    x = Pose(np.zeros(3), np.array([np.cos(half), 0.0, 0.0, np.sin(half)]))
    x_d = Pose(np.zeros(3))
    e = pose_error(x, x_d)
    assert np.allclose(e.angular, [0.0, 0.0, np.pi / 2], atol=1e-12)
    # cross-check against the matrix-log oracle on random rotations
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b = random_pose(rng), random_pose(rng)
        Rrel = quat_to_matrix(b.rotation).T @ quat_to_matrix(a.rotation)
        assert np.allclose(pose_error(a, b).angular, _matrix_log_oracle(Rrel), atol=1e-9)


def test_integrate_pose_identity_and_translation():
    rng = np.random.default_rng(1)
    x = random_pose(rng)
    assert translational_distance(integrate_pose(x, PoseError.zero()), x) < 1e-15
    d = PoseError(np.array([0.1, -0.2, 0.3]), np.zeros(3))
    y = integrate_pose(x, d)
    assert np.allclose(y.translation, x.translation + d.linear)
    assert np.allclose(y.rotation, x.rotation)


def test_integrate_pose_error_roundtrip():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        x = random_pose(rng)
        d = PoseError(rng.uniform(-0.01, 0.01, 3), rng.uniform(-0.2, 0.2, 3))
        e = pose_error(integrate_pose(x, d), x)
        worst = max(worst, np.abs(e.linear - d.linear).max(),
                    np.abs(e.angular - d.angular).max())
    assert worst < 1e-8


def test_translational_distance_cases():
    a = Pose(np.array([0.3, 0.0, 0.0]))
    b = Pose(np.array([0.0, 0.4, 0.0]))
    assert translational_distance(a, a) == 0.0
    assert abs(translational_distance(a, b) - 0.5) < 1e-15
    assert translational_distance(a, b) == translational_distance(b, a)
    # success-radius check: 9 mm passes the 1 cm threshold
    close = Pose(a.translation + np.array([0.009, 0.0, 0.0]))
    assert translational_distance(a, close) <= 0.01


def test_translational_distance_triangle_inequality():
    rng = np.random.default_rng(4)
    for _ in range(100):
        a, b, c = (random_pose(rng) for _ in range(3))
        ab = translational_distance(a, b)
        bc = translational_distance(b, c)
        ac = translational_distance(a, c)
        assert ac <= ab + bc + 1e-12


@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 1e-3))
@settings(max_examples=100, deadline=None)
def test_quat_log_exp_roundtrip(vals):
    q = quat_normalize(np.asarray(vals))
    v = quat_log(q)
    assert np.linalg.norm(v) <= np.pi + 1e-9
    q2 = quat_from_rotvec(v)
    # same rotation up to sign
    assert min(np.abs(q2 - q).max(), np.abs(q2 + q).max()) < 1e-9


def test_matrix_quat_roundtrip():
    rng = np.random.default_rng(5)
    for _ in range(50):
        q = quat_normalize(rng.normal(size=4))
        q = np.where(q[0] < 0, -q, q)
        R = quat_to_matrix(q)
        assert np.allclose(matrix_to_quat(R), q, atol=1e-9)


def test_pose_validation():
    with pytest.raises(ValueError):
        Pose(np.array([np.nan, 0.0, 0.0]))
    with pytest.raises(ValueError):
        Pose(np.zeros(3), np.array([1.0, 1.0, 0.0, 0.0]))  # far from unit norm
    with pytest.raises(ValueError):
        PoseError(np.zeros(3), np.array([4.0, 0.0, 0.0]))  # angle beyond pi
