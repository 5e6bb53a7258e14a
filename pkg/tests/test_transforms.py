import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robot_workbench.transforms import (
    RigidTransform,
    compose,
    invert,
    matrix_to_quat,
    quat_distance,
    quat_from_axis_angle,
    quat_mul,
    quat_rotate,
    quat_to_matrix,
    quat_to_rpy,
    rotation_log,
    rpy_to_quat,
    transforms_close,
)

finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)
quat_component = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False)


@st.composite
def pose_strategy(draw):
    t = np.array([draw(finite) for _ in range(3)])
    q = np.array([draw(quat_component) for _ in range(4)])
    if np.linalg.norm(q) < 1e-3:
        q = np.array([1.0, 0.0, 0.0, 0.0])
    return RigidTransform(t, q)


def test_construction_normalizes_quaternion():
    t = RigidTransform([0, 0, 0], [2.0, 0.0, 0.0, 0.0])
    assert abs(np.linalg.norm(t.rotation) - 1.0) < 1e-9


def test_identity_compose():
    t = RigidTransform([1, 2, 3], quat_from_axis_angle([0, 0, 1], 0.7))
    assert transforms_close(compose(RigidTransform.identity(), t), t, tol=1e-12)


def test_translations_commute():
    a = RigidTransform.from_translation(1, 0, 0)
    b = RigidTransform.from_translation(0, 2, 0)
    assert np.allclose(compose(a, b).translation, [1, 2, 0])
    assert np.allclose(compose(b, a).translation, [1, 2, 0])


@settings(max_examples=200)
@given(pose_strategy())
def test_inverse_law(t):
    assert transforms_close(compose(t, invert(t)), RigidTransform.identity(), tol=1e-9)
    assert transforms_close(compose(invert(t), t), RigidTransform.identity(), tol=1e-9)


@settings(max_examples=100)
@given(pose_strategy(), pose_strategy(), pose_strategy())
def test_compose_associative(a, b, c):
    left = compose(compose(a, b), c)
    right = compose(a, compose(b, c))
    assert np.allclose(left.translation, right.translation, atol=1e-8)
    assert quat_distance(left.rotation, right.rotation) < 1e-9


@settings(max_examples=100)
@given(pose_strategy())
def test_quaternion_norm_after_compose(t):
    squared = compose(t, t)
    assert abs(np.linalg.norm(squared.rotation) - 1.0) < 1e-9


def test_rotation_log_identity():
    assert np.allclose(rotation_log(np.array([1.0, 0, 0, 0])), 0.0)


def test_rotation_log_z_quarter_turn():
    q = quat_from_axis_angle([0, 0, 1], math.pi / 2)
    assert np.allclose(rotation_log(q), [0, 0, math.pi / 2], atol=1e-12)


def test_rotation_log_pi_sign_convention():
    # both hemispheres of a pi rotation map onto the axis with positive first component
    for sign in (1.0, -1.0):
        q = quat_from_axis_angle([0, sign, 0], math.pi)
        log = rotation_log(q)
        assert np.allclose(np.abs(log), [0, math.pi, 0], atol=1e-12)
        assert log[1] > 0


def test_rotation_log_angle_range():
    q = quat_from_axis_angle([1, 0, 0], 3 * math.pi / 2)  # same as -pi/2
    log = rotation_log(q)
    assert np.allclose(log, [-math.pi / 2, 0, 0], atol=1e-12)


@settings(max_examples=100)
@given(st.floats(-math.pi, math.pi), st.floats(-1.5, 1.5), st.floats(-math.pi, math.pi))
def test_rpy_round_trip(roll, pitch, yaw):
    q = rpy_to_quat(roll, pitch, yaw)
    back = rpy_to_quat(*quat_to_rpy(q))
    assert quat_distance(q, back) < 1e-9


@settings(max_examples=100)
@given(pose_strategy())
def test_matrix_round_trip(t):
    m = quat_to_matrix(t.rotation)
    assert quat_distance(matrix_to_quat(m), t.rotation) < 1e-9


def test_quat_rotate_matches_matrix():
    q = quat_from_axis_angle([1, 2, 3], 1.1)
    v = np.array([0.3, -0.2, 0.9])
    assert np.allclose(quat_rotate(q, v), quat_to_matrix(q) @ v, atol=1e-12)


def test_apply_maps_points():
    t = RigidTransform([1, 0, 0], quat_from_axis_angle([0, 0, 1], math.pi / 2))
    assert np.allclose(t.apply([1, 0, 0]), [1, 1, 0], atol=1e-12)


def test_rejects_nonfinite():
    with pytest.raises(ValueError):
        RigidTransform([np.nan, 0, 0], [1, 0, 0, 0])
    with pytest.raises(ValueError):
        RigidTransform([0, 0, 0], [0, 0, 0, 0])


def test_quat_mul_is_rotation_composition():
    qa = quat_from_axis_angle([0, 0, 1], 0.4)
    qb = quat_from_axis_angle([0, 1, 0], -0.9)
    v = np.array([1.0, 2.0, 3.0])
    assert np.allclose(quat_rotate(quat_mul(qa, qb), v), quat_rotate(qa, quat_rotate(qb, v)))
