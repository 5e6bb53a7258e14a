import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robot_workbench import fixtures
from robot_workbench.chain import forward_kinematics, jacobian, random_config
from robot_workbench.control import (
    IkError,
    IkWeights,
    ImpedanceGains,
    PlaneMotion,
    dls_step,
    impedance_step,
    joint_jog,
    nullspace_projector,
    pose_error,
    project_to_plane,
    solve_ik,
    weighted_ik_step,
)
from robot_workbench.transforms import RigidTransform, quat_from_axis_angle

# --- pose error ---------------------------------------------------------------


def test_pose_error_identity():
    t = RigidTransform.from_translation(0.3, -0.1, 2.0)
    assert np.allclose(pose_error(t, t), np.zeros(6), atol=1e-12)


def test_pose_error_pure_translation():
    a = RigidTransform.identity()
    b = RigidTransform.from_translation(0.1, 0, 0)
    assert np.allclose(pose_error(a, b), [0.1, 0, 0, 0, 0, 0], atol=1e-12)


def test_pose_error_z_rotation():
    a = RigidTransform.from_translation(1, 2, 3)
    b = RigidTransform(np.array([1, 2, 3]), quat_from_axis_angle([0, 0, 1], math.pi / 2))
    assert np.allclose(pose_error(a, b), [0, 0, 0, 0, 0, math.pi / 2], atol=1e-12)


# --- weighted IK step -----------------------------------------------------------


def test_dls_exact_inverse_identity_jacobian():
    e = np.array([0.1, 0.2, 0, 0, 0, 0])
    assert np.allclose(dls_step(np.eye(6), e), e, atol=1e-12)


def test_dls_damped_identity_halves():
    e = np.array([0.3, -0.4, 0.1, 0.05, 0, 0.2])
    assert np.allclose(dls_step(np.eye(6), e, damping=1.0), e / 2, atol=1e-12)


def test_dls_redundant_weighted():
    # normal-equations oracle: dq = W^-1 J^T (J W^-1 J^T)^-1 e
    J = np.array([[1.0, 1.0]])
    W = np.diag([1.0, 4.0])
    dq = dls_step(J, np.array([1.0]), W, 0.0)
    assert np.allclose(dq, [0.8, 0.2], atol=1e-12)
    winv_jt = np.linalg.solve(W, J.T)
    oracle = winv_jt @ np.linalg.solve(J @ winv_jt, np.array([1.0]))
    assert np.allclose(dq, oracle, atol=1e-12)


def test_weighted_step_identity_jacobian_chain(gauge6):
    target = RigidTransform.from_translation(0.1, 0.2, 0.0)
    dq = weighted_ik_step(gauge6, np.zeros(6), target, IkWeights(damping=0.0), max_step=None)
    assert np.allclose(dq, [0.1, 0.2, 0, 0, 0, 0], atol=1e-9)

    dq = weighted_ik_step(gauge6, np.zeros(6), target, IkWeights(damping=1.0), max_step=None)
    assert np.allclose(dq, [0.05, 0.1, 0, 0, 0, 0], atol=1e-9)


def test_weighted_step_clamps_elementwise(gauge6):
    target = RigidTransform.from_translation(0.1, 0.2, 0.0)
    dq = weighted_ik_step(gauge6, np.zeros(6), target, IkWeights(damping=0.0), max_step=0.1)
    assert np.allclose(dq, [0.1, 0.1, 0, 0, 0, 0], atol=1e-9)


def test_square_invertible_indifferent_to_weights(rng):
    # with square nonsingular J and zero damping, W drops out of the solve
    for _ in range(20):
        J = rng.normal(size=(6, 6))
        while abs(np.linalg.det(J)) < 1e-3:
            J = rng.normal(size=(6, 6))
        e = rng.normal(size=6)
        a = rng.normal(size=(6, 6))
        W = a @ a.T + 6 * np.eye(6)
        dq_identity = dls_step(J, e, None, 0.0)
        dq_weighted = dls_step(J, e, W, 0.0)
        assert np.max(np.abs(dq_identity - dq_weighted)) < 1e-9


def test_ik_weights_validation():
    with pytest.raises(ValueError):
        IkWeights(damping=-0.1)
    with pytest.raises(np.linalg.LinAlgError):
        IkWeights(joint_weights=np.diag([1.0, -1.0]))


# --- solve_ik ------------------------------------------------------------------


def test_solve_ik_already_at_target(planar_rr):
    q0 = np.array([0.3, 0.3])
    target = forward_kinematics(planar_rr, q0)
    assert np.allclose(solve_ik(planar_rr, q0, target), q0, atol=1e-12)


def test_solve_ik_planar_matches_analytic(planar_rr):
    target = RigidTransform.from_translation(1.0, 1.0, 0.0)
    q = solve_ik(planar_rr, np.array([0.3, 0.3]), target, tol=1e-8, position_only=True)
    pose = forward_kinematics(planar_rr, q)
    assert np.linalg.norm(pose.translation - [1, 1, 0]) < 1e-6
    # analytic two-solution set for reach sqrt(2): elbow at +-pi/2
    c2 = (1**2 + 1**2 - 1 - 1) / (2 * 1 * 1)
    expected_elbows = {math.acos(c2), -math.acos(c2)}
    assert min(abs(abs(q[1]) - e) for e in expected_elbows) < 1e-6


def test_solve_ik_unreachable_reports_best_residual(planar_rr):
    target = RigidTransform.from_translation(100.0, 0.0, 0.0)
    with pytest.raises(IkError) as excinfo:
        solve_ik(planar_rr, np.zeros(2), target, position_only=True, max_iter=100)
    assert excinfo.value.best_residual == pytest.approx(98.0, abs=1e-3)


def test_ik_step_descent_property(arm7, rng):
    # plain weighted steps with a small clamp should almost always descend while
    # the iteration is progressing; counting stops once the residual converges
    # or stalls in a constrained basin (where solve_ik would restart instead)
    total = 0
    decreased = 0
    for _ in range(20):
        target = forward_kinematics(arm7, random_config(arm7, rng))
        q = fixtures.LAB7_HOME.copy()
        prev = np.linalg.norm(pose_error(forward_kinematics(arm7, q), target))
        best = prev
        stalled = 0
        for _ in range(50):
            if prev < 1e-4 or stalled >= 5:
                break
            dq = weighted_ik_step(arm7, q, target, max_step=0.05)
            q = arm7.clamp(q + dq)
            res = np.linalg.norm(pose_error(forward_kinematics(arm7, q), target))
            total += 1
            if res <= prev + 1e-12:
                decreased += 1
            stalled = 0 if res < best - 1e-9 else stalled + 1
            best = min(best, res)
            prev = res
    assert decreased / total >= 0.95


# --- plane projection ------------------------------------------------------------


def test_project_to_plane_examples():
    assert np.allclose(project_to_plane([1, 2, 3], [0, 0, 1]), [1, 2, 0], atol=1e-12)
    assert np.allclose(project_to_plane([0, 0, 5], [0, 0, 1]), [0, 0, 0], atol=1e-12)
    assert np.allclose(project_to_plane([3, -2, 0], [0, 0, 1]), [3, -2, 0], atol=1e-12)


@settings(max_examples=200)
@given(
    st.lists(st.floats(-100, 100), min_size=3, max_size=3),
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
)
def test_project_to_plane_idempotent(delta, normal_raw):
    n = np.asarray(normal_raw)
    if np.linalg.norm(n) < 1e-3:
        n = np.array([0.0, 0.0, 1.0])
    n = n / np.linalg.norm(n)
    once = project_to_plane(np.asarray(delta), n)
    twice = project_to_plane(once, n)
    assert np.array_equal(once, twice)


def test_project_to_plane_requires_unit_normal():
    with pytest.raises(ValueError):
        project_to_plane([1, 0, 0], [0, 0, 2])


def test_plane_motion_normalizes():
    assert np.allclose(PlaneMotion([0, 0, 5]).normal, [0, 0, 1])


# --- nullspace jog ---------------------------------------------------------------


def test_nullspace_projector_redundant_case():
    P = nullspace_projector(np.array([[1.0, 1.0]]), 0.0)
    dq = P @ np.array([1.0, 0.0])
    assert np.allclose(dq, [0.5, -0.5], atol=1e-12)
    assert abs(np.array([[1.0, 1.0]]) @ dq) < 1e-12


def test_nullspace_projector_square_full_rank(rng):
    J = rng.normal(size=(6, 6)) + 2 * np.eye(6)
    P = nullspace_projector(J, 0.0)
    assert np.max(np.abs(P)) < 1e-9


def test_joint_jog_nullspace_preserves_pose(arm7):
    q = fixtures.LAB7_HOME.copy()
    dq = joint_jog(arm7, q, joint=2, delta=0.2, nullspace=True, damping=0.0)
    J = jacobian(arm7, q)
    assert np.linalg.norm(J @ dq) < 1e-6


def test_joint_jog_raw_mode(arm7):
    q = fixtures.LAB7_HOME.copy()
    dq = joint_jog(arm7, q, joint=2, delta=0.1, nullspace=False)
    expected = np.zeros(7)
    expected[2] = 0.1
    assert np.allclose(dq, expected, atol=1e-12)


def test_joint_jog_clamps_to_limits(arm7):
    q = arm7.upper_limits.copy()
    dq = joint_jog(arm7, q, joint=0, delta=1.0, nullspace=False)
    assert dq[0] == pytest.approx(0.0, abs=1e-12)


def test_joint_jog_square_chain_nullspace_is_zero(gauge6):
    dq = joint_jog(gauge6, np.zeros(6), joint=1, delta=0.3, nullspace=True, damping=0.0)
    assert np.max(np.abs(dq)) < 1e-9


def test_joint_jog_index_validation(arm7):
    with pytest.raises(ValueError):
        joint_jog(arm7, fixtures.LAB7_HOME, joint=7, delta=0.1)


# --- impedance --------------------------------------------------------------------


def test_impedance_equilibrium():
    gains = ImpedanceGains(np.array([100.0]), np.array([20.0]))
    q, dq = impedance_step(np.array([1.0]), np.array([0.0]), np.array([1.0]), gains, 1e-3)
    assert q[0] == pytest.approx(1.0) and dq[0] == pytest.approx(0.0)


def test_impedance_tracks_critically_damped_reference():
    # reference: the same unit-mass ODE integrated at dt = 1e-6
    kp, kd, dt_fine = 100.0, 20.0, 1e-6
    x, v = 0.0, 0.0
    for _ in range(int(1.0 / dt_fine)):
        a = kp * (1.0 - x) - kd * v
        v += a * dt_fine
        x += v * dt_fine
    gains = ImpedanceGains(np.array([kp]), np.array([kd]))
    q, dq = np.array([0.0]), np.array([0.0])
    trace = []
    for _ in range(1000):
        q, dq = impedance_step(q, dq, np.array([1.0]), gains, 1e-3)
        trace.append(q[0])
    assert abs(q[0] - 1.0) < 1e-2
    assert abs(q[0] - x) < 1e-2
    assert max(trace) <= 1.0 + 1e-3  # no overshoot beyond tolerance


def test_impedance_limit_clamp_zeroes_velocity():
    gains = ImpedanceGains(np.array([100.0]), np.array([20.0]))
    q, dq = np.array([0.9]), np.array([2.0])
    limits = (np.array([-1.0]), np.array([1.0]))
    for _ in range(100):
        q, dq = impedance_step(q, dq, np.array([5.0]), gains, 1e-3, limits=limits)
    assert q[0] == pytest.approx(1.0)
    assert dq[0] == pytest.approx(0.0)


def test_impedance_energy_nonincreasing(rng):
    kp = np.array([100.0, 80.0, 120.0])
    gains = ImpedanceGains(kp, 2 * np.sqrt(kp))
    target = rng.normal(size=3)
    q = rng.normal(size=3)
    dq = rng.normal(size=3)

    def energy(q, dq):
        return 0.5 * float(dq @ dq) + 0.5 * float(kp @ (target - q) ** 2)

    prev = energy(q, dq)
    for _ in range(2000):
        q, dq = impedance_step(q, dq, target, gains, 1e-3)
        current = energy(q, dq)
        assert current <= prev + 1e-12
        prev = current


def test_impedance_gains_validation():
    with pytest.raises(ValueError):
        ImpedanceGains(np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        impedance_step(np.zeros(1), np.zeros(1), np.zeros(1), ImpedanceGains([1.0], [1.0]), 0.0)
