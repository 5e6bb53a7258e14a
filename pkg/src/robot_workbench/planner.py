"""Via-point trajectory planning with a Gauss-Newton iLQR.

Keypoints are Gaussian position targets: the ellipsoid a user edits in the
scene is interpreted as one standard deviation per semi-axis, its inverse
covariance weights the quadratic position cost. Orientation is constrained by
a scalar precision per keypoint. Dynamics are a joint-space single integrator
q[t+1] = q[t] + u[t] * dt, which keeps the problem exactly linear-quadratic
whenever the task map is linear.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .chain import KinematicChain, forward_kinematics, jacobian
from .transforms import RigidTransform, quat_conjugate, quat_mul, quat_to_matrix, rotation_log

DEFAULT_ORIENTATION_PRECISION = 1e3
COV_EIG_MIN = 1e-8
COV_EIG_MAX = 1e2

GRIPPER_ACTIONS = ("none", "grasp", "release")


class PlanningError(RuntimeError):
    """Raised when the planner diverges; carries the last finite iterate if any."""

    def __init__(self, message: str, last_result: Optional["PlanResult"] = None):
        super().__init__(message)
        self.last_result = last_result


@dataclass(frozen=True, eq=False)
class GaussianKeypoint:
    """Target tool pose with a position covariance and scalar orientation precision."""

    pose: RigidTransform
    position_covariance: np.ndarray
    orientation_precision: float = DEFAULT_ORIENTATION_PRECISION
    gripper_action: str = "none"

    def __post_init__(self):
        cov = np.array(self.position_covariance, dtype=float)
        if cov.shape != (3, 3):
            raise ValueError("position covariance must be 3x3")
        if not np.allclose(cov, cov.T, atol=1e-9):
            raise ValueError("position covariance must be symmetric")
        eigs = np.linalg.eigvalsh(cov)
        if eigs[0] < COV_EIG_MIN * (1 - 1e-9) or eigs[-1] > COV_EIG_MAX * (1 + 1e-9):
            raise ValueError(
                f"covariance eigenvalues must lie in [{COV_EIG_MIN}, {COV_EIG_MAX}], got {eigs}"
            )
        cov.setflags(write=False)
        object.__setattr__(self, "position_covariance", cov)
        if self.orientation_precision < 0:
            raise ValueError("orientation precision must be >= 0")
        if self.gripper_action not in GRIPPER_ACTIONS:
            raise ValueError(f"unknown gripper action {self.gripper_action!r}")


@dataclass(frozen=True)
class PlannerParams:
    horizon: int = 100
    dt: float = 0.02
    control_cost: float = 1e-4
    max_iterations: int = 100
    cost_tolerance: float = 1e-8
    line_search_shrink: float = 0.5

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.control_cost <= 0:
            raise ValueError("control cost must be > 0")
        if not 0 < self.line_search_shrink < 1:
            raise ValueError("line search shrink must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class JointTrajectory:
    """Uniformly sampled joint trajectory with the step index of every keypoint."""

    timestamps: np.ndarray  # (T+1,)
    configs: np.ndarray  # (T+1, dof)
    keypoint_indices: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=float)
        qs = np.atleast_2d(np.array(self.configs, dtype=float))
        if ts.ndim != 1 or qs.shape[0] != ts.shape[0]:
            raise ValueError("timestamps and configs must have matching lengths")
        if not np.all(np.isfinite(ts)) or not np.all(np.isfinite(qs)):
            raise ValueError("trajectory contains non-finite values")
        diffs = np.diff(ts)
        if len(diffs) and (np.any(diffs <= 0) or np.ptp(diffs) > 1e-9):
            raise ValueError("timestamps must be strictly increasing with uniform spacing")
        ts.setflags(write=False)
        qs.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "configs", qs)
        object.__setattr__(self, "keypoint_indices", dict(self.keypoint_indices))
        for k, idx in self.keypoint_indices.items():
            if not 0 <= idx < len(ts):
                raise ValueError(f"keypoint {k} mapped to step {idx} outside the trajectory")

    @property
    def dt(self) -> float:
        return float(self.timestamps[1] - self.timestamps[0]) if len(self.timestamps) > 1 else 0.0

    @property
    def steps(self) -> int:
        return len(self.timestamps) - 1

    @property
    def dof(self) -> int:
        return self.configs.shape[1]


@dataclass(frozen=True)
class PlanResult:
    trajectory: JointTrajectory
    cost: float
    iterations: int
    cost_history: tuple[float, ...]
    converged: bool


def covariance_from_ellipsoid(rotation: np.ndarray, semi_axes) -> np.ndarray:
    """Covariance of an ellipsoid whose semi-axes are one standard deviation each."""
    semi_axes = np.asarray(semi_axes, dtype=float)
    if semi_axes.shape != (3,):
        raise ValueError("semi_axes must be a 3-vector")
    if np.any(semi_axes <= 0):
        raise ValueError("semi-axis lengths must be positive")
    R = quat_to_matrix(np.asarray(rotation, dtype=float) / np.linalg.norm(rotation))
    return R @ np.diag(semi_axes**2) @ R.T


def precision_from_covariance(covariance: np.ndarray) -> np.ndarray:
    """Inverse of an SPD covariance via its eigendecomposition; symmetric by construction."""
    cov = np.asarray(covariance, dtype=float)
    if cov.shape != (3, 3) or not np.allclose(cov, cov.T, atol=1e-9):
        raise ValueError("covariance must be symmetric 3x3")
    eigvals, eigvecs = np.linalg.eigh(cov)
    if np.any(eigvals <= 0):
        raise ValueError("covariance must be positive definite")
    return (eigvecs / eigvals) @ eigvecs.T


def allocate_keypoint_times(num_keypoints: int, horizon: int) -> list[int]:
    """Spread keypoints evenly over the horizon; the last lands exactly on the final step."""
    if num_keypoints < 1:
        raise ValueError("need at least one keypoint")
    if num_keypoints > horizon:
        raise ValueError(f"more keypoints than steps (K > T: {num_keypoints} > {horizon})")
    return [round(k * horizon / num_keypoints) for k in range(1, num_keypoints + 1)]


def _keypoint_terms(keypoints: Sequence[GaussianKeypoint]):
    terms = []
    for kp in keypoints:
        precision = precision_from_covariance(kp.position_covariance)
        terms.append((kp.pose.translation, precision, kp.pose.rotation, kp.orientation_precision))
    return terms


def _trajectory_cost(chain, q_traj, u, r, step_terms):
    cost = r * float(np.sum(u * u))
    errors = {}
    for step, (mu, precision, rot_ref, w_o) in step_terms.items():
        pose = forward_kinematics(chain, q_traj[step])
        ep = pose.translation - mu
        cost += float(ep @ precision @ ep)
        if w_o > 0:
            eo = rotation_log(quat_mul(pose.rotation, quat_conjugate(rot_ref)))
            cost += w_o * float(eo @ eo)
        errors[step] = float(np.linalg.norm(ep))
    return cost, errors


def _rollout(q0, u, dt, lower, upper):
    """Integrate with hard limit clamping; returns states and the effective controls."""
    horizon = u.shape[0]
    q_traj = np.empty((horizon + 1, q0.shape[0]))
    q_traj[0] = q0
    for t in range(horizon):
        q_traj[t + 1] = np.clip(q_traj[t] + u[t] * dt, lower, upper)
    u_eff = np.diff(q_traj, axis=0) / dt
    return q_traj, u_eff


def plan_ilqr(
    chain: KinematicChain,
    q0: np.ndarray,
    keypoints: Sequence[GaussianKeypoint],
    params: PlannerParams = PlannerParams(),
    u_init: Optional[np.ndarray] = None,
) -> PlanResult:
    """Plan a joint trajectory through the keypoints.

    Minimizes the sum of Gaussian-weighted position errors and log-map
    orientation errors at the allotted keypoint steps plus a quadratic control
    cost, by iterating: linearize the task map at the keypoint steps, run the
    Riccati backward pass, roll the new policy forward with a backtracking
    line search. Accepted iterations never increase the cost.
    """
    q0 = chain.check_config(q0)
    dof = chain.dof
    T = params.horizon
    dt = params.dt
    r = params.control_cost
    lower, upper = chain.lower_limits, chain.upper_limits
    if np.any(q0 < lower - 1e-9) or np.any(q0 > upper + 1e-9):
        raise ValueError("initial configuration violates joint limits")
    if len(keypoints) > T:
        raise ValueError(f"more keypoints than steps (K > T: {len(keypoints)} > {T})")

    keypoint_steps: dict[int, int] = {}
    if keypoints:
        for k, step in enumerate(allocate_keypoint_times(len(keypoints), T)):
            keypoint_steps[k] = step
    terms = _keypoint_terms(keypoints)
    step_terms = {keypoint_steps[k]: terms[k] for k in keypoint_steps}

    if u_init is None:
        u = np.zeros((T, dof))
    else:
        u = np.array(u_init, dtype=float)
        if u.shape != (T, dof):
            fitted = np.zeros((T, dof))
            rows = min(T, u.shape[0])
            fitted[:rows] = u[:rows, :dof]
            u = fitted

    q_traj, u = _rollout(q0, u, dt, lower, upper)
    cost, _ = _trajectory_cost(chain, q_traj, u, r, step_terms)
    if not math.isfinite(cost):
        raise PlanningError("initial trajectory cost is not finite")
    cost_history = [cost]

    converged = False
    iterations = 0
    eye = np.eye(dof)
    for _ in range(params.max_iterations):
        # quadratic cost model along the current trajectory
        cx = np.zeros((T + 1, dof))
        cxx = np.zeros((T + 1, dof, dof))
        for step, (mu, precision, rot_ref, w_o) in step_terms.items():
            J = jacobian(chain, q_traj[step])
            pose = forward_kinematics(chain, q_traj[step])
            Jp = J[:3]
            ep = pose.translation - mu
            cx[step] += 2.0 * Jp.T @ (precision @ ep)
            cxx[step] += 2.0 * Jp.T @ precision @ Jp
            if w_o > 0:
                Jo = J[3:]
                eo = rotation_log(quat_mul(pose.rotation, quat_conjugate(rot_ref)))
                cx[step] += 2.0 * w_o * Jo.T @ eo
                cxx[step] += 2.0 * w_o * Jo.T @ Jo

        # Riccati backward pass (A = I, B = dt*I, control Hessian 2r I)
        Vx = cx[T]
        Vxx = cxx[T]
        k_ff = np.empty((T, dof))
        K_fb = np.empty((T, dof, dof))
        for t in range(T - 1, -1, -1):
            Qx = cx[t] + Vx
            Qu = 2.0 * r * u[t] + dt * Vx
            Qxx = cxx[t] + Vxx
            Quu = 2.0 * r * eye + dt * dt * Vxx
            Qux = dt * Vxx
            Quu_inv = np.linalg.inv(Quu)
            k_ff[t] = -Quu_inv @ Qu
            K_fb[t] = -Quu_inv @ Qux
            Vx = Qx + K_fb[t].T @ Quu @ k_ff[t] + K_fb[t].T @ Qu + Qux.T @ k_ff[t]
            Vxx = Qxx + K_fb[t].T @ Quu @ K_fb[t] + K_fb[t].T @ Qux + Qux.T @ K_fb[t]
            Vxx = 0.5 * (Vxx + Vxx.T)

        # forward roll-out with backtracking line search
        alpha = 1.0
        improved = False
        for _ in range(24):
            q_new = np.empty_like(q_traj)
            u_new = np.empty_like(u)
            q_new[0] = q0
            for t in range(T):
                u_new[t] = u[t] + alpha * k_ff[t] + K_fb[t] @ (q_new[t] - q_traj[t])
                q_new[t + 1] = np.clip(q_new[t] + u_new[t] * dt, lower, upper)
            u_new = np.diff(q_new, axis=0) / dt
            new_cost, _ = _trajectory_cost(chain, q_new, u_new, r, step_terms)
            if math.isfinite(new_cost) and new_cost < cost:
                improved = True
                break
            alpha *= params.line_search_shrink
        iterations += 1
        if not improved:
            converged = True
            break
        improvement = cost - new_cost
        q_traj, u, cost = q_new, u_new, new_cost
        cost_history.append(cost)
        if improvement < params.cost_tolerance:
            converged = True
            break

    if not math.isfinite(cost):
        raise PlanningError(
            "planner diverged to a non-finite cost",
            _make_result(q_traj, dt, keypoint_steps, cost_history, iterations, False),
        )
    return _make_result(q_traj, dt, keypoint_steps, cost_history, iterations, converged)


def _make_result(q_traj, dt, keypoint_steps, cost_history, iterations, converged) -> PlanResult:
    T = q_traj.shape[0] - 1
    trajectory = JointTrajectory(
        timestamps=np.arange(T + 1) * dt,
        configs=q_traj,
        keypoint_indices=dict(keypoint_steps),
    )
    return PlanResult(
        trajectory=trajectory,
        cost=cost_history[-1],
        iterations=iterations,
        cost_history=tuple(cost_history),
        converged=converged,
    )


def replan_incremental(
    chain: KinematicChain,
    q0: np.ndarray,
    keypoints: Sequence[GaussianKeypoint],
    params: PlannerParams = PlannerParams(),
    warm_start: Optional[JointTrajectory] = None,
) -> PlanResult:
    """Replan after a keypoint edit, seeding the solver with the previous controls."""
    u_init = None
    if warm_start is not None and warm_start.steps > 0 and warm_start.dof == chain.dof:
        u_init = np.diff(warm_start.configs, axis=0) / warm_start.dt
    return plan_ilqr(chain, q0, keypoints, params, u_init=u_init)


def keypoint_position_errors(
    chain: KinematicChain,
    trajectory: JointTrajectory,
    keypoints: Sequence[GaussianKeypoint],
) -> dict[int, float]:
    """Achieved distance to each keypoint mean at its allotted step (meters)."""
    errors = {}
    for k, step in trajectory.keypoint_indices.items():
        pose = forward_kinematics(chain, trajectory.configs[step])
        errors[k] = float(np.linalg.norm(pose.translation - keypoints[k].pose.translation))
    return errors


def task_path(chain: KinematicChain, trajectory: JointTrajectory) -> list[RigidTransform]:
    """Tool pose at every trajectory step (the curve shown alongside the keypoints)."""
    return [forward_kinematics(chain, q) for q in trajectory.configs]


def trajectory_to_csv(trajectory: JointTrajectory) -> str:
    """CSV with header t,q1..qn and at least 9 significant digits per value."""
    buf = io.StringIO()
    dof = trajectory.dof
    buf.write("t," + ",".join(f"q{i + 1}" for i in range(dof)) + "\n")
    for t, q in zip(trajectory.timestamps, trajectory.configs):
        buf.write(f"{t:.12g}," + ",".join(f"{v:.12g}" for v in q) + "\n")
    return buf.getvalue()
