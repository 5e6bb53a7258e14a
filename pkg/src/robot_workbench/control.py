"""Interactive motion control: damped weighted IK, jog modes, joint impedance.

The differential IK update is damped weighted least squares,

    dq = W^-1 J^T (J W^-1 J^T + damping^2 I)^-1 e,

which reduces to the plain pseudoinverse for W = I, damping = 0 and stays
bounded near singular configurations for damping > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .chain import KinematicChain, forward_kinematics, jacobian
from .transforms import RigidTransform, quat_conjugate, quat_mul, rotation_log

DEFAULT_DAMPING = 0.05
DEFAULT_MAX_STEP = 0.1


class IkError(RuntimeError):
    """IK did not reach the target; carries the best iterate found."""

    def __init__(self, message: str, best_q: np.ndarray, best_residual: float, iterations: int):
        super().__init__(message)
        self.best_q = best_q
        self.best_residual = best_residual
        self.iterations = iterations


@dataclass(frozen=True)
class IkWeights:
    """Joint weighting matrix W (None = identity) and damping for the DLS solve."""

    joint_weights: Optional[np.ndarray] = None
    damping: float = DEFAULT_DAMPING

    def __post_init__(self):
        if self.damping < 0:
            raise ValueError("damping must be >= 0")
        if self.joint_weights is not None:
            w = np.array(self.joint_weights, dtype=float)
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ValueError("joint weights must be a square matrix")
            if not np.allclose(w, w.T, atol=1e-9):
                raise ValueError("joint weights must be symmetric")
            np.linalg.cholesky(w)  # raises LinAlgError if not positive definite
            w.setflags(write=False)
            object.__setattr__(self, "joint_weights", w)


@dataclass(frozen=True)
class ImpedanceGains:
    """Per-joint stiffness (1/s^2) and damping (1/s) for unit-mass joint tracking."""

    kp: np.ndarray
    kd: np.ndarray

    def __post_init__(self):
        kp = np.atleast_1d(np.array(self.kp, dtype=float))
        kd = np.atleast_1d(np.array(self.kd, dtype=float))
        if np.any(kp <= 0) or np.any(kd <= 0):
            raise ValueError("impedance gains must be positive")
        kp.setflags(write=False)
        kd.setflags(write=False)
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kd", kd)

    @staticmethod
    def critically_damped(kp: float, dof: int) -> "ImpedanceGains":
        kp_vec = np.full(dof, float(kp))
        return ImpedanceGains(kp_vec, 2.0 * np.sqrt(kp_vec))


# --- control modes ------------------------------------------------------


@dataclass(frozen=True)
class TranslateAxis:
    axis: int  # 0=x, 1=y, 2=z in the base frame

    def __post_init__(self):
        if self.axis not in (0, 1, 2):
            raise ValueError("axis must be 0, 1 or 2")


@dataclass(frozen=True)
class RotateRing:
    axis: int

    def __post_init__(self):
        if self.axis not in (0, 1, 2):
            raise ValueError("axis must be 0, 1 or 2")


@dataclass(frozen=True)
class PlaneMotion:
    normal: np.ndarray

    def __post_init__(self):
        n = np.array(self.normal, dtype=float)
        if n.shape != (3,):
            raise ValueError("plane normal must be a 3-vector")
        norm = float(np.linalg.norm(n))
        if norm < 1e-9:
            raise ValueError("plane normal must be nonzero")
        n = n / norm
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)


@dataclass(frozen=True)
class JointJog:
    joint: int
    nullspace: bool = True


ControlMode = Union[TranslateAxis, RotateRing, PlaneMotion, JointJog]


# --- operations ----------------------------------------------------------


def pose_error(current: RigidTransform, target: RigidTransform) -> np.ndarray:
    """6-vector twist from current to target: [dp; rotation log], angle in (-pi, pi]."""
    linear = target.translation - current.translation
    angular = rotation_log(quat_mul(target.rotation, quat_conjugate(current.rotation)))
    return np.concatenate([linear, angular])


def dls_step(
    J: np.ndarray,
    error: np.ndarray,
    joint_weights: Optional[np.ndarray] = None,
    damping: float = 0.0,
) -> np.ndarray:
    """Damped weighted least-squares solve for a task-space error of any dimension."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    error = np.atleast_1d(np.asarray(error, dtype=float))
    m = J.shape[0]
    if joint_weights is None:
        winv_jt = J.T
    else:
        winv_jt = np.linalg.solve(joint_weights, J.T)
    gram = J @ winv_jt + damping**2 * np.eye(m)
    try:
        y = np.linalg.solve(gram, error)
    except np.linalg.LinAlgError:
        y, *_ = np.linalg.lstsq(gram, error, rcond=None)
    return winv_jt @ y


def weighted_ik_step(
    chain: KinematicChain,
    q: np.ndarray,
    target: RigidTransform,
    weights: IkWeights = IkWeights(),
    max_step: Optional[float] = DEFAULT_MAX_STEP,
    position_only: bool = False,
) -> np.ndarray:
    """One differential IK update toward the target pose, clamped per joint."""
    q = chain.check_config(q)
    err = pose_error(forward_kinematics(chain, q), target)
    J = jacobian(chain, q)
    if position_only:
        err = err[:3]
        J = J[:3]
    dq = dls_step(J, err, weights.joint_weights, weights.damping)
    if max_step is not None and np.isfinite(max_step):
        dq = np.clip(dq, -max_step, max_step)
    return dq


_RESTART_SEED = 987654321
_ATTEMPT_BUDGET = 50  # iterations per attempt before reseeding
_POSITION_WARMUP = 30  # leading position-only iterations of a full-pose attempt
_RESTART_CANDIDATES = 24
_DAMPING_KNEE = 0.1  # residual above which full damping applies


def _limit_aware_dls(chain, q, J, err, weights, damping, max_step):
    """DLS step that drops columns of joints pinned at a limit and pushing outward."""
    dq = dls_step(J, err, weights.joint_weights, damping)
    lower, upper = chain.lower_limits, chain.upper_limits
    for _ in range(3):
        pinned = ((q <= lower + 1e-9) & (dq < 0)) | ((q >= upper - 1e-9) & (dq > 0))
        if not pinned.any():
            break
        J_free = J.copy()
        J_free[:, pinned] = 0.0
        dq = dls_step(J_free, err, weights.joint_weights, damping)
        dq[pinned] = 0.0
    if max_step is not None and np.isfinite(max_step):
        dq = np.clip(dq, -max_step, max_step)
    return dq


def solve_ik(
    chain: KinematicChain,
    q0: np.ndarray,
    target: RigidTransform,
    weights: IkWeights = IkWeights(),
    tol: float = 1e-6,
    max_iter: int = 200,
    max_step: Optional[float] = DEFAULT_MAX_STEP,
    position_only: bool = False,
) -> np.ndarray:
    """Iterate damped weighted IK steps with joint-limit clamping until the
    residual drops below tol.

    Robustness on redundant arms comes from three additions to the plain
    iteration: damping scales down with the residual (full damping only above
    _DAMPING_KNEE, Levenberg style), joints pinned at a limit are dropped from
    the solve while they push outward, and a stalled attempt restarts from the
    best of a batch of random in-limit seeds (fixed RNG seed, so solves stay
    deterministic). Every attempt works the position error first, then the
    full pose. Raises IkError after max_iter total iterations (unreachable
    targets surface the same way), reporting the best iterate seen.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    q = chain.check_config(q0).copy()
    rows = slice(0, 3) if position_only else slice(0, 6)

    def error_of(qq: np.ndarray) -> np.ndarray:
        return pose_error(forward_kinematics(chain, qq), target)[rows]

    best_q = q.copy()
    best_res = float(np.linalg.norm(error_of(q)))
    if best_res < tol:
        return q

    from .chain import random_config

    restart_rng = np.random.default_rng(_RESTART_SEED)
    used = 0
    while used < max_iter:
        budget = min(_ATTEMPT_BUDGET, max_iter - used)
        warmup = 0 if position_only else min(_POSITION_WARMUP, budget)
        for i in range(budget):
            used += 1
            err6 = pose_error(forward_kinematics(chain, q), target)
            err = err6[rows]
            res = float(np.linalg.norm(err))
            if res < best_res:
                best_res = res
                best_q = q.copy()
            if res < tol:
                return q
            J = jacobian(chain, q)[rows]
            if i < warmup:
                step_err = err6[:3]
                step_J = J[:3]
                if float(np.linalg.norm(step_err)) < 1e-4:
                    warmup = 0  # position settled; switch to the full task
                    step_err, step_J = err, J
            else:
                step_err, step_J = err, J
            damping = weights.damping * min(1.0, float(np.linalg.norm(step_err)) / _DAMPING_KNEE)
            dq = _limit_aware_dls(chain, q, step_J, step_err, weights, damping, max_step)
            q = chain.clamp(q + dq)
        res = float(np.linalg.norm(error_of(q)))
        if res < best_res:
            best_res = res
            best_q = q.copy()
        if res < tol:
            return q
        if used < max_iter:
            candidates = [
                random_config(chain, restart_rng, margin=0.02) for _ in range(_RESTART_CANDIDATES)
            ]
            q = min(candidates, key=lambda c: float(np.linalg.norm(error_of(c))))
    raise IkError(
        f"IK did not converge after {max_iter} iterations (best residual {best_res:.3g})",
        best_q,
        best_res,
        max_iter,
    )


def project_to_plane(delta: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Project a displacement onto the plane with the given unit normal.

    Vectors already in the plane (to rounding) are returned unchanged, which
    makes the projection exactly idempotent.
    """
    delta = np.asarray(delta, dtype=float)
    normal = np.asarray(normal, dtype=float)
    norm = float(np.linalg.norm(normal))
    if abs(norm - 1.0) > 1e-6:
        raise ValueError("plane normal must be unit length")
    out_of_plane = float(normal @ delta)
    if abs(out_of_plane) <= 1e-12 * max(1.0, float(np.linalg.norm(delta))):
        return delta.copy()
    return delta - normal * out_of_plane


def nullspace_projector(J: np.ndarray, damping: float = 0.0) -> np.ndarray:
    """I - pinv(J) J with a damped pseudoinverse; maps joint motion into the task nullspace."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    m, n = J.shape
    gram = J @ J.T + damping**2 * np.eye(m)
    try:
        pinv = J.T @ np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        pinv = np.linalg.pinv(J)
    return np.eye(n) - pinv @ J


def joint_jog(
    chain: KinematicChain,
    q: np.ndarray,
    joint: int,
    delta: float,
    nullspace: bool = True,
    damping: float = DEFAULT_DAMPING,
) -> np.ndarray:
    """Jog one joint, either raw or projected so the tool pose is kept to first order.

    The returned step is clamped so q + dq stays within joint limits.
    """
    q = chain.check_config(q)
    if not 0 <= joint < chain.dof:
        raise ValueError(f"joint index {joint} out of range for dof {chain.dof}")
    direction = np.zeros(chain.dof)
    direction[joint] = float(delta)
    if nullspace:
        dq = nullspace_projector(jacobian(chain, q), damping) @ direction
    else:
        dq = direction
    return chain.clamp(q + dq) - q


def impedance_step(
    q: np.ndarray,
    dq: np.ndarray,
    q_target: np.ndarray,
    gains: ImpedanceGains,
    dt: float,
    limits: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Semi-implicit Euler step of unit-mass joint impedance tracking.

    Joints that hit a limit are clamped there with their velocity zeroed.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    q = np.asarray(q, dtype=float)
    dq = np.asarray(dq, dtype=float)
    ddq = gains.kp * (np.asarray(q_target, dtype=float) - q) - gains.kd * dq
    dq_next = dq + ddq * dt
    q_next = q + dq_next * dt
    if limits is not None:
        lower, upper = limits
        clamped = np.clip(q_next, lower, upper)
        dq_next = np.where(clamped == q_next, dq_next, 0.0)
        q_next = clamped
    return q_next, dq_next
