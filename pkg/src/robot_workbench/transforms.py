"""Rigid-body transforms as translation + unit quaternion pairs.

Quaternions are stored in (w, x, y, z) order and renormalized after every
construction and composition, so downstream code can rely on unit norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_TINY = 1e-12


def _as_fixed_array(values, shape, what: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{what} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    arr.setflags(write=False)
    return arr


def normalize_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = float(np.linalg.norm(q))
    if n < 1e-8:
        raise ValueError("quaternion norm too small to normalize")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by unit quaternion q."""
    u = np.asarray(q[1:], dtype=float)
    w = q[0]
    uv = np.cross(u, v)
    return np.asarray(v, dtype=float) + 2.0 * (w * uv + np.cross(u, uv))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), Shepperd's method."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return normalize_quat(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = float(np.linalg.norm(axis))
    if n < 1e-12:
        raise ValueError("rotation axis must be nonzero")
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * axis / n])


def rotation_log(q: np.ndarray) -> np.ndarray:
    """Axis*angle vector of a unit quaternion, angle in [0, pi].

    A rotation by exactly pi has two valid axes; the one whose first nonzero
    component is positive is returned so the map is single valued.
    """
    q = normalize_quat(q)
    if q[0] < 0.0:
        q = -q
    w = min(q[0], 1.0)
    vec = q[1:]
    sin_half = float(np.linalg.norm(vec))
    if sin_half < _TINY:
        return 2.0 * vec.copy()
    angle = 2.0 * math.atan2(sin_half, w)
    axis = vec / sin_half
    if w < _TINY:
        # angle == pi: pin the axis sign
        for comp in axis:
            if abs(comp) > 1e-9:
                if comp < 0:
                    axis = -axis
                break
    return angle * axis


def rpy_to_quat(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Fixed-axis roll/pitch/yaw (URDF convention, R = Rz Ry Rx) to quaternion."""
    qx = quat_from_axis_angle([1, 0, 0], roll)
    qy = quat_from_axis_angle([0, 1, 0], pitch)
    qz = quat_from_axis_angle([0, 0, 1], yaw)
    return quat_mul(qz, quat_mul(qy, qx))


def quat_to_rpy(q: np.ndarray) -> tuple[float, float, float]:
    m = quat_to_matrix(normalize_quat(q))
    sin_pitch = -m[2, 0]
    sin_pitch = max(-1.0, min(1.0, sin_pitch))
    pitch = math.asin(sin_pitch)
    if abs(sin_pitch) > 1.0 - 1e-12:
        # gimbal lock: fold all z rotation into yaw
        roll = 0.0
        yaw = math.atan2(-m[0, 1], m[1, 1])
    else:
        roll = math.atan2(m[2, 1], m[2, 2])
        yaw = math.atan2(m[1, 0], m[0, 0])
    return roll, pitch, yaw


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Pose of one frame in another: rotate by `rotation`, then add `translation`."""

    translation: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)

    def __post_init__(self):
        t = _as_fixed_array(self.translation, (3,), "translation")
        q = np.array(self.rotation, dtype=float)
        if q.shape != (4,):
            raise ValueError(f"rotation quaternion must have shape (4,), got {q.shape}")
        if not np.all(np.isfinite(q)):
            raise ValueError("rotation quaternion contains non-finite values")
        q = normalize_quat(q)
        q.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_translation(x: float, y: float, z: float) -> "RigidTransform":
        return RigidTransform(np.array([x, y, z]), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_axis_angle(axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return RigidTransform(np.asarray(translation, dtype=float), quat_from_axis_angle(axis, angle))

    @staticmethod
    def from_matrix(rotation_matrix: np.ndarray, translation) -> "RigidTransform":
        return RigidTransform(np.asarray(translation, dtype=float), matrix_to_quat(rotation_matrix))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def apply(self, point) -> np.ndarray:
        """Map a point expressed in this frame into the parent frame."""
        return self.translation + quat_rotate(self.rotation, np.asarray(point, dtype=float))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    translation = a.translation + quat_rotate(a.rotation, b.translation)
    return RigidTransform(translation, quat_mul(a.rotation, b.rotation))


def invert(a: RigidTransform) -> RigidTransform:
    q_inv = quat_conjugate(a.rotation)
    return RigidTransform(-quat_rotate(q_inv, a.translation), q_inv)


def quat_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Distance between unit quaternions, ignoring the double-cover sign."""
    a = normalize_quat(a)
    b = normalize_quat(b)
    return float(min(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def quat_angle_between(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle between two unit quaternions (0 .. pi)."""
    rel = quat_mul(normalize_quat(a), quat_conjugate(normalize_quat(b)))
    return float(np.linalg.norm(rotation_log(rel)))


def transforms_close(a: RigidTransform, b: RigidTransform, tol: float = 1e-9) -> bool:
    return (
        float(np.max(np.abs(a.translation - b.translation))) <= tol
        and quat_distance(a.rotation, b.rotation) <= tol
    )
