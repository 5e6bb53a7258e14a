"""Virtual workspace: robot placement, objects and obstacles, keypoints,
trajectories, and a versioned JSON file format for all of it.

Workspace values are immutable; every edit returns a new value. Units are
meters and radians throughout, quaternions are (w, x, y, z).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .chain import KinematicChain, forward_kinematics, frame_poses
from .planner import GRIPPER_ACTIONS, GaussianKeypoint, JointTrajectory
from .transforms import RigidTransform, compose, invert, quat_from_axis_angle

FORMAT_VERSION = 1
DEFAULT_LINK_RADIUS = 0.05
GRASP_RANGE = 0.02

ROLE_OBJECT = "object"
ROLE_OBSTACLE = "obstacle"


class WorkspaceError(ValueError):
    """Invariant violation on a workspace value or operation."""


class WorkspaceFormatError(WorkspaceError):
    """Document cannot be decoded; `path` names the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


# --- shape primitives -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class Cuboid:
    extents: np.ndarray  # full edge lengths x, y, z

    kind = "cuboid"

    def __post_init__(self):
        e = np.array(self.extents, dtype=float)
        if e.shape != (3,) or np.any(e <= 0) or not np.all(np.isfinite(e)):
            raise WorkspaceError("cuboid: invalid dimensions (extents must be positive)")
        e.setflags(write=False)
        object.__setattr__(self, "extents", e)

    def signed_distance(self, point: np.ndarray) -> float:
        h = self.extents / 2.0
        d = np.abs(point) - h
        outside = np.maximum(d, 0.0)
        return float(np.linalg.norm(outside) + min(d.max(), 0.0))


@dataclass(frozen=True)
class Sphere:
    radius: float

    kind = "sphere"

    def __post_init__(self):
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise WorkspaceError("sphere: invalid dimensions (radius must be positive)")

    def signed_distance(self, point: np.ndarray) -> float:
        return float(np.linalg.norm(point) - self.radius)


@dataclass(frozen=True)
class Cylinder:
    radius: float
    height: float  # along the local z axis, centered

    kind = "cylinder"

    def __post_init__(self):
        ok = math.isfinite(self.radius) and self.radius > 0
        ok = ok and math.isfinite(self.height) and self.height > 0
        if not ok:
            raise WorkspaceError("cylinder: invalid dimensions (radius and height must be positive)")

    def signed_distance(self, point: np.ndarray) -> float:
        radial = math.hypot(point[0], point[1]) - self.radius
        axial = abs(point[2]) - self.height / 2.0
        outside = math.hypot(max(radial, 0.0), max(axial, 0.0))
        return float(outside + min(max(radial, axial), 0.0))


ShapePrimitive = Union[Cuboid, Sphere, Cylinder]


@dataclass(frozen=True, eq=False)
class SceneObject:
    id: str
    shape: ShapePrimitive
    pose: RigidTransform
    role: str = ROLE_OBJECT
    attached_to_gripper: bool = False

    def __post_init__(self):
        if not self.id:
            raise WorkspaceError("scene object needs a non-empty id")
        if self.role not in (ROLE_OBJECT, ROLE_OBSTACLE):
            raise WorkspaceError(f"unknown role {self.role!r}")
        if self.role == ROLE_OBSTACLE and self.attached_to_gripper:
            raise WorkspaceError(f"obstacle {self.id!r} cannot be attached to the gripper")


@dataclass(frozen=True, eq=False)
class RobotInfo:
    """Robot model reference plus its placement in the world frame."""

    urdf_path: Optional[str] = None
    urdf_text: Optional[str] = None
    placement: RigidTransform = field(default_factory=RigidTransform.identity)
    tool_offset: Optional[RigidTransform] = None


@dataclass(frozen=True, eq=False)
class Workspace:
    version: int = FORMAT_VERSION
    robot: RobotInfo = field(default_factory=RobotInfo)
    objects: tuple[SceneObject, ...] = ()
    keypoints: tuple[GaussianKeypoint, ...] = ()
    trajectories: dict[str, JointTrajectory] = field(default_factory=dict)
    marker_to_base: Optional[RigidTransform] = None

    def __post_init__(self):
        if self.version != FORMAT_VERSION:
            raise WorkspaceError(f"unsupported workspace version {self.version}")
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "keypoints", tuple(self.keypoints))
        object.__setattr__(self, "trajectories", dict(self.trajectories))
        ids = [o.id for o in self.objects]
        if len(ids) != len(set(ids)):
            raise WorkspaceError("object ids must be unique")
        attached = [o.id for o in self.objects if o.attached_to_gripper]
        if len(attached) > 1:
            raise WorkspaceError(f"at most one object may be attached, got {attached}")
        for name, traj in self.trajectories.items():
            for k in traj.keypoint_indices:
                if not 0 <= k < len(self.keypoints):
                    raise WorkspaceError(
                        f"trajectory {name!r} references missing keypoint {k}"
                    )

    def object_by_id(self, object_id: str) -> SceneObject:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise WorkspaceError(f"no such object: {object_id!r}")

    def attached_object(self) -> Optional[SceneObject]:
        for obj in self.objects:
            if obj.attached_to_gripper:
                return obj
        return None


@dataclass(frozen=True)
class CollisionEntry:
    step: int
    link: int
    obstacle_id: str
    penetration: float


@dataclass(frozen=True)
class CollisionReport:
    entries: tuple[CollisionEntry, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if any(e.penetration <= 0 for e in self.entries):
            raise WorkspaceError("collision entries must have positive penetration")

    def __bool__(self) -> bool:
        return bool(self.entries)


# --- placement ------------------------------------------------------------


def place_robot_manual(ws: Workspace, ground_point, yaw: float) -> Workspace:
    """Put the robot base at a ground point, rotated by yaw about world z."""
    placement = RigidTransform(
        np.asarray(ground_point, dtype=float), quat_from_axis_angle([0, 0, 1], yaw)
    )
    return replace(ws, robot=replace(ws.robot, placement=placement))


def calibrate_from_marker(
    world_to_marker: RigidTransform, marker_to_base: RigidTransform
) -> RigidTransform:
    """Base pose in the world frame from an observed marker pose."""
    return compose(world_to_marker, marker_to_base)


def upsert_object(ws: Workspace, obj: SceneObject) -> Workspace:
    objects = tuple(o for o in ws.objects if o.id != obj.id) + (obj,)
    return replace(ws, objects=objects)


def remove_object(ws: Workspace, object_id: str) -> Workspace:
    ws.object_by_id(object_id)  # raises "no such object"
    return replace(ws, objects=tuple(o for o in ws.objects if o.id != object_id))


# --- gripper --------------------------------------------------------------


def tool_pose_world(ws: Workspace, chain: KinematicChain, q) -> RigidTransform:
    return compose(ws.robot.placement, forward_kinematics(chain, q))


def apply_gripper_action(
    ws: Workspace, chain: KinematicChain, q, action: str
) -> tuple[Workspace, Optional[str]]:
    """Grasp or release at the current tool pose.

    Grasp attaches the nearest graspable object whose surface is within
    GRASP_RANGE of the tool point; the attached object then rides the tool
    frame. Returns the new workspace and the affected object id (None when
    nothing was grasped / nothing was held).
    """
    if action not in ("grasp", "release"):
        raise WorkspaceError(f"gripper action must be grasp or release, got {action!r}")
    tool = tool_pose_world(ws, chain, q)
    if action == "grasp":
        if ws.attached_object() is not None:
            return ws, None
        best = None
        best_sd = math.inf
        for obj in ws.objects:
            if obj.role != ROLE_OBJECT:
                continue
            local = invert(obj.pose).apply(tool.translation)
            sd = obj.shape.signed_distance(local)
            if sd < best_sd:
                best_sd = sd
                best = obj
        if best is None or best_sd > GRASP_RANGE:
            return ws, None
        grabbed = replace(best, pose=tool, attached_to_gripper=True)
        return upsert_object(ws, grabbed), best.id
    held = ws.attached_object()
    if held is None:
        return ws, None
    released = replace(held, pose=tool, attached_to_gripper=False)
    return upsert_object(ws, released), held.id


def track_attached_object(ws: Workspace, chain: KinematicChain, q) -> Workspace:
    """Keep the attached object on the tool frame as the robot moves."""
    held = ws.attached_object()
    if held is None:
        return ws
    return upsert_object(ws, replace(held, pose=tool_pose_world(ws, chain, q)))


# --- collision checking ----------------------------------------------------


def check_collisions(
    chain: KinematicChain,
    trajectory: JointTrajectory,
    ws: Workspace,
    link_radius: float = DEFAULT_LINK_RADIUS,
) -> CollisionReport:
    """Sphere-proxy sweep of the trajectory against all obstacles.

    Each moving-joint frame and the tool point carries a sphere of
    link_radius; every overlap with an obstacle primitive is reported with
    its penetration depth.
    """
    obstacles = [o for o in ws.objects if o.role == ROLE_OBSTACLE]
    if not obstacles:
        return CollisionReport()
    inv_poses = [invert(o.pose) for o in obstacles]
    entries = []
    for step, q in enumerate(trajectory.configs):
        poses = frame_poses(chain, q)
        for link_index, pose in enumerate(poses):
            center = ws.robot.placement.apply(pose.translation)
            for obstacle, inv_pose in zip(obstacles, inv_poses):
                sd = obstacle.shape.signed_distance(inv_pose.apply(center))
                penetration = link_radius - sd
                if penetration > 1e-12:
                    entries.append(
                        CollisionEntry(step, link_index, obstacle.id, float(penetration))
                    )
    return CollisionReport(tuple(entries))


# --- persistence ------------------------------------------------------------


def _transform_to_doc(t: RigidTransform) -> dict:
    return {"translation": list(t.translation), "rotation": list(t.rotation)}


def _shape_to_doc(shape: ShapePrimitive) -> dict:
    if isinstance(shape, Cuboid):
        return {"kind": "cuboid", "extents": list(shape.extents)}
    if isinstance(shape, Sphere):
        return {"kind": "sphere", "radius": shape.radius}
    return {"kind": "cylinder", "radius": shape.radius, "height": shape.height}


def save_workspace(ws: Workspace) -> str:
    """Serialize to the versioned JSON document; load_workspace inverts it losslessly."""
    doc: dict = {"version": ws.version}
    robot: dict = {}
    if ws.robot.urdf_path is not None:
        robot["urdf_path"] = ws.robot.urdf_path
    if ws.robot.urdf_text is not None:
        robot["urdf_text"] = ws.robot.urdf_text
    robot["placement"] = _transform_to_doc(ws.robot.placement)
    if ws.robot.tool_offset is not None:
        robot["tool_offset"] = _transform_to_doc(ws.robot.tool_offset)
    doc["robot"] = robot
    doc["objects"] = [
        {
            "id": o.id,
            "shape": _shape_to_doc(o.shape),
            "pose": _transform_to_doc(o.pose),
            "role": o.role,
            "attached_to_gripper": o.attached_to_gripper,
        }
        for o in ws.objects
    ]
    doc["keypoints"] = [
        {
            "pose": _transform_to_doc(kp.pose),
            "position_covariance": [list(row) for row in kp.position_covariance],
            "orientation_precision": kp.orientation_precision,
            "gripper_action": kp.gripper_action,
        }
        for kp in ws.keypoints
    ]
    doc["trajectories"] = {
        name: {
            "timestamps": list(traj.timestamps),
            "configs": [list(row) for row in traj.configs],
            "keypoint_indices": {str(k): v for k, v in sorted(traj.keypoint_indices.items())},
        }
        for name, traj in sorted(ws.trajectories.items())
    }
    if ws.marker_to_base is not None:
        doc["marker_to_base"] = _transform_to_doc(ws.marker_to_base)
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


class _Reader:
    """Typed field access with path-qualified errors."""

    @staticmethod
    def get(doc: dict, key: str, path: str, required: bool = True):
        if not isinstance(doc, dict):
            raise WorkspaceFormatError("expected an object", path)
        if key not in doc:
            if required:
                raise WorkspaceFormatError("missing required field", f"{path}.{key}" if path else key)
            return None
        return doc[key]

    @staticmethod
    def number(value, path: str) -> float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise WorkspaceFormatError("expected a number", path)
        if not math.isfinite(value):
            raise WorkspaceFormatError("non-finite number", path)
        return float(value)

    @staticmethod
    def vector(value, path: str, length: int) -> np.ndarray:
        if not isinstance(value, list) or len(value) != length:
            raise WorkspaceFormatError(f"expected a list of {length} numbers", path)
        return np.array([_Reader.number(v, f"{path}[{i}]") for i, v in enumerate(value)])


def _transform_from_doc(doc, path: str) -> RigidTransform:
    translation = _Reader.vector(_Reader.get(doc, "translation", path), f"{path}.translation", 3)
    rotation = _Reader.vector(_Reader.get(doc, "rotation", path), f"{path}.rotation", 4)
    try:
        return RigidTransform(translation, rotation)
    except ValueError as exc:
        raise WorkspaceFormatError(str(exc), path) from exc


def _shape_from_doc(doc, path: str) -> ShapePrimitive:
    kind = _Reader.get(doc, "kind", path)
    try:
        if kind == "cuboid":
            return Cuboid(_Reader.vector(_Reader.get(doc, "extents", path), f"{path}.extents", 3))
        if kind == "sphere":
            return Sphere(_Reader.number(_Reader.get(doc, "radius", path), f"{path}.radius"))
        if kind == "cylinder":
            return Cylinder(
                _Reader.number(_Reader.get(doc, "radius", path), f"{path}.radius"),
                _Reader.number(_Reader.get(doc, "height", path), f"{path}.height"),
            )
    except WorkspaceError as exc:
        if isinstance(exc, WorkspaceFormatError):
            raise
        raise WorkspaceFormatError(str(exc), path) from exc
    raise WorkspaceFormatError(f"unknown shape kind {kind!r}", f"{path}.kind")


def load_workspace(document: str) -> Workspace:
    """Parse and validate a workspace document; raises WorkspaceFormatError."""

    def reject_nan(token: str):
        raise WorkspaceFormatError(f"non-finite number token {token!r}")

    try:
        doc = json.loads(document, parse_constant=reject_nan)
    except json.JSONDecodeError as exc:
        raise WorkspaceFormatError(f"not valid JSON: {exc}") from exc

    version = _Reader.get(doc, "version", "")
    if not isinstance(version, int) or version != FORMAT_VERSION:
        raise WorkspaceFormatError(f"unsupported version {version!r}", "version")

    robot_doc = _Reader.get(doc, "robot", "")
    urdf_path = _Reader.get(robot_doc, "urdf_path", "robot", required=False)
    urdf_text = _Reader.get(robot_doc, "urdf_text", "robot", required=False)
    for name, value in (("urdf_path", urdf_path), ("urdf_text", urdf_text)):
        if value is not None and not isinstance(value, str):
            raise WorkspaceFormatError("expected a string", f"robot.{name}")
    placement = _transform_from_doc(_Reader.get(robot_doc, "placement", "robot"), "robot.placement")
    tool_doc = _Reader.get(robot_doc, "tool_offset", "robot", required=False)
    tool_offset = _transform_from_doc(tool_doc, "robot.tool_offset") if tool_doc else None

    objects = []
    objects_doc = _Reader.get(doc, "objects", "")
    if not isinstance(objects_doc, list):
        raise WorkspaceFormatError("expected a list", "objects")
    for i, obj_doc in enumerate(objects_doc):
        path = f"objects[{i}]"
        obj_id = _Reader.get(obj_doc, "id", path)
        role = _Reader.get(obj_doc, "role", path)
        attached = _Reader.get(obj_doc, "attached_to_gripper", path, required=False) or False
        if not isinstance(obj_id, str) or not isinstance(role, str) or not isinstance(attached, bool):
            raise WorkspaceFormatError("bad field types", path)
        try:
            objects.append(
                SceneObject(
                    id=obj_id,
                    shape=_shape_from_doc(_Reader.get(obj_doc, "shape", path), f"{path}.shape"),
                    pose=_transform_from_doc(_Reader.get(obj_doc, "pose", path), f"{path}.pose"),
                    role=role,
                    attached_to_gripper=attached,
                )
            )
        except WorkspaceFormatError:
            raise
        except WorkspaceError as exc:
            raise WorkspaceFormatError(str(exc), path) from exc

    keypoints = []
    keypoints_doc = _Reader.get(doc, "keypoints", "")
    if not isinstance(keypoints_doc, list):
        raise WorkspaceFormatError("expected a list", "keypoints")
    for i, kp_doc in enumerate(keypoints_doc):
        path = f"keypoints[{i}]"
        cov_doc = _Reader.get(kp_doc, "position_covariance", path)
        if not isinstance(cov_doc, list) or len(cov_doc) != 3:
            raise WorkspaceFormatError("expected a 3x3 matrix", f"{path}.position_covariance")
        cov = np.stack(
            [_Reader.vector(row, f"{path}.position_covariance[{r}]", 3) for r, row in enumerate(cov_doc)]
        )
        action = _Reader.get(kp_doc, "gripper_action", path, required=False) or "none"
        if action not in GRIPPER_ACTIONS:
            raise WorkspaceFormatError(f"unknown gripper action {action!r}", f"{path}.gripper_action")
        try:
            keypoints.append(
                GaussianKeypoint(
                    pose=_transform_from_doc(_Reader.get(kp_doc, "pose", path), f"{path}.pose"),
                    position_covariance=cov,
                    orientation_precision=_Reader.number(
                        _Reader.get(kp_doc, "orientation_precision", path),
                        f"{path}.orientation_precision",
                    ),
                    gripper_action=action,
                )
            )
        except WorkspaceFormatError:
            raise
        except ValueError as exc:
            raise WorkspaceFormatError(str(exc), path) from exc

    trajectories = {}
    traj_doc = _Reader.get(doc, "trajectories", "")
    if not isinstance(traj_doc, dict):
        raise WorkspaceFormatError("expected an object", "trajectories")
    for name, tdoc in traj_doc.items():
        path = f"trajectories[{name!r}]"
        timestamps_doc = _Reader.get(tdoc, "timestamps", path)
        configs_doc = _Reader.get(tdoc, "configs", path)
        if not isinstance(timestamps_doc, list) or not isinstance(configs_doc, list):
            raise WorkspaceFormatError("expected lists", path)
        timestamps = np.array(
            [_Reader.number(v, f"{path}.timestamps[{i}]") for i, v in enumerate(timestamps_doc)]
        )
        if not configs_doc:
            raise WorkspaceFormatError("empty configs", f"{path}.configs")
        width = len(configs_doc[0]) if isinstance(configs_doc[0], list) else -1
        if width < 1:
            raise WorkspaceFormatError("expected rows of numbers", f"{path}.configs")
        configs = np.stack(
            [_Reader.vector(row, f"{path}.configs[{r}]", width) for r, row in enumerate(configs_doc)]
        )
        indices_doc = _Reader.get(tdoc, "keypoint_indices", path, required=False) or {}
        if not isinstance(indices_doc, dict):
            raise WorkspaceFormatError("expected an object", f"{path}.keypoint_indices")
        indices = {}
        for k, v in indices_doc.items():
            try:
                indices[int(k)] = int(v)
            except (TypeError, ValueError) as exc:
                raise WorkspaceFormatError("bad keypoint index", f"{path}.keypoint_indices[{k!r}]") from exc
        try:
            trajectories[name] = JointTrajectory(timestamps, configs, indices)
        except ValueError as exc:
            raise WorkspaceFormatError(str(exc), path) from exc

    marker_doc = _Reader.get(doc, "marker_to_base", "", required=False)
    marker = _transform_from_doc(marker_doc, "marker_to_base") if marker_doc else None

    try:
        return Workspace(
            version=version,
            robot=RobotInfo(
                urdf_path=urdf_path,
                urdf_text=urdf_text,
                placement=placement,
                tool_offset=tool_offset,
            ),
            objects=tuple(objects),
            keypoints=tuple(keypoints),
            trajectories=trajectories,
            marker_to_base=marker,
        )
    except WorkspaceError as exc:
        raise WorkspaceFormatError(str(exc)) from exc
