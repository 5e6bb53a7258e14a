"""Serial kinematic chains: URDF parsing, forward kinematics, geometric Jacobians.

Only single unbranched chains are supported. Fixed joints are folded into the
origin of the next moving joint (or into the tool offset when trailing), so a
parsed chain contains moving joints only and Jacobian columns line up with the
configuration vector one to one.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .transforms import (
    RigidTransform,
    compose,
    matrix_to_quat,
    quat_to_matrix,
    quat_to_rpy,
    rpy_to_quat,
)

REVOLUTE = "revolute"
PRISMATIC = "prismatic"
FIXED = "fixed"
_KINDS = (REVOLUTE, PRISMATIC, FIXED)


class UrdfError(ValueError):
    """Raised when a robot description cannot be turned into a serial chain."""


@dataclass(frozen=True, eq=False)
class JointSpec:
    name: str
    kind: str
    axis: np.ndarray
    origin: RigidTransform
    limits: tuple[float, float] = (-math.inf, math.inf)
    velocity_limit: float = math.inf

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown joint kind {self.kind!r}")
        axis = np.array(self.axis, dtype=float)
        if axis.shape != (3,):
            raise ValueError("joint axis must be a 3-vector")
        if self.kind != FIXED:
            norm = float(np.linalg.norm(axis))
            if norm < 1e-9:
                raise ValueError(f"joint {self.name!r}: axis must be nonzero")
            axis = axis / norm
        axis.setflags(write=False)
        object.__setattr__(self, "axis", axis)
        lower, upper = float(self.limits[0]), float(self.limits[1])
        if lower > upper:
            raise ValueError(f"joint {self.name!r}: invalid limits [{lower}, {upper}]")
        object.__setattr__(self, "limits", (lower, upper))
        object.__setattr__(self, "velocity_limit", float(self.velocity_limit))


@dataclass(frozen=True, eq=False)
class KinematicChain:
    """Ordered base-to-tip joint list plus a fixed tool offset after the last joint."""

    joints: tuple[JointSpec, ...]
    link_names: tuple[str, ...] = ()
    tool_offset: RigidTransform = field(default_factory=RigidTransform.identity)
    mesh_refs: dict[str, str] = field(default_factory=dict)
    name: str = "robot"

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "link_names", tuple(self.link_names))

    @property
    def dof(self) -> int:
        return sum(1 for j in self.joints if j.kind != FIXED)

    @cached_property
    def lower_limits(self) -> np.ndarray:
        arr = np.array([j.limits[0] for j in self.joints if j.kind != FIXED])
        arr.setflags(write=False)
        return arr

    @cached_property
    def upper_limits(self) -> np.ndarray:
        arr = np.array([j.limits[1] for j in self.joints if j.kind != FIXED])
        arr.setflags(write=False)
        return arr

    @cached_property
    def _frames(self):
        """Per-joint origin rotation matrices / translations plus tool frame."""
        rots = [quat_to_matrix(j.origin.rotation) for j in self.joints]
        trans = [j.origin.translation for j in self.joints]
        axes = [j.axis for j in self.joints]
        kinds = [j.kind for j in self.joints]
        tool_rot = quat_to_matrix(self.tool_offset.rotation)
        tool_trans = self.tool_offset.translation
        return rots, trans, axes, kinds, tool_rot, tool_trans

    def with_tool_offset(self, tool_offset: RigidTransform) -> "KinematicChain":
        return replace(self, tool_offset=tool_offset)

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lower_limits, self.upper_limits)

    def check_config(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dof,):
            raise ValueError(f"configuration must have shape ({self.dof},), got {q.shape}")
        return q


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    cc = 1.0 - c
    return np.array(
        [
            [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
            [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
            [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
        ]
    )


def _walk(chain: KinematicChain, q: np.ndarray):
    """Yield (kind, axis_world, joint_origin_world, R_after, p_after) per moving joint."""
    rots, trans, axes, kinds, _, _ = chain._frames
    R = np.eye(3)
    p = np.zeros(3)
    qi = 0
    out = []
    for rot, tran, axis, kind in zip(rots, trans, axes, kinds):
        p = p + R @ tran
        R = R @ rot
        if kind == FIXED:
            continue
        axis_world = R @ axis
        origin_world = p
        if kind == REVOLUTE:
            R = R @ _axis_rotation(axis, q[qi])
        else:
            p = p + axis_world * q[qi]
        out.append((kind, axis_world, origin_world, R, p))
        qi += 1
    return out, R, p


def forward_kinematics(chain: KinematicChain, q) -> RigidTransform:
    """Pose of the tool frame in the base frame."""
    q = chain.check_config(q)
    _, R, p = _walk(chain, q)
    _, _, _, _, tool_rot, tool_trans = chain._frames
    p_tool = p + R @ tool_trans
    R_tool = R @ tool_rot
    return RigidTransform(p_tool, matrix_to_quat(R_tool))


def frame_poses(chain: KinematicChain, q) -> list[RigidTransform]:
    """Pose of every moving-joint frame (after its motion) plus the tool frame."""
    q = chain.check_config(q)
    steps, R, p = _walk(chain, q)
    _, _, _, _, tool_rot, tool_trans = chain._frames
    poses = [RigidTransform(p_i, matrix_to_quat(R_i)) for (_, _, _, R_i, p_i) in steps]
    poses.append(RigidTransform(p + R @ tool_trans, matrix_to_quat(R @ tool_rot)))
    return poses


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    """Geometric Jacobian at the tool point, 6 x dof.

    Rows are linear velocity x, y, z then angular velocity x, y, z in the base
    frame. Revolute column j is [z_j x (p_tool - p_j); z_j], prismatic [z_j; 0].
    """
    q = chain.check_config(q)
    steps, R, p = _walk(chain, q)
    _, _, _, _, _, tool_trans = chain._frames
    p_tool = p + R @ tool_trans
    J = np.zeros((6, chain.dof))
    for col, (kind, axis_world, origin_world, _, _) in enumerate(steps):
        if kind == REVOLUTE:
            J[:3, col] = np.cross(axis_world, p_tool - origin_world)
            J[3:, col] = axis_world
        else:
            J[:3, col] = axis_world
    return J


def random_config(chain: KinematicChain, rng: np.random.Generator, margin: float = 0.0) -> np.ndarray:
    """Uniform in-limit configuration; unbounded joints sample (-pi, pi)."""
    lower = np.where(np.isfinite(chain.lower_limits), chain.lower_limits, -math.pi)
    upper = np.where(np.isfinite(chain.upper_limits), chain.upper_limits, math.pi)
    span = upper - lower
    return lower + margin * span + rng.uniform(size=chain.dof) * span * (1.0 - 2.0 * margin)


# --- URDF ---------------------------------------------------------------


def _parse_origin(elem) -> RigidTransform:
    if elem is None:
        return RigidTransform.identity()
    xyz = [float(v) for v in elem.get("xyz", "0 0 0").split()]
    rpy = [float(v) for v in elem.get("rpy", "0 0 0").split()]
    if len(xyz) != 3 or len(rpy) != 3:
        raise UrdfError("origin xyz/rpy must have three components")
    return RigidTransform(np.array(xyz), rpy_to_quat(*rpy))


def parse_urdf(document: str) -> KinematicChain:
    """Parse a URDF document into a serial chain.

    Mesh filenames are kept as opaque strings per link; inertials and other
    unsupported elements are ignored. Branching structures are rejected.
    """
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise UrdfError(f"malformed URDF document: {exc}") from exc
    if root.tag != "robot":
        raise UrdfError("document root must be <robot>")

    links: list[str] = []
    meshes: dict[str, str] = {}
    for link in root.findall("link"):
        lname = link.get("name")
        if lname is None:
            raise UrdfError("link without a name")
        links.append(lname)
        mesh = link.find("./visual/geometry/mesh")
        if mesh is not None and mesh.get("filename"):
            meshes[lname] = mesh.get("filename")
    if not links:
        raise UrdfError("document declares no links")

    by_parent: dict[str, list] = {}
    children: set[str] = set()
    for joint in root.findall("joint"):
        jname = joint.get("name")
        jtype = joint.get("type")
        if jname is None or jtype is None:
            raise UrdfError("joint missing name or type")
        if jtype == "continuous":
            jtype = REVOLUTE
            limits = (-math.inf, math.inf)
        elif jtype in (REVOLUTE, PRISMATIC, FIXED):
            limit_elem = joint.find("limit")
            if limit_elem is not None:
                limits = (
                    float(limit_elem.get("lower", "-inf")),
                    float(limit_elem.get("upper", "inf")),
                )
            else:
                limits = (-math.inf, math.inf)
        else:
            raise UrdfError(f"joint {jname!r}: unsupported type {jtype!r}")
        parent = joint.find("parent")
        child = joint.find("child")
        if parent is None or child is None:
            raise UrdfError(f"joint {jname!r}: missing parent or child link")
        parent_link = parent.get("link")
        child_link = child.get("link")
        axis_elem = joint.find("axis")
        if axis_elem is None:
            if jtype != FIXED:
                raise UrdfError(f"joint {jname!r}: missing axis on non-fixed joint")
            axis = np.array([0.0, 0.0, 1.0])
        else:
            axis = np.array([float(v) for v in axis_elem.get("xyz", "").split()])
            if axis.shape != (3,):
                raise UrdfError(f"joint {jname!r}: axis must have three components")
        limit_elem = joint.find("limit")
        velocity = math.inf
        if limit_elem is not None and limit_elem.get("velocity"):
            velocity = float(limit_elem.get("velocity"))
        try:
            spec = JointSpec(
                name=jname,
                kind=jtype,
                axis=axis,
                origin=_parse_origin(joint.find("origin")),
                limits=limits,
                velocity_limit=velocity,
            )
        except ValueError as exc:
            raise UrdfError(str(exc)) from exc
        by_parent.setdefault(parent_link, []).append((spec, child_link))
        children.add(child_link)

    roots = [l for l in links if l not in children]
    if len(roots) != 1:
        raise UrdfError(f"expected exactly one base link, found {len(roots)}")
    base = roots[0]

    ordered: list[JointSpec] = []
    chain_links = [base]
    current = base
    while current in by_parent:
        out_joints = by_parent[current]
        if len(out_joints) > 1:
            raise UrdfError(f"branching chain at link {current!r}: no unique base-to-tip path")
        spec, child_link = out_joints[0]
        if child_link in chain_links:
            raise UrdfError(f"joint {spec.name!r} creates a cycle")
        ordered.append(spec)
        chain_links.append(child_link)
        current = child_link

    # fold fixed joints into the next moving origin / the tool offset
    moving: list[JointSpec] = []
    moving_links: list[str] = [base]
    pending = RigidTransform.identity()
    for spec, child_link in zip(ordered, chain_links[1:]):
        merged = compose(pending, spec.origin)
        if spec.kind == FIXED:
            pending = merged
            continue
        moving.append(replace(spec, origin=merged))
        moving_links.append(child_link)
        pending = RigidTransform.identity()

    kept = set(moving_links)
    return KinematicChain(
        joints=tuple(moving),
        link_names=tuple(moving_links),
        tool_offset=pending,
        mesh_refs={k: v for k, v in meshes.items() if k in kept},
        name=root.get("name", "robot"),
    )


def _fmt(values) -> str:
    return " ".join(f"{v:.17g}" for v in np.atleast_1d(values))


def serialize_urdf(chain: KinematicChain) -> str:
    """Emit the chain back as URDF text; parse(serialize(parse(d))) == parse(d)."""
    robot = ET.Element("robot", name=chain.name)
    n_links = len(chain.joints) + 1
    link_names = list(chain.link_names)
    if len(link_names) != n_links:
        link_names = [f"link{i}" for i in range(n_links)]
    for lname in link_names:
        link = ET.SubElement(robot, "link", name=lname)
        if lname in chain.mesh_refs:
            visual = ET.SubElement(link, "visual")
            geom = ET.SubElement(visual, "geometry")
            ET.SubElement(geom, "mesh", filename=chain.mesh_refs[lname])

    def origin_attrs(t: RigidTransform) -> dict[str, str]:
        return {"xyz": _fmt(t.translation), "rpy": _fmt(quat_to_rpy(t.rotation))}

    for i, joint in enumerate(chain.joints):
        j = ET.SubElement(robot, "joint", name=joint.name, type=joint.kind)
        ET.SubElement(j, "parent", link=link_names[i])
        ET.SubElement(j, "child", link=link_names[i + 1])
        ET.SubElement(j, "origin", **origin_attrs(joint.origin))
        ET.SubElement(j, "axis", xyz=_fmt(joint.axis))
        limit = {"lower": f"{joint.limits[0]:.17g}", "upper": f"{joint.limits[1]:.17g}"}
        if math.isfinite(joint.velocity_limit):
            limit["velocity"] = f"{joint.velocity_limit:.17g}"
        ET.SubElement(j, "limit", **limit)
    if not transform_is_identity(chain.tool_offset):
        tool_link = f"{link_names[-1]}_tool"
        ET.SubElement(robot, "link", name=tool_link)
        j = ET.SubElement(robot, "joint", name="tool_offset", type="fixed")
        ET.SubElement(j, "parent", link=link_names[-1])
        ET.SubElement(j, "child", link=tool_link)
        ET.SubElement(j, "origin", **origin_attrs(chain.tool_offset))
    ET.indent(robot)
    return ET.tostring(robot, encoding="unicode")


def transform_is_identity(t: RigidTransform, tol: float = 0.0) -> bool:
    return bool(
        np.all(np.abs(t.translation) <= tol) and np.all(np.abs(t.rotation - [1, 0, 0, 0]) <= tol)
    )
