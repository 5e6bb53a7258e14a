"""Shared fixture robots and scenes used by tests, scripts, and demos."""

from __future__ import annotations

import math
from importlib import resources

import numpy as np

from ..chain import KinematicChain, JointSpec, forward_kinematics, parse_urdf
from ..planner import GaussianKeypoint, covariance_from_ellipsoid
from ..transforms import RigidTransform
from ..workspace import Cuboid, Cylinder, RobotInfo, SceneObject, Workspace

LAB7_HOME = np.array([0.0, -0.5, 0.0, -2.0, 0.0, 1.6, 0.8])


def _read(name: str) -> str:
    return resources.files(__package__).joinpath(name).read_text(encoding="utf-8")


def planar_rr_urdf() -> str:
    return _read("planar_rr.urdf")


def lab7_urdf() -> str:
    return _read("lab7.urdf")


def planar_rr() -> KinematicChain:
    """Two revolute z joints with unit links; tool at the second link tip."""
    return parse_urdf(planar_rr_urdf())


def lab7() -> KinematicChain:
    """Seven-axis serial arm used as the redundant test robot."""
    return parse_urdf(lab7_urdf())


def identity_gauge_chain() -> KinematicChain:
    """Six joints whose Jacobian is exactly the 6x6 identity at q = 0.

    Three prismatic joints along x, y, z followed by three revolute joints
    about x, y, z, all origins coincident.
    """
    joints = []
    axes = [np.eye(3)[i] for i in range(3)]
    for i, axis in enumerate(axes):
        joints.append(
            JointSpec(f"p{i}", "prismatic", axis, RigidTransform.identity(), (-10.0, 10.0))
        )
    for i, axis in enumerate(axes):
        joints.append(
            JointSpec(f"r{i}", "revolute", axis, RigidTransform.identity(), (-math.pi, math.pi))
        )
    return KinematicChain(joints=tuple(joints), link_names=("base", "px", "py", "pz", "rx", "ry", "rz"))


def peg_scene_configs() -> dict[str, np.ndarray]:
    """Joint configurations the peg-disassembly keypoints are derived from."""
    return {
        "approach": np.array([0.35, -0.30, 0.25, -2.20, 0.10, 1.80, 0.60]),
        "grasp": np.array([0.35, -0.12, 0.25, -2.05, 0.10, 1.95, 0.60]),
        "lift": np.array([0.30, -0.45, 0.20, -2.25, 0.10, 1.75, 0.60]),
        "release": np.array([-0.45, -0.25, -0.20, -2.10, -0.10, 1.85, 0.60]),
    }


def peg_disassembly_workspace() -> Workspace:
    """Peg-in-board scene: board obstacle, graspable peg, disposal box, 4 keypoints.

    Keypoint poses come from forward kinematics of hand-picked configurations
    so the whole task is reachable by construction; the peg sits at the grasp
    pose and the disposal box under the release pose.
    """
    chain = lab7()
    configs = peg_scene_configs()
    poses = {name: forward_kinematics(chain, q) for name, q in configs.items()}

    identity_rot = np.array([1.0, 0.0, 0.0, 0.0])
    tight = covariance_from_ellipsoid(identity_rot, [0.004, 0.004, 0.004])
    loose = covariance_from_ellipsoid(identity_rot, [0.02, 0.02, 0.05])

    keypoints = (
        GaussianKeypoint(poses["approach"], loose, orientation_precision=50.0),
        GaussianKeypoint(poses["grasp"], tight, orientation_precision=1e3, gripper_action="grasp"),
        GaussianKeypoint(poses["lift"], loose, orientation_precision=50.0),
        GaussianKeypoint(poses["release"], tight, orientation_precision=1e3, gripper_action="release"),
    )

    peg_pos = poses["grasp"].translation
    release_pos = poses["release"].translation
    # board top just under the peg, disposal box reaching up from the floor
    board_center = np.array([peg_pos[0], peg_pos[1], peg_pos[2] - 0.05])
    box_height = 0.3
    box_center = np.array([release_pos[0], release_pos[1], box_height / 2.0])

    objects = (
        SceneObject(
            id="board",
            shape=Cuboid(np.array([0.30, 0.20, 0.04])),
            pose=RigidTransform.from_translation(*board_center),
            role="obstacle",
        ),
        SceneObject(
            id="peg",
            shape=Cylinder(radius=0.012, height=0.05),
            pose=RigidTransform(peg_pos, identity_rot),
            role="object",
        ),
        SceneObject(
            id="disposal_box",
            shape=Cuboid(np.array([0.24, 0.24, box_height])),
            pose=RigidTransform(box_center, identity_rot),
            role="obstacle",
        ),
    )

    return Workspace(
        robot=RobotInfo(urdf_text=lab7_urdf()),
        objects=objects,
        keypoints=keypoints,
    )
