"""Virtual robot programming workbench.

Kinematic chains from URDF, interactive differential IK control, Gaussian
via-point trajectory planning, a persistable workspace model, and a simulated
robot server speaking a line-delimited JSON protocol.
"""

from .chain import KinematicChain, JointSpec, UrdfError, forward_kinematics, jacobian, parse_urdf
from .control import (
    ControlMode,
    IkError,
    IkWeights,
    ImpedanceGains,
    JointJog,
    PlaneMotion,
    RotateRing,
    TranslateAxis,
    impedance_step,
    joint_jog,
    pose_error,
    project_to_plane,
    solve_ik,
    weighted_ik_step,
)
from .planner import (
    GaussianKeypoint,
    JointTrajectory,
    PlanResult,
    PlannerParams,
    PlanningError,
    allocate_keypoint_times,
    covariance_from_ellipsoid,
    plan_ilqr,
    precision_from_covariance,
    replan_incremental,
    task_path,
    trajectory_to_csv,
)
from .transforms import RigidTransform, compose, invert
from .workspace import (
    CollisionReport,
    Cuboid,
    Cylinder,
    SceneObject,
    Sphere,
    Workspace,
    WorkspaceError,
    apply_gripper_action,
    calibrate_from_marker,
    check_collisions,
    load_workspace,
    place_robot_manual,
    remove_object,
    save_workspace,
    upsert_object,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
