import math

import numpy as np
import pytest

from robot_workbench import fixtures
from robot_workbench.chain import (
    KinematicChain,
    JointSpec,
    UrdfError,
    forward_kinematics,
    frame_poses,
    jacobian,
    parse_urdf,
    random_config,
    serialize_urdf,
)
from robot_workbench.transforms import (
    RigidTransform,
    quat_conjugate,
    quat_distance,
    quat_mul,
    quat_to_matrix,
    rotation_log,
)

MINIMAL_URDF = """
<robot name="mini">
  <link name="base"/>
  <link name="arm"/>
  <joint name="spin" type="revolute">
    <parent link="base"/>
    <child link="arm"/>
    <axis xyz="0 0 1"/>
    <limit lower="-3.14159265" upper="3.14159265"/>
  </joint>
</robot>
"""


def chains_equal(a: KinematicChain, b: KinematicChain, tol=1e-9) -> bool:
    if a.dof != b.dof or len(a.joints) != len(b.joints):
        return False
    if a.link_names != b.link_names:
        return False
    for ja, jb in zip(a.joints, b.joints):
        if ja.name != jb.name or ja.kind != jb.kind:
            return False
        if not np.allclose(ja.axis, jb.axis, atol=tol):
            return False
        if not np.allclose(ja.origin.translation, jb.origin.translation, atol=tol):
            return False
        if quat_distance(ja.origin.rotation, jb.origin.rotation) > tol:
            return False
        if not np.allclose(ja.limits, jb.limits, atol=tol):
            return False
    if not np.allclose(a.tool_offset.translation, b.tool_offset.translation, atol=tol):
        return False
    return quat_distance(a.tool_offset.rotation, b.tool_offset.rotation) <= tol


# --- parsing -----------------------------------------------------------------


def test_parse_minimal_single_joint():
    chain = parse_urdf(MINIMAL_URDF)
    assert chain.dof == 1
    assert chain.joints[0].name == "spin"
    assert np.allclose(chain.joints[0].axis, [0, 0, 1])
    assert chain.joints[0].limits == pytest.approx((-3.14159265, 3.14159265))


def test_parse_seven_joint_fixture_golden():
    chain = fixtures.lab7()
    assert chain.dof == 7
    assert [j.name for j in chain.joints] == ["j1", "j2", "j3", "j4", "j5", "j6", "j7"]
    assert [j.kind for j in chain.joints] == ["revolute"] * 7
    # the trailing fixed flange joint folds into the tool offset
    assert np.allclose(chain.tool_offset.translation, [0, 0, 0.107])
    assert chain.joints[3].limits == pytest.approx((-3.0718, -0.0698))
    assert np.allclose(chain.joints[5].axis, [0, -1, 0])
    assert chain.mesh_refs.get("shoulder_yaw_link") == "meshes/shoulder.stl"


def test_parse_invalid_limits():
    doc = MINIMAL_URDF.replace('lower="-3.14159265" upper="3.14159265"', 'lower="1.0" upper="-1.0"')
    with pytest.raises(UrdfError, match="invalid limits"):
        parse_urdf(doc)


def test_parse_missing_axis_on_revolute():
    doc = MINIMAL_URDF.replace('<axis xyz="0 0 1"/>', "")
    with pytest.raises(UrdfError, match="axis"):
        parse_urdf(doc)


def test_parse_branching_rejected():
    doc = """
    <robot name="tree">
      <link name="base"/><link name="left"/><link name="right"/>
      <joint name="a" type="revolute">
        <parent link="base"/><child link="left"/><axis xyz="0 0 1"/>
        <limit lower="-1" upper="1"/>
      </joint>
      <joint name="b" type="revolute">
        <parent link="base"/><child link="right"/><axis xyz="0 0 1"/>
        <limit lower="-1" upper="1"/>
      </joint>
    </robot>
    """
    with pytest.raises(UrdfError, match="branching"):
        parse_urdf(doc)


def test_parse_malformed_document():
    with pytest.raises(UrdfError, match="malformed"):
        parse_urdf("<robot name='x'><link name='a'")


def test_parse_serialize_idempotent():
    for document in (MINIMAL_URDF, fixtures.planar_rr_urdf(), fixtures.lab7_urdf()):
        first = parse_urdf(document)
        again = parse_urdf(serialize_urdf(first))
        assert chains_equal(first, again)


def test_fixed_joints_are_folded(arm7):
    assert all(j.kind != "fixed" for j in arm7.joints)
    assert len(arm7.joints) == arm7.dof


# --- forward kinematics --------------------------------------------------------


def test_fk_straight_arm(planar_rr):
    pose = forward_kinematics(planar_rr, [0.0, 0.0])
    assert np.allclose(pose.translation, [2, 0, 0], atol=1e-12)
    assert quat_distance(pose.rotation, np.array([1, 0, 0, 0])) < 1e-12


def test_fk_quarter_turn(planar_rr):
    pose = forward_kinematics(planar_rr, [math.pi / 2, 0.0])
    assert np.allclose(pose.translation, [0, 2, 0], atol=1e-12)
    expected_rot = np.array([math.cos(math.pi / 4), 0, 0, math.sin(math.pi / 4)])
    assert quat_distance(pose.rotation, expected_rot) < 1e-12


def test_fk_analytic_planar(planar_rr, rng):
    for _ in range(100):
        q1, q2 = rng.uniform(-math.pi, math.pi, 2)
        pose = forward_kinematics(planar_rr, [q1, q2])
        expected = [math.cos(q1) + math.cos(q1 + q2), math.sin(q1) + math.sin(q1 + q2), 0.0]
        assert np.allclose(pose.translation, expected, atol=1e-9)


def _oracle_fk_matrices(chain: KinematicChain, q):
    """Independent product-of-homogeneous-matrices forward kinematics."""

    def to_hom(rotation, translation):
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return m

    def axis_rot(axis, angle):
        axis = np.asarray(axis, dtype=float)
        k = np.array(
            [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
        )
        return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)

    total = np.eye(4)
    qi = 0
    for joint in chain.joints:
        total = total @ to_hom(quat_to_matrix(joint.origin.rotation), joint.origin.translation)
        if joint.kind == "revolute":
            total = total @ to_hom(axis_rot(joint.axis, q[qi]), np.zeros(3))
            qi += 1
        elif joint.kind == "prismatic":
            total = total @ to_hom(np.eye(3), joint.axis * q[qi])
            qi += 1
    total = total @ to_hom(
        quat_to_matrix(chain.tool_offset.rotation), chain.tool_offset.translation
    )
    return total


def test_fk_matches_matrix_product_oracle(arm7, rng):
    for _ in range(25):
        q = random_config(arm7, rng)
        pose = forward_kinematics(arm7, q)
        oracle = _oracle_fk_matrices(arm7, q)
        assert np.allclose(pose.translation, oracle[:3, 3], atol=1e-9)
        assert np.allclose(quat_to_matrix(pose.rotation), oracle[:3, :3], atol=1e-9)


def test_fk_dimension_mismatch(planar_rr):
    with pytest.raises(ValueError, match="shape"):
        forward_kinematics(planar_rr, [0.0])


def test_frame_poses_shape(arm7):
    q = arm7.clamp(np.zeros(7))
    poses = frame_poses(arm7, q)
    assert len(poses) == arm7.dof + 1
    tool = forward_kinematics(arm7, q)
    assert np.allclose(poses[-1].translation, tool.translation, atol=1e-12)


# --- jacobian ------------------------------------------------------------------


def test_jacobian_analytic_planar(planar_rr):
    J = jacobian(planar_rr, [0.0, 0.0])
    expected = np.zeros((6, 2))
    expected[1] = [2, 1]
    expected[5] = [1, 1]
    assert np.allclose(J, expected, atol=1e-12)


def finite_difference_jacobian(chain, q, eps=1e-6):
    base = forward_kinematics(chain, q)
    J = np.zeros((6, chain.dof))
    for j in range(chain.dof):
        dq = np.array(q, dtype=float)
        dq[j] += eps
        bumped = forward_kinematics(chain, dq)
        J[:3, j] = (bumped.translation - base.translation) / eps
        rel = quat_mul(bumped.rotation, quat_conjugate(base.rotation))
        J[3:, j] = rotation_log(rel) / eps
    return J


def test_jacobian_matches_finite_differences(arm7, rng):
    for _ in range(100):
        q = random_config(arm7, rng, margin=0.01)
        J = jacobian(arm7, q)
        J_fd = finite_difference_jacobian(arm7, q)
        assert np.max(np.abs(J - J_fd)) < 1e-5


def test_jacobian_prismatic_column():
    chain = KinematicChain(
        joints=(
            JointSpec("slide", "prismatic", [1, 0, 0], RigidTransform.identity(), (-1.0, 1.0)),
        ),
        link_names=("base", "cart"),
    )
    J = jacobian(chain, [0.3])
    assert np.allclose(J[:, 0], [1, 0, 0, 0, 0, 0], atol=1e-12)


def test_joint_spec_validation():
    with pytest.raises(ValueError, match="invalid limits"):
        JointSpec("bad", "revolute", [0, 0, 1], RigidTransform.identity(), (1.0, -1.0))
    with pytest.raises(ValueError, match="axis"):
        JointSpec("bad", "revolute", [0, 0, 0], RigidTransform.identity(), (-1.0, 1.0))


def test_random_config_respects_limits(arm7, rng):
    for _ in range(50):
        q = random_config(arm7, rng)
        assert np.all(q >= arm7.lower_limits) and np.all(q <= arm7.upper_limits)
