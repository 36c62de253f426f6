import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from _trees import double_pendulum, random_state, random_tree, rod
from seatsim.forces import assemble_generalized_forces
from seatsim.model import Model
from seatsim.oracle import forward_dynamics_oracle, mass_matrix
from seatsim.rigidbody import (
    JointDef, ModelError, SegmentDef, Transform, build_tree, forward_dynamics_aba, forward_kinematics,
)


def _single(kind, axes=()):
    return build_tree([SegmentDef("b", 2.0, [0.1, 0.2, 0.15])], [JointDef("j", kind, "world", "b", axes=axes)])


def test_free_joint_has_six_dof():
    assert _single("free6").ndof == 6


def test_two_joints_sharing_child_rejected():
    segs = [SegmentDef("a", 1.0, [0.1, 0.1, 0.1]), SegmentDef("b", 1.0, [0.1, 0.1, 0.1])]
    joints = [JointDef("j1", "free6", "world", "a"), JointDef("j2", "spherical3", "a", "b"),
              JointDef("j3", "revolute1", "world", "b", axes=([1, 0, 0],))]
    with pytest.raises(ModelError, match="two joints"):
        build_tree(segs, joints)


def test_cycle_and_dangling_rejected():
    segs = [SegmentDef("a", 1.0, [0.1, 0.1, 0.1]), SegmentDef("b", 1.0, [0.1, 0.1, 0.1])]
    with pytest.raises(ModelError, match="cycle"):
        build_tree(segs, [JointDef("j1", "spherical3", "b", "a"), JointDef("j2", "spherical3", "a", "b")])
    with pytest.raises(ModelError, match="dangling"):
        build_tree(segs[:1], [JointDef("j1", "spherical3", "ghost", "a")])


def test_invalid_segment_data_rejected():
    with pytest.raises(ModelError):
        SegmentDef("x", -1.0, [0.1, 0.1, 0.1])
    with pytest.raises(ModelError):
        SegmentDef("x", 1.0, [0.1, -0.1, 0.1])
    with pytest.raises(ModelError):
        JointDef("j", "universal2", "world", "x", axes=([1, 0, 0], [0.6, 0.8, 0]))


def test_zero_coordinates_give_reference_pose():
    rng = np.random.default_rng(3)
    tree = random_tree(rng, 6)
    pose = forward_kinematics(tree, np.zeros(tree.ndof))
    for i, j in enumerate(tree.joints):
        if j.parent == "world":
            Rp, pp = np.eye(3), np.zeros(3)
        else:
            k = tree.index(j.parent)
            Rp, pp = pose.rotation[k], pose.position[k]
        np.testing.assert_allclose(pose.rotation[i], Rp @ j.parent_frame.rotation, atol=1e-12)
        np.testing.assert_allclose(pose.position[i], pp + Rp @ j.parent_frame.translation, atol=1e-12)


def test_revolute_quarter_turn_about_z():
    tree = _single("revolute1", ([0, 0, 1],))
    R = forward_kinematics(tree, [np.pi / 2]).rotation[0]
    np.testing.assert_allclose(R, Rotation.from_euler("z", 90, degrees=True).as_matrix(), atol=1e-12)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_coaxial_revolutes_compose(a, b):
    segs = [SegmentDef("a", 1.0, [0.1, 0.1, 0.1]), SegmentDef("b", 1.0, [0.1, 0.1, 0.1])]
    ax = ([0.0, 0.6, 0.8],)
    tree = build_tree(segs, [JointDef("j1", "revolute1", "world", "a", axes=ax),
                             JointDef("j2", "revolute1", "a", "b", axes=ax)])
    R = forward_kinematics(tree, [a, b]).rotation[1]
    np.testing.assert_allclose(R, Rotation.from_rotvec((a + b) * np.array(ax[0])).as_matrix(), atol=1e-12)


@settings(max_examples=40, deadline=None, derandomize=True)
@given(st.integers(0, 10_000), st.integers(1, 15))
def test_rotations_stay_orthonormal(seed, n):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, n)
    q, *_ = random_state(rng, tree)
    R = forward_kinematics(tree, q).rotation
    err = np.abs(np.einsum("nji,njk->nik", R, R) - np.eye(3)).max()
    assert err < 1e-10


def test_free_fall():
    seg = SegmentDef("b", 3.0, [0.1, 0.2, 0.15])
    model = Model(build_tree([seg], [JointDef("j", "free6", "world", "b")]), np.zeros(6))
    u = np.zeros(6)
    tau, _ = assemble_generalized_forces(model, model.q_init, u)
    qdd = forward_dynamics_aba(model.tree, model.q_init, u, tau)
    np.testing.assert_allclose(qdd, [0, 0, -9.81, 0, 0, 0], atol=1e-12)


@pytest.mark.parametrize("theta", [0.0, np.pi / 6, np.pi / 2])
def test_pendulum_matches_closed_form(theta):
    L, m, ic = 0.8, 2.0, 1e-6
    seg = SegmentDef("bob", m, [ic, ic, ic], [0, 0, -L])
    model = Model(build_tree([seg], [JointDef("hinge", "revolute1", "world", "bob", axes=([0, 1, 0],))]), [theta])
    tau, _ = assemble_generalized_forces(model, [theta], [0.0])
    qdd = forward_dynamics_aba(model.tree, [theta], [0.0], tau)[0]
    # about +y a positive angle swings the bob towards -x, so gravity drives it back
    expected = -m * 9.81 * L * np.sin(theta) / (m * L**2 + ic)
    assert qdd == pytest.approx(expected, rel=1e-12, abs=1e-12)
    assert qdd == pytest.approx(-(9.81 / L) * np.sin(theta), rel=1e-5, abs=1e-12)


def test_rod_torque_gives_scalar_newton_law():
    r = rod("rod", 1.2, 3.0)
    tree = build_tree([r], [JointDef("j", "revolute1", "world", "rod", axes=([0, 1, 0],))])
    inertia = 3.0 * 1.2**2 / 12 + 3.0 * 0.6**2
    qdd = forward_dynamics_aba(tree, [0.3], [0.0], [2.5])[0]
    assert qdd == pytest.approx(2.5 / inertia, rel=1e-12)


def test_ehm_mass_matrix_is_spd(default_model):
    M = mass_matrix(default_model.tree, np.zeros(default_model.ndof))
    np.testing.assert_allclose(M, M.T, atol=1e-12)
    assert np.linalg.eigvalsh(M).min() > 0


def test_four_link_chain_matches_oracle():
    rng = np.random.default_rng(11)
    segs = [SegmentDef(f"l{i}", rng.uniform(1, 4), [0.05, 0.06, 0.07], [0, 0, -0.2]) for i in range(4)]
    joints = [JointDef("j0", "spherical3", "world", "l0")] + [
        JointDef(f"j{i}", "spherical3", f"l{i - 1}", f"l{i}", Transform(translation=[0, 0, -0.4]))
        for i in range(1, 4)
    ]
    tree = build_tree(segs, joints)
    for _ in range(20):
        q, u, tau, w = random_state(rng, tree)
        a = forward_dynamics_aba(tree, q, u, tau, w)
        b = forward_dynamics_oracle(tree, q, u, tau, w)
        assert np.all(np.abs(a - b) <= 1e-9 * (1 + np.abs(b)))


@settings(max_examples=60, deadline=None, derandomize=True)
@given(st.integers(0, 2**32 - 1), st.integers(1, 15))
def test_aba_matches_oracle_property(seed, n):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, n)
    q, u, tau, w = random_state(rng, tree)
    a = forward_dynamics_aba(tree, q, u, tau, w)
    b = forward_dynamics_oracle(tree, q, u, tau, w)
    assert np.all(np.abs(a - b) <= 1e-9 * (1 + np.abs(b)))


def test_prescribed_joint_matches_oracle():
    rng = np.random.default_rng(5)
    tree = random_tree(rng, 7)
    root = tree.joints[0].name
    known = rng.uniform(-1, 1, tree.dof_map[root].stop - tree.dof_map[root].start)
    q, u, tau, w = random_state(rng, tree)
    a = forward_dynamics_aba(tree, q, u, tau, w, prescribed={root: known})
    b = forward_dynamics_oracle(tree, q, u, tau, w, prescribed={root: known})
    np.testing.assert_array_equal(a[tree.dof_map[root]], known)
    assert np.all(np.abs(a - b) <= 1e-9 * (1 + np.abs(b)))


def test_wrong_state_length_rejected():
    tree = double_pendulum().tree
    with pytest.raises(ValueError, match="expected length"):
        forward_dynamics_aba(tree, [0.0], [0.0, 0.0])
