import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from _trees import random_tree
from seatsim.forces import (
    CardanRestraint, CoincidentCenters, PointRestraint, assemble_generalized_forces, cardan_restraint_load,
    contact_force, ellipsoid_ellipsoid_penetration, ellipsoid_plane_penetration, point_restraint_force,
)
from seatsim.model import Model
from seatsim.rigidbody import ModelError, forward_kinematics

I3 = np.eye(3)


def _surface(R, c, axes, th, ph):
    p = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1) * axes
    return c + p @ R.T


def sampled_plane_depth(R, c, axes, n, offset, samples=1000):
    """Deepest surface point below the plane by dense sampling plus local refinement."""
    th, ph = np.meshgrid(np.linspace(0, np.pi, samples), np.linspace(-np.pi, np.pi, samples), indexing="ij")
    d = offset - _surface(R, c, axes, th, ph) @ n
    i = np.unravel_index(np.argmax(d), d.shape)
    f = lambda x: -(offset - _surface(R, c, axes, x[0], x[1]) @ n)  # noqa: E731
    res = minimize(f, [th[i], ph[i]], method="Nelder-Mead", options=dict(xatol=1e-12, fatol=1e-15))
    return max(d.max(), -res.fun)


def _support(R, c, axes, d):
    M = R @ np.diag(axes**2) @ R.T
    return d @ c + np.sqrt(np.einsum("ni,ij,nj->n", d, M, d))


def _fibonacci(n):
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    th = np.pi * (1 + 5**0.5) * i
    return np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], axis=1)


def minimum_translation_depth(Ra, ca, aa, Rb, cb, ab, n=200_000):
    d = _fibonacci(n)
    overlap = _support(Ra, ca, aa, d) + _support(Rb, cb, ab, -d)
    return max(0.0, overlap.min())


def test_cardan_restraint_laws():
    np.testing.assert_array_equal(cardan_restraint_load([5, 5, 5], [1, 1, 1], [0.2, 0.1, 0], [0, 0, 0],
                                                        [0.2, 0.1, 0]), 0)
    np.testing.assert_allclose(cardan_restraint_load([10, 0, 0], [0, 0, 0], [0.1, 0, 0], [0, 0, 0]), [-1.0, 0, 0])
    np.testing.assert_allclose(cardan_restraint_load([0, 0, 0], [0, 5, 0], [0, 0, 0], [0, 0.2, 0]), [0, -1.0, 0])


def test_point_restraint_laws():
    fa, fb = point_restraint_force(1000, 10, [1, 2, 3], [1, 2, 3], [0, 0, 0], [0, 0, 0])
    np.testing.assert_array_equal(fa, 0)
    fa, fb = point_restraint_force(1000, 0, [0, 0, 0.01], [0, 0, 0], [0, 0, 0], [0, 0, 0])
    np.testing.assert_allclose(fa, [0, 0, -10.0])


@given(st.lists(st.floats(-1, 1), min_size=12, max_size=12), st.floats(0, 1e4), st.floats(0, 100))
def test_point_restraint_forces_are_opposite(x, k, c):
    x = np.array(x)
    fa, fb = point_restraint_force(k, c, x[:3], x[3:6], x[6:9], x[9:])
    np.testing.assert_array_equal(fa, -fb)


def test_sphere_plane_cases():
    p = ellipsoid_plane_penetration(I3, [0, 0, 0.05], [0.1] * 3, [0, 0, 1], 0.0)
    assert p.depth == pytest.approx(0.05, abs=1e-15)
    np.testing.assert_allclose(p.point, [0, 0, -0.05], atol=1e-15)
    assert ellipsoid_plane_penetration(I3, [0, 0, 0.2], [0.1] * 3, [0, 0, 1], 0.0) is None


def test_rotated_ellipsoid_plane_depth_matches_sampling():
    R = Rotation.from_euler("y", 30, degrees=True).as_matrix()
    axes, c, n = np.array([0.2, 0.1, 0.1]), np.array([0.0, 0.0, 0.1]), np.array([0.0, 0.0, 1.0])
    p = ellipsoid_plane_penetration(R, c, axes, n, 0.0)
    assert p.depth == pytest.approx(sampled_plane_depth(R, c, axes, n, 0.0), abs=1e-6)


def test_random_ellipsoid_plane_depths_match_sampling():
    rng = np.random.default_rng(8)
    for _ in range(100):
        R = Rotation.random(random_state=rng).as_matrix()
        axes = rng.uniform(0.03, 0.25, 3)
        n = rng.standard_normal(3)
        n /= np.linalg.norm(n)
        c = rng.uniform(-0.2, 0.2, 3)
        offset = c @ n - rng.uniform(0.5, 0.95) * axes.min()
        p = ellipsoid_plane_penetration(R, c, axes, n, offset)
        assert p is not None
        assert p.depth == pytest.approx(sampled_plane_depth(R, c, axes, n, offset, samples=200), abs=1e-6)


def test_sphere_sphere_cases():
    p = ellipsoid_ellipsoid_penetration(I3, [0.15, 0, 0], [0.1] * 3, I3, [0, 0, 0], [0.1] * 3)
    assert p.depth == pytest.approx(0.05, abs=1e-14)
    np.testing.assert_allclose(p.normal, [1, 0, 0], atol=1e-14)
    assert ellipsoid_ellipsoid_penetration(I3, [0.25, 0, 0], [0.1] * 3, I3, [0, 0, 0], [0.1] * 3) is None
    with pytest.raises(CoincidentCenters):
        ellipsoid_ellipsoid_penetration(I3, [0, 0, 0], [0.1] * 3, I3, [0, 0, 0], [0.1] * 3)


def test_sphere_ellipsoid_depth_close_to_minimum_translation():
    Rb = Rotation.from_euler("z", 20, degrees=True).as_matrix()
    ca, aa = np.array([0.22, 0.03, 0.0]), np.array([0.1] * 3)
    cb, ab = np.zeros(3), np.array([0.15, 0.1, 0.08])
    p = ellipsoid_ellipsoid_penetration(I3, ca, aa, Rb, cb, ab)
    ref = minimum_translation_depth(I3, ca, aa, Rb, cb, ab)
    assert ref > 0
    assert p.depth == pytest.approx(ref, rel=0.10)


def test_contact_force_laws():
    fn, ft = contact_force(0.01, 0.0, [0, 0, 0], 1e4, 500, 0.5, 1e-3)
    assert fn == pytest.approx(100.0)
    np.testing.assert_array_equal(ft, 0)
    fn, _ = contact_force(0.01, -1.0, [0, 0, 0], 1e4, 500, 0.5, 1e-3)
    assert fn == 0.0


@given(st.floats(1e-6, 0.05), st.floats(-2, 2), st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       st.floats(0.0, 1.5), st.floats(1e-4, 0.1))
def test_contact_force_unilateral_and_inside_friction_cone(depth, rate, vt, mu, eps):
    vt = np.array(vt)
    vt[2] = 0.0
    fn, ft = contact_force(depth, rate, vt, 5e4, 500, mu, eps)
    assert fn >= 0
    assert np.linalg.norm(ft) <= mu * fn + 1e-12
    if np.linalg.norm(vt) > 0 and fn > 0 and mu > 0:
        assert np.linalg.norm(ft) < mu * fn


def test_no_elements_no_gravity_zero_force():
    tree = random_tree(np.random.default_rng(1), 5)
    m = Model(tree, np.zeros(tree.ndof), gravity=(0, 0, 0))
    tau, _ = assemble_generalized_forces(m, np.ones(tree.ndof) * 0.1, np.ones(tree.ndof))
    np.testing.assert_array_equal(tau, 0)


def test_gravity_on_free_base_equals_body_weight(default_model):
    bare = Model(default_model.tree, default_model.q_init, gravity=default_model.gravity)
    tau, _ = assemble_generalized_forces(bare, bare.q_init, np.zeros(bare.ndof))
    assert tau[default_model.tree.dof_index("pelvis_free.z")] == pytest.approx(-75.3 * 9.81, rel=1e-12)


def _potential_check(model, V, rng, tol=1e-5):
    q = model.q_init + rng.uniform(-0.3, 0.3, model.ndof)
    q[model.gimbal] = np.clip(q[model.gimbal], -1.0, 1.0)
    tau, _ = assemble_generalized_forces(model, q, np.zeros(model.ndof))
    h = 1e-6
    grad = np.array([(V(q + h * e) - V(q - h * e)) / (2 * h) for e in np.eye(model.ndof)])
    np.testing.assert_allclose(tau, -grad, rtol=tol, atol=tol * np.abs(grad).max())


@pytest.mark.parametrize("seed", range(5))
def test_point_restraint_force_is_potential_gradient(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, 4)
    seg = tree.segments[-1].name
    attach, anchor = rng.uniform(-0.2, 0.2, 3), rng.uniform(-0.5, 0.5, 3)
    pr = PointRestraint("spring", seg, attach, "world", anchor, 800.0, 0.0)
    m = Model(tree, np.zeros(tree.ndof), point_restraints=(pr,), gravity=(0, 0, 0))
    i = tree.index(seg)

    def V(q):
        pose = forward_kinematics(tree, q)
        d = pose.position[i] + pose.rotation[i] @ attach - anchor
        return 0.5 * 800.0 * d @ d

    _potential_check(m, V, rng)


@pytest.mark.parametrize("seed", range(3))
def test_cardan_restraint_force_is_potential_gradient(seed):
    rng = np.random.default_rng(seed + 10)
    tree = random_tree(rng, 4)
    restraints, k_all = [], np.zeros(tree.ndof)
    for j in tree.joints:
        n = j.dof
        k = rng.uniform(10, 200, n)
        restraints.append(CardanRestraint(j.name, tuple(k), (0.0,) * n))
        k_all[tree.dof_map[j.name]] = k
    q0 = np.zeros(tree.ndof)
    m = Model(tree, q0, restraints=tuple(restraints), gravity=(0, 0, 0))
    _potential_check(m, lambda q: 0.5 * np.sum(k_all * (q - q0) ** 2), rng)


def test_gravity_is_potential_gradient():
    rng = np.random.default_rng(4)
    tree = random_tree(rng, 5)
    m = Model(tree, np.zeros(tree.ndof))
    mass = np.array([s.mass for s in tree.segments])
    _potential_check(m, lambda q: 9.81 * float(mass @ forward_kinematics(tree, q).com[:, 2]), rng)


def test_invalid_coefficients_rejected():
    with pytest.raises(ModelError):
        CardanRestraint("j", (-1.0,), (0.0,))
    with pytest.raises(ModelError):
        PointRestraint("p", "a", [0, 0, 0], "b", [0, 0, 0], 1.0, -1.0)
