"""Force elements: gravity, Cardan joint restraints, point restraints and
penetration contact between body ellipsoids and seat surfaces.

Seat surfaces (planes and ellipsoids) are attached to the driven platform,
which only translates. The numerical work happens in :mod:`seatsim._kernels`;
the functions here are the public, array-in/array-out versions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .rigidbody import KinematicTree, ModelError

WORLD = "world"
PLATFORM = "platform"


@dataclass(frozen=True)
class CardanRestraint:
    """Parallel torsional (or, for sliding DoF, linear) spring-dampers on a joint's DoF."""

    joint: str
    stiffness: tuple
    damping: tuple
    neutral: Optional[tuple] = None  # defaults to the initial posture

    def __post_init__(self):
        if min(self.stiffness) < 0 or min(self.damping) < 0:
            raise ModelError(f"restraint {self.joint!r}: negative stiffness or damping")
        if len(self.stiffness) != len(self.damping):
            raise ModelError(f"restraint {self.joint!r}: stiffness/damping length mismatch")


@dataclass(frozen=True)
class PointRestraint:
    name: str
    body_a: str
    attach_a: np.ndarray
    body_b: str
    attach_b: np.ndarray
    stiffness: float
    damping: float

    def __post_init__(self):
        if self.stiffness < 0 or self.damping < 0:
            raise ModelError(f"point restraint {self.name!r}: negative coefficient")
        object.__setattr__(self, "attach_a", np.asarray(self.attach_a, float).reshape(3))
        object.__setattr__(self, "attach_b", np.asarray(self.attach_b, float).reshape(3))


@dataclass(frozen=True)
class PlaneSurface:
    """Plane ``normal . x = offset`` in platform coordinates; normal points to the free side."""

    name: str
    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ModelError(f"plane {self.name!r}: normal must be unit length")
        object.__setattr__(self, "normal", n)


@dataclass(frozen=True)
class EllipsoidSurface:
    name: str
    semi_axes: np.ndarray
    center: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        axes = np.asarray(self.semi_axes, float).reshape(3)
        if np.any(axes <= 0):
            raise ModelError(f"ellipsoid {self.name!r}: semi-axes must be positive")
        object.__setattr__(self, "semi_axes", axes)
        object.__setattr__(self, "center", np.asarray(self.center, float).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, float).reshape(3, 3))


@dataclass(frozen=True)
class ContactPair:
    """Body ellipsoid (``segment``/``ellipsoid``) against a platform surface."""

    name: str
    segment: str
    ellipsoid: str
    surface: str
    stiffness: float = 5.0e4
    damping: float = 500.0
    friction_mu: float = 0.5
    friction_vel_eps: float = 0.05

    def __post_init__(self):
        if not self.stiffness > 0:
            raise ModelError(f"contact {self.name!r}: stiffness must be positive")
        if self.friction_mu < 0 or not self.friction_vel_eps > 0 or self.damping < 0:
            raise ModelError(f"contact {self.name!r}: invalid damping/friction parameters")


# ---------------------------------------------------------------------------
# element laws


def cardan_restraint_load(stiffness, damping, angles, rates, neutral=None) -> np.ndarray:
    """Restoring torques ``-k (theta - theta0) - c theta_dot`` about the Cardan axes."""
    k = np.asarray(stiffness, float)
    c = np.asarray(damping, float)
    th = np.asarray(angles, float)
    th0 = np.zeros_like(th) if neutral is None else np.asarray(neutral, float)
    return -k * (th - th0) - c * np.asarray(rates, float)


def point_restraint_force(stiffness, damping, point_a, point_b, vel_a, vel_b):
    """Forces on the two attachment points; the first is ``-k d - c d_dot`` with ``d = a - b``."""
    d = np.asarray(point_a, float) - np.asarray(point_b, float)
    dd = np.asarray(vel_a, float) - np.asarray(vel_b, float)
    fa = -stiffness * d - damping * dd
    return fa, -fa


@dataclass(frozen=True)
class Penetration:
    depth: float
    point: np.ndarray
    normal: np.ndarray


def ellipsoid_plane_penetration(rotation, center, semi_axes, normal, offset) -> Optional[Penetration]:
    n = np.asarray(normal, float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise ValueError("plane normal must be unit length")
    axes = np.asarray(semi_axes, float)
    if np.any(axes <= 0):
        raise ValueError("degenerate semi-axes")
    depth, point = K.ellipsoid_plane(
        np.asarray(rotation, float), np.asarray(center, float), axes, n, float(offset)
    )
    if depth <= 0:
        return None
    return Penetration(float(depth), point, n.copy())


class CoincidentCenters(ValueError):
    """Ellipsoid centers coincide; supply the previous normal to resolve."""


def ellipsoid_ellipsoid_penetration(rot_a, center_a, axes_a, rot_b, center_b, axes_b,
                                    previous_normal=None) -> Optional[Penetration]:
    """Line-of-centers overlap; the normal points from ellipsoid b towards a."""
    fallback = np.array([0.0, 0.0, 1.0]) if previous_normal is None else np.asarray(previous_normal, float)
    depth, point, normal, degenerate = K.ellipsoid_ellipsoid(
        np.asarray(rot_a, float), np.asarray(center_a, float), np.asarray(axes_a, float),
        np.asarray(rot_b, float), np.asarray(center_b, float), np.asarray(axes_b, float),
        fallback,
    )
    if degenerate and previous_normal is None:
        raise CoincidentCenters("coincident ellipsoid centers")
    if depth <= 0:
        return None
    return Penetration(float(depth), point, normal)


def contact_force(depth, depth_rate, tangential_velocity, stiffness, damping, mu, vel_eps):
    """Normal and friction force vectors; the normal part is returned as a magnitude."""
    if depth <= 0:
        raise ValueError("contact_force requires positive penetration")
    fn, ft = K.contact_law(
        float(depth), float(depth_rate), np.asarray(tangential_velocity, float),
        float(stiffness), float(damping), float(mu), float(vel_eps),
    )
    return float(fn), ft


# ---------------------------------------------------------------------------
# packing


def _body_code(tree: KinematicTree, name: str) -> int:
    if name == WORLD:
        return K.BODY_WORLD
    if name == PLATFORM:
        return K.BODY_PLATFORM
    try:
        return tree.index(name)
    except KeyError:
        raise ModelError(f"unknown body {name!r}") from None


def pack_forces(tree, restraints, point_restraints, gravity, q_init):
    """Arrays for the kernel: gravity, per-DoF restraint k/c/neutral, point restraints."""
    rk = np.zeros(tree.ndof)
    rc = np.zeros(tree.ndof)
    rq0 = np.array(q_init, float)
    for r in restraints:
        if r.joint not in tree.dof_map:
            raise ModelError(f"restraint references unknown joint {r.joint!r}")
        sl = tree.dof_map[r.joint]
        n = sl.stop - sl.start
        if len(r.stiffness) != n:
            raise ModelError(f"restraint {r.joint!r}: expected {n} coefficients")
        rk[sl] = r.stiffness
        rc[sl] = r.damping
        if r.neutral is not None:
            rq0[sl] = r.neutral
    npr = len(point_restraints)
    pr_a = np.array([_body_code(tree, p.body_a) for p in point_restraints], dtype=np.int64)
    pr_b = np.array([_body_code(tree, p.body_b) for p in point_restraints], dtype=np.int64)
    pr_ra = np.array([p.attach_a for p in point_restraints], float).reshape(npr, 3)
    pr_rb = np.array([p.attach_b for p in point_restraints], float).reshape(npr, 3)
    pr_k = np.array([p.stiffness for p in point_restraints], float)
    pr_c = np.array([p.damping for p in point_restraints], float)
    return (np.asarray(gravity, float), rk, rc, rq0, pr_a, pr_ra, pr_b, pr_rb, pr_k, pr_c)


def pack_contacts(tree, contacts, surfaces):
    by_name = {s.name: s for s in surfaces}
    nc = len(contacts)
    kind = np.zeros(nc, dtype=np.int64)
    body = np.zeros(nc, dtype=np.int64)
    eR = np.zeros((nc, 3, 3))
    ec = np.zeros((nc, 3))
    eax = np.ones((nc, 3))
    mR = np.zeros((nc, 3, 3))
    mc = np.zeros((nc, 3))
    max_ = np.ones((nc, 3))
    nrm = np.zeros((nc, 3))
    off = np.zeros(nc)
    for j, cp in enumerate(contacts):
        b = tree.index(cp.segment)
        ells = {e.name: e for e in tree.segments[b].geometry}
        if cp.ellipsoid not in ells:
            raise ModelError(f"contact {cp.name!r}: segment {cp.segment!r} has no ellipsoid {cp.ellipsoid!r}")
        if cp.surface not in by_name:
            raise ModelError(f"contact {cp.name!r}: unknown surface {cp.surface!r}")
        e = ells[cp.ellipsoid]
        body[j] = b
        eR[j], ec[j], eax[j] = e.rotation, e.center, e.semi_axes
        s = by_name[cp.surface]
        if isinstance(s, PlaneSurface):
            kind[j] = K.CONTACT_PLANE
            nrm[j], off[j] = s.normal, s.offset
        else:
            kind[j] = K.CONTACT_ELLIPSOID
            mR[j], mc[j], max_[j] = s.rotation, s.center, s.semi_axes
            nrm[j] = (0.0, 0.0, 1.0)
    return (
        kind, body, eR, ec, eax, mR, mc, max_, nrm, off,
        np.array([c.stiffness for c in contacts], float),
        np.array([c.damping for c in contacts], float),
        np.array([c.friction_mu for c in contacts], float),
        np.array([c.friction_vel_eps for c in contacts], float),
    )


def initial_normals(packed_contacts) -> np.ndarray:
    """Starting contact normals (used only to resolve coincident ellipsoid centers)."""
    return packed_contacts[8].copy()


def assemble_generalized_forces(model, q, u, platform_disp=(0, 0, 0), platform_vel=(0, 0, 0)):
    """Sum of gravity, restraint, point-restraint and contact generalized forces.

    Controller torques are not included. Returns ``(tau, contact_forces)``.
    """
    q = np.asarray(q, float)
    u = np.asarray(u, float)
    tree = model.tree
    Xup, S, v, c, Rw, pw = K.tree_kinematics(tree.arrays, q, u)
    tau, cforce, _ = K.assemble_forces(
        tree.arrays, model.force_arrays, model.contact_arrays, q, u, Xup, S, v, Rw, pw,
        np.asarray(platform_disp, float), np.asarray(platform_vel, float),
        initial_normals(model.contact_arrays),
    )
    return tau, cforce
