"""Reduced-coordinate articulated rigid-body trees.

A tree is a set of rigid segments connected to the world (or to each other)
by joints. Each joint kind expands to a short chain of rotation/translation
primitives, so spherical joints are parameterized by intrinsic x-y-z Cardan
angles and generalized velocities are plain coordinate rates.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K

WORLD = "world"

JOINT_DOF = {
    "free6": 6,
    "spherical3": 3,
    "universal2": 2,
    "revolute1": 1,
    "translational1": 1,
    "spherical_translational4": 4,
}

_EX, _EY, _EZ = np.eye(3)


class ModelError(ValueError):
    """Inconsistent or non-physical model data."""


@dataclass(frozen=True)
class Transform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, float).reshape(3))


@dataclass(frozen=True)
class Ellipsoid:
    """Contact ellipsoid attached to a segment (pose in the segment frame)."""

    name: str
    semi_axes: np.ndarray
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        axes = np.asarray(self.semi_axes, float).reshape(3)
        if np.any(axes <= 0):
            raise ModelError(f"ellipsoid {self.name!r}: semi-axes must be positive")
        object.__setattr__(self, "semi_axes", axes)
        object.__setattr__(self, "center", np.asarray(self.center, float).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, float).reshape(3, 3))


@dataclass(frozen=True)
class SegmentDef:
    name: str
    mass: float
    inertia: np.ndarray
    com_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    geometry: tuple[Ellipsoid, ...] = ()

    def __post_init__(self):
        inertia = np.asarray(self.inertia, float)
        if inertia.shape == (3,):
            inertia = np.diag(inertia)
        if not self.mass > 0:
            raise ModelError(f"segment {self.name!r}: mass must be positive")
        if not np.allclose(inertia, inertia.T, atol=1e-12):
            raise ModelError(f"segment {self.name!r}: inertia not symmetric")
        if np.linalg.eigvalsh(inertia).min() <= 0:
            raise ModelError(f"segment {self.name!r}: inertia not positive definite")
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "com_offset", np.asarray(self.com_offset, float).reshape(3))
        object.__setattr__(self, "geometry", tuple(self.geometry))


@dataclass(frozen=True)
class JointDef:
    """Joint between ``parent`` (segment name or ``"world"``) and ``child``.

    ``parent_frame`` places the joint in the parent segment frame; the child
    segment frame coincides with the joint output frame. ``axes`` lists the
    unit axes of universal, revolute and translational DoF, and optionally the
    slide axis of a spherical_translational joint (default child z).
    """

    name: str
    kind: str
    parent: str
    child: str
    parent_frame: Transform = field(default_factory=Transform)
    axes: tuple = ()

    def __post_init__(self):
        if self.kind not in JOINT_DOF:
            raise ModelError(f"joint {self.name!r}: unknown kind {self.kind!r}")
        axes = tuple(np.asarray(a, float).reshape(3) for a in self.axes)
        for a in axes:
            if abs(np.linalg.norm(a) - 1.0) > 1e-9:
                raise ModelError(f"joint {self.name!r}: axes must be unit length")
        need = {"universal2": 2, "revolute1": 1, "translational1": 1}.get(self.kind)
        if need is not None and len(axes) != need:
            raise ModelError(f"joint {self.name!r}: {self.kind} needs {need} axes")
        if self.kind == "universal2" and abs(float(axes[0] @ axes[1])) > 1e-9:
            raise ModelError(f"joint {self.name!r}: universal axes must be orthogonal")
        object.__setattr__(self, "axes", axes)

    @property
    def dof(self) -> int:
        return JOINT_DOF[self.kind]

    def primitives(self) -> list[tuple[int, np.ndarray, str]]:
        """Expand into (type, axis, label) primitives in chain order."""
        R, T = K.PRIM_ROT, K.PRIM_TRANS
        cardan = [(R, _EX, "rx"), (R, _EY, "ry"), (R, _EZ, "rz")]
        if self.kind == "free6":
            return [(T, _EX, "x"), (T, _EY, "y"), (T, _EZ, "z")] + cardan
        if self.kind == "spherical3":
            return cardan
        if self.kind == "universal2":
            return [(R, self.axes[0], "r1"), (R, self.axes[1], "r2")]
        if self.kind == "revolute1":
            return [(R, self.axes[0], "r")]
        if self.kind == "translational1":
            return [(T, self.axes[0], "t")]
        slide = self.axes[0] if self.axes else _EZ
        return cardan + [(T, slide, "t")]


def spatial_inertia(mass: float, com: np.ndarray, inertia_com: np.ndarray) -> np.ndarray:
    C = K.skew(np.asarray(com, float))
    out = np.zeros((6, 6))
    out[:3, :3] = inertia_com + mass * C @ C.T
    out[:3, 3:] = mass * C
    out[3:, :3] = mass * C.T
    out[3:, 3:] = mass * np.eye(3)
    return out


@dataclass(frozen=True, eq=False)
class KinematicTree:
    """Immutable joint tree; segments are stored parent-before-child."""

    segments: tuple[SegmentDef, ...]
    joints: tuple[JointDef, ...]  # joints[i] drives segments[i]
    dof_map: dict
    dof_names: tuple[str, ...]
    arrays: tuple

    @property
    def ndof(self) -> int:
        return len(self.dof_names)

    @property
    def nbodies(self) -> int:
        return len(self.segments)

    @property
    def total_mass(self) -> float:
        return float(sum(s.mass for s in self.segments))

    def index(self, segment: str) -> int:
        for i, s in enumerate(self.segments):
            if s.name == segment:
                return i
        raise KeyError(segment)

    def dof_index(self, name: str) -> int:
        return self.dof_names.index(name)

    @property
    def parent_index(self) -> np.ndarray:
        return self.arrays[0]

    def describe(self) -> dict:
        """Canonical JSON-serializable description (used for hashing and dumps)."""

        def r(a):
            return np.round(np.asarray(a, float), 12).tolist()

        return {
            "segments": [
                {
                    "name": s.name,
                    "mass": round(s.mass, 12),
                    "inertia": r(s.inertia),
                    "com_offset": r(s.com_offset),
                    "geometry": [
                        {"name": e.name, "semi_axes": r(e.semi_axes),
                         "center": r(e.center), "rotation": r(e.rotation)}
                        for e in s.geometry
                    ],
                }
                for s in self.segments
            ],
            "joints": [
                {
                    "name": j.name, "kind": j.kind, "parent": j.parent, "child": j.child,
                    "rotation": r(j.parent_frame.rotation),
                    "translation": r(j.parent_frame.translation),
                    "axes": [r(a) for a in j.axes],
                }
                for j in self.joints
            ],
        }

    def structure_hash(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def build_tree(segments: Sequence[SegmentDef], joints: Sequence[JointDef]) -> KinematicTree:
    """Validate a segment/joint set and lay it out for the dynamics kernels."""
    seg_by_name = {}
    for s in segments:
        if s.name in seg_by_name or s.name == WORLD:
            raise ModelError(f"duplicate or reserved segment name {s.name!r}")
        seg_by_name[s.name] = s
    joint_of = {}
    for j in joints:
        if j.child not in seg_by_name:
            raise ModelError(f"joint {j.name!r}: dangling child {j.child!r}")
        if j.parent != WORLD and j.parent not in seg_by_name:
            raise ModelError(f"joint {j.name!r}: dangling parent {j.parent!r}")
        if j.child in joint_of:
            raise ModelError(f"segment {j.child!r} is the child of two joints")
        if j.parent == j.child:
            raise ModelError(f"joint {j.name!r} connects {j.child!r} to itself")
        joint_of[j.child] = j
    missing = [n for n in seg_by_name if n not in joint_of]
    if missing:
        raise ModelError(f"segments not attached by any joint: {missing}")

    order: list[str] = []
    state: dict[str, int] = {}

    def visit(name, stack):
        if state.get(name) == 2:
            return
        if state.get(name) == 1:
            raise ModelError(f"cycle detected through {' -> '.join(stack + [name])}")
        state[name] = 1
        parent = joint_of[name].parent
        if parent != WORLD:
            visit(parent, stack + [name])
        state[name] = 2
        order.append(name)

    for s in segments:
        visit(s.name, [])

    segs = tuple(seg_by_name[n] for n in order)
    jts = tuple(joint_of[n] for n in order)
    idx = {n: i for i, n in enumerate(order)}

    nb = len(segs)
    parent = np.array([-1 if j.parent == WORLD else idx[j.parent] for j in jts], dtype=np.int64)
    Rtree = np.array([j.parent_frame.rotation for j in jts]).reshape(nb, 3, 3)
    ptree = np.array([j.parent_frame.translation for j in jts]).reshape(nb, 3)
    Xtree = np.array([K.plucker(Rtree[i], ptree[i]) for i in range(nb)]).reshape(nb, 6, 6)
    dof_start = np.zeros(nb, dtype=np.int64)
    dof_count = np.zeros(nb, dtype=np.int64)
    ptype, paxis, names = [], [], []
    dof_map = {}
    for i, j in enumerate(jts):
        prims = j.primitives()
        dof_start[i] = len(ptype)
        dof_count[i] = len(prims)
        dof_map[j.name] = slice(len(ptype), len(ptype) + len(prims))
        for t, a, label in prims:
            ptype.append(t)
            paxis.append(a)
            names.append(f"{j.name}.{label}")
    inertia = np.array([spatial_inertia(s.mass, s.com_offset, s.inertia) for s in segs])
    mass = np.array([s.mass for s in segs])
    com = np.array([s.com_offset for s in segs]).reshape(nb, 3)
    arrays = (
        parent, Xtree, Rtree, ptree, dof_start, dof_count,
        np.array(ptype, dtype=np.int64), np.array(paxis, dtype=float).reshape(-1, 3),
        inertia.reshape(nb, 6, 6), mass, com,
    )
    return KinematicTree(segs, jts, dof_map, tuple(names), arrays)


def gimbal_mask(tree: KinematicTree) -> np.ndarray:
    """DoF whose magnitude is guarded: the middle angle of every Cardan triple."""
    mask = np.zeros(tree.ndof, dtype=np.bool_)
    for j in tree.joints:
        if j.kind in ("free6", "spherical3", "spherical_translational4"):
            off = 3 if j.kind == "free6" else 0
            mask[tree.dof_map[j.name].start + off + 1] = True
    return mask


@dataclass
class Pose:
    rotation: np.ndarray  # (nb, 3, 3) segment axes in world coordinates
    position: np.ndarray  # (nb, 3) segment frame origin
    com: np.ndarray  # (nb, 3) center of mass


def forward_kinematics(tree: KinematicTree, q) -> Pose:
    q = np.asarray(q, float)
    if q.shape != (tree.ndof,):
        raise ValueError(f"expected {tree.ndof} coordinates, got {q.shape}")
    _, _, _, _, Rw, pw = K.tree_kinematics(tree.arrays, q, np.zeros_like(q))
    com = pw + np.einsum("nij,nj->ni", Rw, tree.arrays[10])
    return Pose(Rw, pw, com)


def _check_state(tree, q, u, tau):
    q = np.asarray(q, float)
    u = np.asarray(u, float)
    tau = np.zeros(tree.ndof) if tau is None else np.asarray(tau, float)
    for name, a in (("q", q), ("u", u), ("forces", tau)):
        if a.shape != (tree.ndof,):
            raise ValueError(f"{name}: expected length {tree.ndof}, got {a.shape}")
    return q, u, tau


def _wrench_array(tree, external_wrenches):
    f = np.zeros((tree.nbodies, 6))
    if external_wrenches is not None:
        for key, w in dict(external_wrenches).items():
            i = tree.index(key) if isinstance(key, str) else int(key)
            f[i] += np.asarray(w, float)
    return f


def forward_dynamics_aba(tree: KinematicTree, q, u, generalized_forces=None,
                         external_wrenches=None, prescribed=None) -> np.ndarray:
    """Generalized accelerations by the articulated-body algorithm.

    ``external_wrenches`` maps segment (name or index) to a body-frame spatial
    force ``[moment; force]``. ``prescribed`` maps joint names to known
    accelerations of their DoF; those entries are returned unchanged.
    """
    q, u, tau = _check_state(tree, q, u, generalized_forces)
    fext = _wrench_array(tree, external_wrenches)
    mask = np.zeros(tree.nbodies, dtype=np.bool_)
    qdd_known = np.zeros(tree.ndof)
    for jname, acc in (prescribed or {}).items():
        i = [j.name for j in tree.joints].index(jname)
        mask[i] = True
        qdd_known[tree.dof_map[jname]] = acc
    Xup, S, v, c, _, _ = K.tree_kinematics(tree.arrays, q, u)
    qdd, _, status = K.aba(tree.arrays, Xup, S, v, c, tau, fext, mask, qdd_known, np.zeros(tree.ndof))
    if status != K.STATUS_OK:
        raise ModelError("singular articulated inertia")
    return qdd


def mechanical_energy(tree: KinematicTree, q, u, gravity=(0.0, 0.0, -9.81)) -> float:
    """Kinetic plus gravitational potential energy."""
    q = np.asarray(q, float)
    u = np.asarray(u, float)
    _, _, v, _, Rw, pw = K.tree_kinematics(tree.arrays, q, u)
    inertia, mass, com = tree.arrays[8], tree.arrays[9], tree.arrays[10]
    ke = 0.5 * np.einsum("ni,nij,nj->", v, inertia, v)
    com_w = pw + np.einsum("nij,nj->ni", Rw, com)
    pe = -float(np.sum(mass * (com_w @ np.asarray(gravity, float))))
    return float(ke + pe)
