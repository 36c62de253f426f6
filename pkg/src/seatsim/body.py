"""The 12-segment seated human model and its seat environment.

Geometry is defined in the seated erect reference posture (thighs horizontal,
knees and ankles at 90 degrees) with every segment frame aligned to the world
axes, so the default joint coordinates are all zero and the Cardan middle
angles stay well away from gimbal lock.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Optional

import numpy as np

from .control import ControllerBank, PidGains, TuningPlant, integral_gain_for_settling
from .forces import (
    CardanRestraint, ContactPair, EllipsoidSurface, PlaneSurface, PointRestraint,
    ellipsoid_ellipsoid_penetration, ellipsoid_plane_penetration,
)
from .model import GRAVITY, Model
from .rigidbody import WORLD, Ellipsoid, JointDef, ModelError, SegmentDef, Transform, build_tree, forward_kinematics

SIDES = ("l", "r")
LANDMARKS = {"head": "head", "trunk": "upper_torso", "pelvis": "pelvis"}
MAX_INITIAL_PENETRATION = 0.005


@lru_cache(maxsize=1)
def _table() -> dict:
    return json.loads(resources.files("seatsim").joinpath("data/ehm.json").read_text())


def model_table() -> dict:
    """A copy of the shipped anthropometric/model data file."""
    return copy.deepcopy(_table())


def _mirrored(table) -> list[dict]:
    """Expand left-side leg segments into a symmetric left/right pair."""
    out = []
    for s in table["segments"]:
        out.append(s)
        if s["name"].endswith("_l"):
            r = copy.deepcopy(s)
            flip = lambda v: [v[0], -v[1], v[2]]  # noqa: E731
            r["name"] = s["name"][:-2] + "_r"
            r["joint"] = s["joint"][:-2] + "_r"
            if r["parent"].endswith("_l"):
                r["parent"] = r["parent"][:-2] + "_r"
            r["joint_at"] = flip(s["joint_at"])
            r["com"] = flip(s["com"])
            for e in r["ellipsoids"]:
                e["center"] = flip(e["center"])
            out.append(r)
    return out


def _default_fractions() -> dict:
    return {s["name"]: s["mass_fraction"] for s in _mirrored(_table())}


@dataclass(frozen=True)
class Anthropometry:
    total_mass: float = 75.3
    stature: float = 1.76
    sitting_height: float = 0.92
    mass_fractions: dict = field(default_factory=_default_fractions)
    length_scales: dict = field(default_factory=dict)  # per-segment override of the group scale

    def __post_init__(self):
        if not (self.total_mass > 0 and self.stature > 0 and self.sitting_height > 0):
            raise ModelError("anthropometry: mass and lengths must be positive")
        total = sum(self.mass_fractions.values())
        if abs(total - 1.0) > 1e-6:
            raise ModelError(f"anthropometry: mass fractions sum to {total:.8f}, not 1")
        if any(f <= 0 for f in self.mass_fractions.values()):
            raise ModelError("anthropometry: mass fractions must be positive")
        if any(s <= 0 for s in self.length_scales.values()):
            raise ModelError("anthropometry: length scales must be positive")

    def scale(self, segment: str, group: str) -> float:
        if segment in self.length_scales:
            return self.length_scales[segment]
        ref = _table()["reference"]
        if group == "leg":
            return self.stature / ref["stature"]
        return self.sitting_height / ref["sitting_height"]


@dataclass(frozen=True)
class PadConfig:
    name: str
    center: tuple
    semi_axes: tuple


@dataclass(frozen=True)
class SeatConfig:
    """Seat surfaces in platform coordinates (the platform carries floor, pan and backrest)."""

    floor_height: float = -0.411
    seat_pan: tuple = ()
    backrest_pads: Optional[tuple] = None  # None -> defaults; () -> no backrest
    backrest_angle: float = 0.0  # recline about the hinge, rad
    backrest_hinge: tuple = (-0.15, 0.0, 0.0)
    seat_pan_raise: float = 0.0
    contact_stiffness: float = 5.0e4
    contact_damping: float = 500.0
    friction_mu: float = 0.5
    friction_vel_eps: float = 0.05
    flesh_stiffness: float = 2.0e4  # pelvis-seat, split over two ischial points, N/m
    flesh_damping: float = 400.0
    back_flesh_stiffness: float = 500.0
    back_flesh_damping: float = 50.0

    @classmethod
    def default(cls, **overrides) -> "SeatConfig":
        s = _table()["seat"]
        base = dict(
            floor_height=s["floor_height"],
            seat_pan=tuple(PadConfig(p["name"], tuple(p["center"]), tuple(p["semi_axes"])) for p in s["seat_pan"]),
            backrest_pads=tuple(PadConfig(p["name"], tuple(p["center"]), tuple(p["semi_axes"]))
                                for p in s["backrest_pads"]),
            backrest_hinge=tuple(s["backrest_hinge"]),
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class JointGroup:
    stiffness: tuple
    damping: tuple
    kp: Optional[tuple] = None
    kd: Optional[tuple] = None
    ki: Optional[tuple] = None  # None -> tuning rule
    integrator_limit: float = 1.5

    @property
    def controlled(self) -> bool:
        return self.kp is not None


def default_joint_groups() -> dict:
    out = {}
    for name, g in _table()["joint_groups"].items():
        out[name] = JointGroup(
            tuple(g["stiffness"]), tuple(g["damping"]),
            tuple(g["kp"]) if "kp" in g else None,
            tuple(g["kd"]) if "kd" in g else None,
            tuple(g["ki"]) if "ki" in g else None,
            g.get("integrator_limit", 1.5),
        )
    return out


def _group_of(joint: str) -> str:
    for side in SIDES:
        if joint.endswith("_" + side):
            return joint[:-2]
    return joint


def build_segments(anthro: Anthropometry):
    """Segments and joints of the EHM (no seat)."""
    rows = _mirrored(_table())
    if set(anthro.mass_fractions) != {r["name"] for r in rows}:
        raise ModelError("anthropometry: mass fractions must name every segment")
    by_name = {r["name"]: r for r in rows}
    segments, joints = [], []
    # joint positions in the scaled world: parent joint + parent scale * (offset)
    world_at = {}
    for r in rows:
        sc = anthro.scale(r["name"], r["group"])
        if r["parent"] == WORLD:
            at = np.array(r["joint_at"], float) * sc
            rel = at
        else:
            p = by_name[r["parent"]]
            psc = anthro.scale(p["name"], p["group"])
            rel = psc * (np.array(r["joint_at"]) - np.array(p["joint_at"]))
            at = world_at[p["name"]] + rel
        world_at[r["name"]] = at
        origin = np.array(r["joint_at"], float)
        mass = anthro.total_mass * anthro.mass_fractions[r["name"]]
        gyr = sc * np.array(r["gyration"], float)
        ells = tuple(
            Ellipsoid(e["name"], sc * np.array(e["semi_axes"]), sc * (np.array(e["center"]) - origin))
            for e in r["ellipsoids"]
        )
        segments.append(SegmentDef(r["name"], mass, np.diag(mass * gyr**2),
                                   sc * (np.array(r["com"]) - origin), ells))
        axes = tuple(np.array(a, float) for a in r.get("axes", ()))
        joints.append(JointDef(r["joint"], r["kind"], r["parent"], r["name"], Transform(np.eye(3), rel), axes))
    return segments, joints


def build_ehm(anthro: Anthropometry = Anthropometry(), seat: Optional[SeatConfig] = None,
              joint_groups: Optional[dict] = None, settle_target: float = 3.0,
              controlled_groups: Optional[tuple] = None, posture: Optional[dict] = None) -> Model:
    """Assemble the efficient human model with restraints, controllers and seat.

    ``posture`` maps DoF names to initial coordinates (offsets from the
    reference geometry); restraint neutral angles follow the initial posture.
    """
    segments, joints = build_segments(anthro)
    tree = build_tree(segments, joints)
    groups = default_joint_groups() if joint_groups is None else joint_groups
    q0 = np.zeros(tree.ndof)
    for name, val in (posture or {}).items():
        q0[tree.dof_index(name)] = val

    restraints, gains = [], {}
    for j in tree.joints:
        if j.kind == "free6":
            continue
        g = groups.get(_group_of(j.name))
        if g is None:
            raise ModelError(f"no restraint parameters for joint group {_group_of(j.name)!r}")
        restraints.append(CardanRestraint(j.name, tuple(g.stiffness), tuple(g.damping)))
        use = g.controlled and (controlled_groups is None or _group_of(j.name) in controlled_groups)
        if not use:
            continue
        sl = tree.dof_map[j.name]
        for k, dof in enumerate(tree.dof_names[sl]):
            total = g.stiffness[k] + g.kp[k]
            ki = g.ki[k] if g.ki is not None else integral_gain_for_settling(total, settle_target)
            gains[dof] = PidGains(g.kp[k], ki, g.kd[k], g.integrator_limit)
    bank = ControllerBank(tree.dof_names, gains)
    model = Model(tree, q0, restraints, controllers=bank, gravity=GRAVITY, landmarks=dict(LANDMARKS))
    if seat is not None:
        model = build_seat(seat, model)
    return model


def _rot_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def build_seat(cfg: SeatConfig, model: Model) -> Model:
    """Attach floor, seat pan and backrest surfaces plus contacts and flesh restraints."""
    if not cfg.seat_pan:
        raise ModelError("seat configuration needs at least one seat-pan ellipsoid")
    surfaces = [PlaneSurface("floor", (0.0, 0.0, 1.0), cfg.floor_height)]
    lift = np.array([0.0, 0.0, cfg.seat_pan_raise])
    for p in cfg.seat_pan:
        surfaces.append(EllipsoidSurface(f"seat_pan.{p.name}", p.semi_axes, np.array(p.center) + lift))
    pads = cfg.backrest_pads if cfg.backrest_pads is not None else SeatConfig.default().backrest_pads
    hinge = np.array(cfg.backrest_hinge, float)
    Rb = _rot_y(-cfg.backrest_angle)
    for p in pads:
        c = hinge + Rb @ (np.array(p.center) - hinge)
        surfaces.append(EllipsoidSurface(f"backrest.{p.name}", p.semi_axes, c, Rb))

    kw = dict(stiffness=cfg.contact_stiffness, damping=cfg.contact_damping,
              friction_mu=cfg.friction_mu, friction_vel_eps=cfg.friction_vel_eps)
    names = {s.name for s in surfaces}
    contacts = [ContactPair(f"foot_floor_{s}", f"foot_{s}", "sole", "floor", **kw) for s in SIDES]
    seat_pairs = [(f"pelvis_seat_{s}", "pelvis", f"buttock_{s}", f"seat_pan.rear_{s}") for s in SIDES]
    seat_pairs += [(f"thigh_seat_{s}", f"thigh_{s}", "thigh", f"seat_pan.front_{s}") for s in SIDES]
    seat_pairs += [("lower_back", "lower_torso", "lumbar_back", "backrest.lower_pad"),
                   ("upper_back", "upper_torso", "scapula", "backrest.upper_pad")]
    for name, seg, ell, surf in seat_pairs:
        if surf in names:
            contacts.append(ContactPair(name, seg, ell, surf, **kw))

    tree = model.tree
    pose = forward_kinematics(tree, model.q_init)

    def world_point(seg, local):
        i = tree.index(seg)
        return pose.position[i] + pose.rotation[i] @ local

    point_restraints = []
    pelvis = {e.name: e for e in tree.segments[tree.index("pelvis")].geometry}
    # one flesh restraint under each ischial tuberosity
    for side in SIDES:
        b = pelvis[f"buttock_{side}"]
        ischium = b.center - np.array([0.0, 0.0, b.semi_axes[2]])
        point_restraints.append(PointRestraint(f"pelvis_flesh_{side}", "pelvis", ischium, "platform",
                                               world_point("pelvis", ischium), 0.5 * cfg.flesh_stiffness,
                                               0.5 * cfg.flesh_damping))
    for seg, ell, surf in (("lower_torso", "lumbar_back", "backrest.lower_pad"),
                           ("upper_torso", "scapula", "backrest.upper_pad")):
        if surf not in names:
            continue
        e = {x.name: x for x in tree.segments[tree.index(seg)].geometry}[ell]
        back = e.center - np.array([e.semi_axes[0], 0, 0])
        point_restraints.append(PointRestraint(f"{seg}_flesh", seg, back, "platform",
                                               world_point(seg, back), cfg.back_flesh_stiffness,
                                               cfg.back_flesh_damping))

    _check_initial_penetration(tree, pose, contacts, surfaces)
    return model.evolve(surfaces=tuple(surfaces), contacts=tuple(contacts),
                        point_restraints=tuple(model.point_restraints) + tuple(point_restraints))


def initial_penetrations(model: Model) -> dict:
    pose = forward_kinematics(model.tree, model.q_init)
    return _penetrations(model.tree, pose, model.contacts, model.surfaces)


def _penetrations(tree, pose, contacts, surfaces):
    by = {s.name: s for s in surfaces}
    out = {}
    for c in contacts:
        i = tree.index(c.segment)
        e = {x.name: x for x in tree.segments[i].geometry}[c.ellipsoid]
        R = pose.rotation[i] @ e.rotation
        ctr = pose.position[i] + pose.rotation[i] @ e.center
        s = by[c.surface]
        if isinstance(s, PlaneSurface):
            pen = ellipsoid_plane_penetration(R, ctr, e.semi_axes, s.normal, s.offset)
        else:
            pen = ellipsoid_ellipsoid_penetration(R, ctr, e.semi_axes, s.rotation, s.center,
                                                  s.semi_axes, previous_normal=(0, 0, 1))
        out[c.name] = 0.0 if pen is None else pen.depth
    return out


def _check_initial_penetration(tree, pose, contacts, surfaces):
    pens = _penetrations(tree, pose, contacts, surfaces)
    deep = {k: v for k, v in pens.items() if v > MAX_INITIAL_PENETRATION}
    if deep:
        worst = max(deep, key=deep.get)
        raise ModelError(
            f"initial interpenetration {deep[worst] * 1000:.1f} mm at contact {worst!r} "
            f"exceeds {MAX_INITIAL_PENETRATION * 1000:.0f} mm"
        )


def environment_groups(model: Model) -> dict:
    """Surfaces grouped as floor / seat_pan / backrest."""
    groups: dict = {}
    for s in model.surfaces:
        groups.setdefault(s.name.split(".")[0], []).append(s.name)
    return groups


def joint_tuning_plant(model: Model, dof: str, disturbance: Optional[float] = None) -> tuple[TuningPlant, PidGains]:
    """1-DoF analog of one controlled joint DoF at the initial posture.

    Inertia is the diagonal joint-space inertia of the DoF; the disturbance
    defaults to the magnitude of the gravity load on it, or a unit load for
    DoFs that gravity does not load in the initial posture.
    """
    from .forces import assemble_generalized_forces
    from .oracle import mass_matrix

    i = model.tree.dof_index(dof)
    M = mass_matrix(model.tree, model.q_init)
    bare = Model(model.tree, model.q_init, gravity=model.gravity)
    tau, _ = assemble_generalized_forces(bare, model.q_init, np.zeros(model.ndof))
    k = model.force_arrays[1][i]
    c = model.force_arrays[2][i]
    d = abs(tau[i]) if disturbance is None else disturbance
    if disturbance is None and d < 1e-9:
        d = 1.0
    return TuningPlant(M[i, i], k, c, d), model.controllers.gains[dof]
