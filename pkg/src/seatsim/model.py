"""A simulatable system: tree, force elements, seat surfaces and controllers."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .control import ControllerBank
from .forces import (
    CardanRestraint, ContactPair, EllipsoidSurface, PlaneSurface, PointRestraint,
    initial_normals, pack_contacts, pack_forces,
)
from .rigidbody import KinematicTree, gimbal_mask

GRAVITY = (0.0, 0.0, -9.81)


@dataclass(frozen=True, eq=False)
class Model:
    tree: KinematicTree
    q_init: np.ndarray
    restraints: tuple[CardanRestraint, ...] = ()
    point_restraints: tuple[PointRestraint, ...] = ()
    surfaces: tuple = ()
    contacts: tuple[ContactPair, ...] = ()
    controllers: ControllerBank = None
    gravity: tuple = GRAVITY
    landmarks: dict = field(default_factory=dict)  # role -> segment name

    def __post_init__(self):
        q0 = np.asarray(self.q_init, float).reshape(self.tree.ndof)
        object.__setattr__(self, "q_init", q0)
        if self.controllers is None:
            object.__setattr__(self, "controllers", ControllerBank(self.tree.dof_names, {}))
        object.__setattr__(self, "restraints", tuple(self.restraints))
        object.__setattr__(self, "point_restraints", tuple(self.point_restraints))
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        object.__setattr__(self, "contacts", tuple(self.contacts))
        object.__setattr__(self, "force_arrays", pack_forces(
            self.tree, self.restraints, self.point_restraints, self.gravity, q0))
        object.__setattr__(self, "contact_arrays", pack_contacts(
            self.tree, self.contacts, self.surfaces))
        object.__setattr__(self, "gimbal", gimbal_mask(self.tree))

    @property
    def ndof(self) -> int:
        return self.tree.ndof

    def initial_normals(self) -> np.ndarray:
        return initial_normals(self.contact_arrays)

    def evolve(self, **changes) -> "Model":
        return replace(self, **changes)

    def describe(self) -> dict:
        """Canonical description of the model structure (coefficients excluded)."""

        def r(a):
            return np.round(np.asarray(a, float), 12).tolist()

        surfaces = []
        for s in self.surfaces:
            if isinstance(s, PlaneSurface):
                surfaces.append({"name": s.name, "plane": r(s.normal), "offset": round(s.offset, 12)})
            else:
                surfaces.append({"name": s.name, "semi_axes": r(s.semi_axes),
                                 "center": r(s.center), "rotation": r(s.rotation)})
        return {
            "tree": self.tree.describe(),
            "q_init": r(self.q_init),
            "restraints": [r_.joint for r_ in self.restraints],
            "point_restraints": [
                {"name": p.name, "a": p.body_a, "attach_a": r(p.attach_a),
                 "b": p.body_b, "attach_b": r(p.attach_b)}
                for p in self.point_restraints
            ],
            "surfaces": surfaces,
            "contacts": [[c.name, c.segment, c.ellipsoid, c.surface] for c in self.contacts],
            "controlled": self.controllers.controlled,
            "gravity": r(self.gravity),
        }

    def structure_hash(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def dump(self) -> str:
        """Human-diffable text dump including all coefficients."""
        lines = [f"# model {self.structure_hash()[:16]}"]
        t = self.tree
        lines.append(f"segments {t.nbodies} dof {t.ndof} mass {t.total_mass:.6f}")
        for s, j in zip(t.segments, t.joints):
            lines.append(
                f"segment {s.name} mass={s.mass:.6f} com={np.round(s.com_offset, 6).tolist()} "
                f"inertia={np.round(np.diag(s.inertia), 6).tolist()} "
                f"joint={j.name}:{j.kind} parent={j.parent} "
                f"at={np.round(j.parent_frame.translation, 6).tolist()}"
            )
            for e in s.geometry:
                lines.append(f"  ellipsoid {e.name} axes={np.round(e.semi_axes, 6).tolist()} "
                             f"center={np.round(e.center, 6).tolist()}")
        for name, q in zip(t.dof_names, self.q_init):
            lines.append(f"dof {name} q0={q:.9g}")
        for r_ in self.restraints:
            lines.append(f"restraint {r_.joint} k={list(r_.stiffness)} c={list(r_.damping)}")
        for p in self.point_restraints:
            lines.append(f"point_restraint {p.name} {p.body_a}-{p.body_b} k={p.stiffness} c={p.damping}")
        for s in self.surfaces:
            lines.append(f"surface {s.name} {type(s).__name__}")
        for c in self.contacts:
            lines.append(f"contact {c.name} {c.segment}.{c.ellipsoid}<->{c.surface} "
                         f"k={c.stiffness} c={c.damping} mu={c.friction_mu} eps={c.friction_vel_eps}")
        for name in self.controllers.controlled:
            g = self.controllers.gains[name]
            lines.append(f"pid {name} kp={g.kp} ki={g.ki} kd={g.kd} limit={g.integrator_limit}")
        return "\n".join(lines) + "\n"


__all__ = ["Model", "GRAVITY", "CardanRestraint", "PointRestraint", "ContactPair",
           "PlaneSurface", "EllipsoidSurface"]
