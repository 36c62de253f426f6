"""Fixed-step simulation with prescribed platform motion, settling, restart
snapshots and trajectory logging.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels as K
from .control import ControllerBank
from .excitation import ExcitationSignal, quiet
from .model import Model

SNAPSHOT_FORMAT = "seatsim-restart"
SNAPSHOT_VERSION = 1

INTEGRATORS = {"semi_implicit_euler": 0, "rk4": 1}


class SimulationDiverged(RuntimeError):
    def __init__(self, message, time=None, channel=None):
        super().__init__(message)
        self.time = time
        self.channel = channel


class SnapshotMismatch(ValueError):
    pass


@dataclass
class SystemState:
    q: np.ndarray
    u: np.ndarray
    step: int = 0
    h: float = 1e-3
    integrals: Optional[np.ndarray] = None
    contact_normals: Optional[np.ndarray] = None

    @property
    def t(self) -> float:
        return self.step * self.h

    def copy(self) -> "SystemState":
        return SystemState(
            self.q.copy(), self.u.copy(), self.step, self.h,
            None if self.integrals is None else self.integrals.copy(),
            None if self.contact_normals is None else self.contact_normals.copy(),
        )


def initial_state(model: Model, h: float = 1e-3) -> SystemState:
    n = model.ndof
    return SystemState(model.q_init.copy(), np.zeros(n), 0, h, np.zeros(n), model.initial_normals())


@dataclass
class RestartSnapshot:
    state: SystemState
    references: np.ndarray
    model_hash: str
    version: int = SNAPSHOT_VERSION

    def to_dict(self) -> dict:
        s = self.state
        return {
            "format": SNAPSHOT_FORMAT,
            "version": self.version,
            "model_hash": self.model_hash,
            "step": s.step,
            "h": s.h,
            "q": s.q.tolist(),
            "u": s.u.tolist(),
            "integrals": s.integrals.tolist(),
            "contact_normals": s.contact_normals.tolist(),
            "references": self.references.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RestartSnapshot":
        if d.get("format") != SNAPSHOT_FORMAT:
            raise SnapshotMismatch("not a restart snapshot")
        if d.get("version") != SNAPSHOT_VERSION:
            raise SnapshotMismatch(f"unsupported snapshot version {d.get('version')}")
        state = SystemState(
            np.array(d["q"], float), np.array(d["u"], float), int(d["step"]), float(d["h"]),
            np.array(d["integrals"], float), np.array(d["contact_normals"], float).reshape(-1, 3),
        )
        return cls(state, np.array(d["references"], float), d["model_hash"], d["version"])

    def __eq__(self, other):
        if not isinstance(other, RestartSnapshot):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def save_restart(path, snapshot: RestartSnapshot) -> None:
    # JSON float repr round-trips doubles exactly
    Path(path).write_text(json.dumps(snapshot.to_dict(), indent=1))


def load_restart(path, model: Optional[Model] = None) -> RestartSnapshot:
    snap = RestartSnapshot.from_dict(json.loads(Path(path).read_text()))
    if model is not None:
        check_snapshot(snap, model)
    return snap


def check_snapshot(snap: RestartSnapshot, model: Model) -> None:
    if snap.model_hash != model.structure_hash():
        raise SnapshotMismatch("snapshot was written for a different model structure")
    if snap.state.q.shape != (model.ndof,):
        raise SnapshotMismatch("snapshot DoF count does not match the model")


@dataclass
class TrajectoryLog:
    """Uniformly sampled channels; ``t`` is the first column of the CSV form."""

    t: np.ndarray
    channels: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return list(self.channels)

    def __getitem__(self, name) -> np.ndarray:
        if name == "t":
            return self.t
        try:
            return self.channels[name]
        except KeyError:
            raise KeyError(f"trajectory has no channel {name!r}") from None

    def __contains__(self, name) -> bool:
        return name == "t" or name in self.channels

    @property
    def sample_rate(self) -> float:
        return 1.0 / float(self.t[1] - self.t[0])

    def window(self, t0: float, t1: float = np.inf) -> "TrajectoryLog":
        sel = (self.t >= t0 - 1e-12) & (self.t <= t1 + 1e-12)
        return TrajectoryLog(self.t[sel], {k: v[sel] for k, v in self.channels.items()})

    def to_csv(self, path) -> None:
        header = ",".join(["t"] + self.names)
        data = np.column_stack([self.t] + [self.channels[n] for n in self.names])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.10g")

    @classmethod
    def from_csv(cls, path) -> "TrajectoryLog":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if header[0] != "t":
            raise ValueError(f"{path}: first column must be 't'")
        return cls(data[:, 0], {n: data[:, i] for i, n in enumerate(header) if i > 0})

    @staticmethod
    def concat(parts) -> "TrajectoryLog":
        parts = [p for p in parts if p.t.size]
        if not parts:
            return TrajectoryLog(np.zeros(0), {})
        names = parts[0].names
        return TrajectoryLog(
            np.concatenate([p.t for p in parts]),
            {n: np.concatenate([p.channels[n] for p in parts]) for n in names},
        )


CHANNEL_GROUPS = ("seat", "segments", "angles", "joints", "contacts", "controls")


@dataclass(frozen=True)
class SimulationConfig:
    h: float = 1e-3
    duration: float = 35.0
    settle_time: float = 5.0
    output_rate: float = 200.0
    integrator: str = "semi_implicit_euler"
    channels: tuple = CHANNEL_GROUPS

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("step size must be positive")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if not 0 <= self.settle_time <= self.duration:
            raise ValueError("settle_time must lie within the duration")
        if self.log_every < 1:
            raise ValueError("output rate exceeds the step rate")
        unknown = set(self.channels) - set(CHANNEL_GROUPS)
        if unknown:
            raise ValueError(f"unknown channel groups {sorted(unknown)}")

    @property
    def log_every(self) -> int:
        return int(round(1.0 / (self.h * self.output_rate)))

    def steps(self, seconds: float) -> int:
        return int(round(seconds / self.h))


def cardan_xyz(R: np.ndarray) -> np.ndarray:
    """Intrinsic x-y-z angles (roll, pitch, yaw) of rotation matrices (..., 3, 3)."""
    pitch = np.arcsin(np.clip(R[..., 0, 2], -1.0, 1.0))
    roll = np.arctan2(-R[..., 1, 2], R[..., 2, 2])
    yaw = np.arctan2(-R[..., 0, 1], R[..., 0, 0])
    return np.stack([roll, pitch, yaw], axis=-1)


class Simulator:
    """One model, one mutable state, one controller bank."""

    def __init__(self, model: Model, config: SimulationConfig = SimulationConfig(),
                 excitation: Optional[ExcitationSignal] = None,
                 controllers: Optional[ControllerBank] = None):
        self.model = model
        self.config = config
        if excitation is None:
            excitation = quiet(config.duration, 1.0 / config.h, config.settle_time)
        if abs(excitation.sample_rate * config.h - 1.0) > 1e-9:
            raise ValueError("excitation sample rate must equal 1/h")
        self.excitation = excitation
        self._plat = excitation.platform_array()
        bank = controllers if controllers is not None else model.controllers
        self.controllers = bank.with_terms(bank.enabled_terms)
        self.state = initial_state(model, config.h)
        self.wall_time = 0.0

    # -- state management -------------------------------------------------
    def capture_references(self) -> np.ndarray:
        refs = self.controllers.capture_references(self.state.q)
        self.controllers.integrals = self.state.integrals
        return refs

    def snapshot(self) -> RestartSnapshot:
        if self.controllers.references is None:
            raise RuntimeError("references have not been captured")
        return RestartSnapshot(self.state.copy(), self.controllers.references.copy(),
                               self.model.structure_hash())

    def restore(self, snap: RestartSnapshot) -> None:
        check_snapshot(snap, self.model)
        if abs(snap.state.h - self.config.h) > 0:
            raise SnapshotMismatch("snapshot step size differs from the configuration")
        self.state = snap.state.copy()
        self.controllers.references = snap.references.copy()
        self.controllers.integrals = self.state.integrals

    # -- integration ------------------------------------------------------
    def advance(self, n_steps: int) -> TrajectoryLog:
        """Integrate ``n_steps`` steps; returns the log rows produced on the way."""
        if self.controllers.references is None:
            self.capture_references()
        st = self.state
        m = self.model
        tree = m.tree
        le = self.config.log_every
        k0 = st.step
        first = -(-k0 // le) * le
        rows = max(0, -(-(k0 + n_steps - first) // le))
        nb, nd, nc = tree.nbodies, tree.ndof, len(m.contacts)
        buf = dict(
            t=np.zeros(rows), q=np.zeros((rows, nd)), u=np.zeros((rows, nd)),
            qdd=np.zeros((rows, nd)), pos=np.zeros((rows, nb, 3)), vel=np.zeros((rows, nb, 3)),
            acc=np.zeros((rows, nb, 3)), omega=np.zeros((rows, nb, 3)),
            rot=np.zeros((rows, nb, 3, 3)), cf=np.zeros((rows, nc, 3)),
            ctrl=np.zeros((rows, nd)), plat=np.zeros((rows, 3, 3)),
        )
        if k0 + n_steps >= self._plat.shape[0]:
            raise ValueError("excitation is shorter than the requested integration span")
        tic = time.perf_counter()
        q, u, integ, normals, done, nrow, status = K.run_steps(
            tree.arrays, m.force_arrays, m.contact_arrays, self.controllers.arrays(), m.gimbal,
            st.q, st.u, self.controllers.references, st.integrals, st.contact_normals,
            k0, n_steps, self.config.h, self._plat, INTEGRATORS[self.config.integrator], le,
            buf["t"], buf["q"], buf["u"], buf["qdd"], buf["pos"], buf["vel"], buf["acc"],
            buf["omega"], buf["rot"], buf["cf"], buf["ctrl"], buf["plat"],
        )
        self.wall_time += time.perf_counter() - tic
        self.state = SystemState(q, u, k0 + done, st.h, integ, normals)
        self.controllers.integrals = integ
        if status != K.STATUS_OK:
            self._raise(status, q, u, k0 + done)
        return self._channels({k: v[:nrow] for k, v in buf.items()})

    def _raise(self, status, q, u, step):
        t = step * self.config.h
        names = self.model.tree.dof_names
        if status == K.STATUS_GIMBAL:
            bad = [n for n, x, g in zip(names, q, self.model.gimbal) if g and abs(x) > 1.2]
            raise SimulationDiverged(
                f"Cardan middle angle beyond 1.2 rad at t={t:.4f} s ({bad[0] if bad else '?'})",
                t, bad[0] if bad else None)
        if status == K.STATUS_SINGULAR:
            raise SimulationDiverged(f"singular articulated inertia at t={t:.4f} s", t)
        bad = next((f"u.{n}" for n, x in zip(names, u) if not np.isfinite(x)), None)
        bad = next((f"q.{n}" for n, x in zip(names, q) if not np.isfinite(x)), bad)
        raise SimulationDiverged(f"state became non-finite at t={t:.4f} s; first channel {bad}", t, bad)

    def _channels(self, b) -> TrajectoryLog:
        m = self.model
        groups = self.config.channels
        ch = {}
        if "seat" in groups:
            for qi, qname in enumerate(("disp", "vel", "acc")):
                for ai, ax in enumerate("xyz"):
                    ch[f"seat.{qname}_{ax}"] = b["plat"][:, qi, ai]
        segs = [s.name for s in m.tree.segments]
        if "segments" in groups:
            for i, s in enumerate(segs):
                for key, label in (("pos", "pos"), ("vel", "vel"), ("acc", "acc"), ("omega", "omega")):
                    for ai, ax in enumerate("xyz"):
                        ch[f"{s}.{label}_{ax}"] = b[key][:, i, ai]
        if "angles" in groups:
            ang = cardan_xyz(b["rot"])
            for i, s in enumerate(segs):
                for ai, ax in enumerate(("roll", "pitch", "yaw")):
                    ch[f"{s}.{ax}"] = ang[:, i, ai]
        if "joints" in groups:
            for d, name in enumerate(m.tree.dof_names):
                ch[f"q.{name}"] = b["q"][:, d]
                ch[f"u.{name}"] = b["u"][:, d]
        if "contacts" in groups:
            for j, c in enumerate(m.contacts):
                for ai, ax in enumerate("xyz"):
                    ch[f"contact.{c.name}.f{ax}"] = b["cf"][:, j, ai]
        if "controls" in groups:
            for d, name in enumerate(m.tree.dof_names):
                if name in self.controllers.gains:
                    ch[f"ctrl.{name}"] = b["ctrl"][:, d]
        return TrajectoryLog(b["t"], ch)

    def step(self) -> SystemState:
        self.advance(1)
        return self.state


def step(model: Model, state: SystemState, controllers: ControllerBank,
         excitation: Optional[ExcitationSignal] = None, h: float = 1e-3,
         integrator: str = "semi_implicit_euler") -> SystemState:
    """Single integration step from ``state``; ``controllers`` must hold references."""
    cfg = SimulationConfig(h=h, duration=max((state.step + 2) * h, h), settle_time=0.0,
                           output_rate=1.0 / h, integrator=integrator, channels=())
    if excitation is None:
        excitation = quiet(cfg.duration, 1.0 / h)
    sim = Simulator(model, cfg, excitation, controllers)
    sim.controllers.references = controllers.references
    sim.state = state.copy()
    if sim.state.integrals is None:
        sim.state.integrals = np.zeros(model.ndof)
    if sim.state.contact_normals is None:
        sim.state.contact_normals = model.initial_normals()
    sim.advance(1)
    controllers.integrals = sim.state.integrals
    return sim.state


@dataclass
class RunResult:
    log: TrajectoryLog
    snapshot: Optional[RestartSnapshot]
    state: SystemState
    wall_time: float
    simulated_time: float

    @property
    def real_time_factor(self) -> float:
        return self.simulated_time / self.wall_time if self.wall_time > 0 else float("inf")


def run(model: Model, config: SimulationConfig = SimulationConfig(),
        excitation: Optional[ExcitationSignal] = None,
        restart: Optional[RestartSnapshot] = None,
        controllers: Optional[ControllerBank] = None,
        post_settle_controllers: Optional[ControllerBank] = None) -> RunResult:
    """Settle, capture references, then run the excitation phase.

    Controllers track the initial posture during settling; references are
    re-captured at the end of settling, where the restart snapshot is taken.
    With ``restart`` the settling phase is skipped. ``post_settle_controllers``
    swaps the controller settings (gains/terms) for the excitation phase while
    keeping the captured references and integrator states.
    """
    sim = Simulator(model, config, excitation, controllers)
    n_total = config.steps(config.duration)
    n_settle = config.steps(config.settle_time)
    parts = []
    if restart is not None:
        sim.restore(restart)
        snap = restart
    else:
        sim.capture_references()
        parts.append(sim.advance(n_settle))
        sim.capture_references()
        snap = sim.snapshot()
    if post_settle_controllers is not None:
        refs, integ = sim.controllers.references, sim.controllers.integrals
        sim.controllers = post_settle_controllers.with_terms(post_settle_controllers.enabled_terms)
        sim.controllers.references, sim.controllers.integrals = refs, integ
    remaining = n_total - sim.state.step
    if remaining > 0:
        parts.append(sim.advance(remaining))
    sim_time = (n_total - (restart.state.step if restart is not None else 0)) * config.h
    return RunResult(TrajectoryLog.concat(parts), snap, sim.state, sim.wall_time, sim_time)


def warm_up(model: Model, config: SimulationConfig) -> float:
    """Two-step run that loads or compiles the numerical kernels; returns the seconds spent.

    The first run after installation compiles the kernels and caches them on disk.
    """
    t0 = time.perf_counter()
    run(model, SimulationConfig(h=config.h, duration=2 * config.h, settle_time=config.h, output_rate=1.0 / config.h,
                                integrator=config.integrator, channels=config.channels))
    return time.perf_counter() - t0
