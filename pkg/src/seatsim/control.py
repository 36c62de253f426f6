"""Per-DoF PID joint-torque controllers holding a captured posture.

The derivative term acts on the measured joint rate, and the integrator is
clamped to a symmetric limit (anti-windup by clamping).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float
    kd: float
    integrator_limit: float = 3.0
    enabled_terms: frozenset = frozenset({"P", "I", "D"})

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("PID gains must be non-negative")
        if not self.integrator_limit > 0:
            raise ValueError("integrator_limit must be positive")
        object.__setattr__(self, "enabled_terms", frozenset(self.enabled_terms))


@dataclass
class PidState:
    reference: float
    integral: float = 0.0
    last_update: float = 0.0


def pid_torque(gains: PidGains, state: PidState, q: float, u: float, dt: float,
               t: Optional[float] = None) -> tuple[float, PidState]:
    """One controller update; returns the torque and the advanced state."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    on = gains.enabled_terms
    e = state.reference - q
    integral = state.integral
    if "I" in on:
        integral = float(np.clip(integral + e * dt, -gains.integrator_limit, gains.integrator_limit))
    tau = 0.0
    if "P" in on:
        tau += gains.kp * e
    if "I" in on:
        tau += gains.ki * integral
    if "D" in on:
        tau -= gains.kd * u
    when = state.last_update + dt if t is None else t
    return tau, PidState(state.reference, integral, when)


def integral_gain_for_settling(stiffness: float, settle_time: float = 3.0) -> float:
    """Integral gain so a load disturbance decays to 5% in about ``settle_time``.

    Once the fast proportional transient is over, the residual error of a
    well-damped joint decays with time constant (k + kp) / ki; three time
    constants bring it to 5%. ``stiffness`` is the total static stiffness k + kp.
    """
    return 3.0 * stiffness / settle_time


class ReferencesNotCaptured(RuntimeError):
    pass


@dataclass
class ControllerBank:
    """Independent PID loops on a subset of DoF of one tree."""

    dof_names: tuple[str, ...]
    gains: dict  # dof name -> PidGains
    enabled_terms: frozenset = frozenset({"P", "I", "D"})
    references: Optional[np.ndarray] = None
    integrals: Optional[np.ndarray] = None

    def __post_init__(self):
        unknown = set(self.gains) - set(self.dof_names)
        if unknown:
            raise ValueError(f"gains for unknown DoF: {sorted(unknown)}")
        self.enabled_terms = frozenset(self.enabled_terms)

    @property
    def controlled(self) -> list[str]:
        return [n for n in self.dof_names if n in self.gains]

    def with_terms(self, terms: Sequence[str]) -> "ControllerBank":
        return replace(self, enabled_terms=frozenset(terms),
                       references=None if self.references is None else self.references.copy(),
                       integrals=None if self.integrals is None else self.integrals.copy())

    def capture_references(self, q) -> np.ndarray:
        """Hold the current joint coordinates as set points; integrators keep their value."""
        self.references = np.array(q, float)
        if self.integrals is None:
            self.integrals = np.zeros(len(self.dof_names))
        return self.references.copy()

    def arrays(self) -> tuple:
        n = len(self.dof_names)
        mask = np.zeros(n, dtype=np.bool_)
        kp, ki, kd = np.zeros(n), np.zeros(n), np.zeros(n)
        lim = np.ones(n)
        for i, name in enumerate(self.dof_names):
            g = self.gains.get(name)
            if g is None:
                continue
            mask[i] = True
            # per-DoF term flags fold into the gains; bank flags stay global
            kp[i] = g.kp if "P" in g.enabled_terms else 0.0
            ki[i] = g.ki if "I" in g.enabled_terms else 0.0
            kd[i] = g.kd if "D" in g.enabled_terms else 0.0
            lim[i] = g.integrator_limit
        on = self.enabled_terms
        return (mask, kp, ki, kd, lim, "P" in on, "I" in on, "D" in on)

    def update(self, q, u, dt) -> np.ndarray:
        """Advance all integrators by ``dt`` and return the generalized torque vector."""
        if self.references is None:
            raise ReferencesNotCaptured("capture_references must be called first")
        tau, self.integrals = K.pid_update(
            self.arrays(), np.asarray(q, float), np.asarray(u, float),
            self.references, self.integrals, float(dt),
        )
        return tau


def controller_bank_update(bank: ControllerBank, q, u, dt) -> np.ndarray:
    return bank.update(q, u, dt)


@dataclass(frozen=True)
class TuningPlant:
    """Single rotational DoF with a passive restraint, loaded by a constant torque."""

    inertia: float
    stiffness: float
    damping: float
    disturbance: float = 1.0


@dataclass
class StepResponse:
    t: np.ndarray
    error: np.ndarray
    settling_time: float = field(default=float("nan"))


def step_disturbance_response(plant: TuningPlant, gains: PidGains, duration: float = 8.0,
                              dt: float = 1e-3, band: float = 0.05) -> StepResponse:
    """Apply the disturbance at t=0 with the joint at its set point.

    Settling time is the last instant the error magnitude exceeds ``band`` times
    its peak.
    """
    n = int(round(duration / dt))
    q = u = 0.0
    st = PidState(0.0)
    err = np.empty(n)
    for k in range(n):
        tau, st = pid_torque(gains, st, q, u, dt)
        acc = (plant.disturbance + tau - plant.stiffness * q - plant.damping * u) / plant.inertia
        u += dt * acc
        q += dt * u
        err[k] = st.reference - q
    t = np.arange(1, n + 1) * dt
    mag = np.abs(err)
    outside = np.nonzero(mag > band * mag.max())[0]
    ts = float(t[outside[-1]]) if outside.size else 0.0
    return StepResponse(t, err, ts)
