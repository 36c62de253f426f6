"""Controller ablation runs and posture-drift reports.

Modes:

``full_pid``
    default PID bank through settling and excitation.
``no_integrator``
    identical settling; at the end of settling the integral terms are switched
    off, so the load they were carrying falls back on the passive restraints
    and the proportional terms.
``high_stiffness_passive``
    no controllers; every controlled DoF instead gets a passive restraint
    ``factor`` times stiffer than its passive-plus-proportional sum, with the
    passive-plus-derivative damping scaled by sqrt(factor) so each joint keeps
    its damping ratio.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .analysis import EstimatorConfig, trajectory_frfs
from .control import ControllerBank
from .forces import CardanRestraint
from .model import Model
from .simulation import RunResult, SimulationConfig, run

MODES = ("full_pid", "no_integrator", "high_stiffness_passive")
DRIFT_WINDOW = 1.0  # s averaged at each end, removes the vibration itself


def high_stiffness_model(model: Model, factor: float = 16.0) -> Model:
    gains = model.controllers.gains
    names = model.tree.dof_names
    restraints = []
    for r in model.restraints:
        sl = model.tree.dof_map[r.joint]
        k, c = list(r.stiffness), list(r.damping)
        for j, dof in enumerate(names[sl]):
            g = gains.get(dof)
            if g is not None:
                k[j] = factor * (k[j] + g.kp)
                c[j] = np.sqrt(factor) * (c[j] + g.kd)
        restraints.append(CardanRestraint(r.joint, tuple(k), tuple(c), r.neutral))
    return model.evolve(restraints=tuple(restraints), controllers=ControllerBank(names, {}))


def mode_setup(model: Model, mode: str, stiffness_factor: float = 16.0):
    """(model, post-settle controllers) for ``mode``."""
    if mode == "full_pid":
        return model, None
    if mode == "no_integrator":
        return model, model.controllers.with_terms({"P", "D"})
    if mode == "high_stiffness_passive":
        return high_stiffness_model(model, stiffness_factor), None
    raise ValueError(f"unknown ablation mode {mode!r}; expected one of {MODES}")


@dataclass
class DriftReport:
    mode: str
    head_pitch_drift_deg: float
    trunk_pitch_drift_deg: float
    trunk_forward_drift_m: float  # COM fore-aft relative to the seat, + forward
    joint_drift: dict = field(default_factory=dict)  # dof -> rad (m for sliding DoF)
    peak_gains: dict = field(default_factory=dict)  # pair key -> [freq, gain]
    real_time_factor: float = float("nan")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _ends(log, name, t_settle, t_end):
    t = log.t
    a = (t >= t_settle - DRIFT_WINDOW) & (t < t_settle)
    b = t >= t_end - DRIFT_WINDOW
    x = log[name]
    return float(np.mean(x[a])), float(np.mean(x[b]))


def drift_report(result: RunResult, model: Model, config: SimulationConfig, mode: str,
                 landmarks: Optional[dict] = None) -> DriftReport:
    log = result.log
    lm = landmarks or model.landmarks
    head, trunk = lm.get("head", "head"), lm.get("trunk", "upper_torso")
    te = log.t[-1] + 1.0 / log.sample_rate
    ts = config.settle_time

    def drift(name):
        a, b = _ends(log, name, ts, te)
        return b - a

    rel = log[f"{trunk}.pos_x"] - log["seat.disp_x"]
    t = log.t
    a = (t >= ts - DRIFT_WINDOW) & (t < ts)
    b = t >= te - DRIFT_WINDOW
    return DriftReport(
        mode,
        float(np.degrees(drift(f"{head}.pitch"))),
        float(np.degrees(drift(f"{trunk}.pitch"))),
        float(np.mean(rel[b]) - np.mean(rel[a])),
        {n: drift(f"q.{n}") for n in model.tree.dof_names if f"q.{n}" in log},
        real_time_factor=result.real_time_factor,
    )


def ablate(model: Model, mode: str, config: SimulationConfig, excitation,
           stiffness_factor: float = 16.0, estimator: Optional[EstimatorConfig] = None,
           restart=None) -> tuple[DriftReport, RunResult]:
    """Run one ablation mode and report drift, plus peak FRF gains if ``estimator`` is given."""
    if config.settle_time < DRIFT_WINDOW or config.duration - config.settle_time < DRIFT_WINDOW:
        raise ValueError(f"settling and excitation phases must each last at least {DRIFT_WINDOW} s")
    m, post = mode_setup(model, mode, stiffness_factor)
    result = run(m, config, excitation, restart=restart, post_settle_controllers=post)
    report = drift_report(result, m, config, mode)
    if estimator is not None:
        frfs = trajectory_frfs(result.log, config=estimator, t0=config.settle_time)
        report.peak_gains = {k: list(r.peak()) for k, r in frfs.items()}
    return report, result
