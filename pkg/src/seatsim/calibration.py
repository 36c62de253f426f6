"""Derivative-free fitting of model FRF gains to reference gain curves.

The optimizer is Nelder-Mead (scipy) on unbounded variables mapped to the
parameter box through a logistic transform, so every evaluated point lies
inside its bounds. Restarts begin from the best point with a smaller simplex.
"""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize as sopt
from scipy import signal

from .analysis import BODY_LABELS, EstimatorConfig, FrequencyResponse, trajectory_frfs
from .config import RunConfig, get_path, with_values
from .simulation import RunResult, SimulationDiverged, TrajectoryLog, run

GAIN_FLOOR = 1e-12


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    path: str
    lower: float
    upper: float
    scale: str = "linear"  # or "log"

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"parameter {self.name!r}: lower bound must be below upper bound")
        if self.scale not in ("linear", "log"):
            raise ValueError(f"parameter {self.name!r}: unknown scale {self.scale!r}")
        if self.scale == "log" and not self.lower > 0:
            raise ValueError(f"parameter {self.name!r}: log-scaled bounds must be positive")

    def _box(self):
        if self.scale == "log":
            return math.log(self.lower), math.log(self.upper)
        return self.lower, self.upper

    def from_unbounded(self, z: float) -> float:
        lo, hi = self._box()
        s = 0.5 * (1.0 + math.tanh(0.5 * z))  # overflow-free logistic
        u = lo + (hi - lo) * s
        x = math.exp(u) if self.scale == "log" else u
        return min(max(x, self.lower), self.upper)

    def to_unbounded(self, x: float) -> float:
        lo, hi = self._box()
        u = math.log(x) if self.scale == "log" else x
        s = min(max((u - lo) / (hi - lo), 1e-12), 1 - 1e-12)
        return math.log(s / (1 - s))

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper


def _label(output: str) -> str:
    seg = output.split(".")[0]
    return BODY_LABELS.get(seg, seg)


@dataclass
class ObjectiveConfig:
    reference: dict  # pair key -> FrequencyResponse
    weights: dict = field(default_factory=lambda: {"head": 1.0, "trunk": 1.0, "pelvis": 0.3})
    band: tuple = (0.5, 12.0)
    penalty: float = 1.0e3

    def __post_init__(self):
        if not self.reference:
            raise ValueError("objective needs at least one reference FRF")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("channel weights must be non-negative")
        if not any(self.weights.get(_label(r.output), 0.0) > 0 for r in self.reference.values()):
            raise ValueError("all channel weights are zero")
        if not (math.isfinite(self.penalty) and self.penalty > 0):
            raise ValueError("penalty must be finite and positive")

    def weight(self, output: str) -> float:
        return float(self.weights.get(_label(output), 0.0))


def channel_costs(model_frfs: dict, cfg: ObjectiveConfig) -> dict:
    """Weighted band-mean squared log-gain error per channel pair."""
    lo, hi = cfg.band
    out = {}
    for key, ref in cfg.reference.items():
        if key not in model_frfs:
            raise KeyError(f"model FRFs lack pair {key}")
        mod = model_frfs[key]
        m = (ref.freq >= lo) & (ref.freq <= hi)
        g_ref = ref.gain[m]
        g_mod = np.interp(ref.freq[m], mod.freq, mod.gain)
        err = np.log(np.maximum(g_mod, GAIN_FLOOR)) - np.log(np.maximum(g_ref, GAIN_FLOOR))
        out[key] = cfg.weight(ref.output) * float(np.mean(err**2)) if err.size else 0.0
    return out


def frf_cost(model_frfs: dict, cfg: ObjectiveConfig) -> float:
    """Total cost; feasible costs saturate at half the penalty so a diverged run always ranks worse."""
    total = sum(channel_costs(model_frfs, cfg).values())
    if not math.isfinite(total):
        return cfg.penalty
    return min(total, 0.5 * cfg.penalty)


# ---------------------------------------------------------------------------
# simulation templates


def lumped_log(masses, stiffness, damping, excitation, output_rate: float = 200.0,
               bodies=("pelvis", "upper_torso", "head")) -> TrajectoryLog:
    """Vertical seat -> pelvis -> trunk -> head spring-damper chain driven by seat z acceleration.

    Coordinates are displacements relative to the seat; outputs are absolute
    accelerations. Discretized exactly (zero-order hold on the input).
    """
    m = np.asarray(masses, float)
    k = np.asarray(stiffness, float)
    c = np.asarray(damping, float)
    if m.shape != (3,) or k.shape != (3,) or c.shape != (3,):
        raise ValueError("lumped model needs three masses, stiffnesses and dampings")
    K = np.array([[k[0] + k[1], -k[1], 0], [-k[1], k[1] + k[2], -k[2]], [0, -k[2], k[2]]])
    C = np.array([[c[0] + c[1], -c[1], 0], [-c[1], c[1] + c[2], -c[2]], [0, -c[2], c[2]]])
    Mi = np.diag(1.0 / m)
    A = np.block([[np.zeros((3, 3)), np.eye(3)], [-Mi @ K, -Mi @ C]])
    B = np.concatenate([np.zeros(3), -np.ones(3)])[:, None]
    Cout = np.hstack([-Mi @ K, -Mi @ C])
    D = np.zeros((3, 1))  # relative acceleration + seat acceleration = absolute
    fs = excitation.sample_rate
    Ad, Bd, Cd, Dd, _ = signal.cont2discrete((A, B, Cout, D), 1.0 / fs, method="zoh")
    a_seat = excitation.acceleration[2]
    # modal form: one complex first-order recursion per eigenvalue
    lam, V = np.linalg.eig(Ad)
    if np.linalg.cond(V) > 1e10:
        _, y, _ = signal.dlsim((Ad, Bd, Cd, Dd, 1.0 / fs), a_seat)
    else:
        b = np.linalg.solve(V, Bd[:, 0])
        with np.errstate(over="ignore", invalid="ignore"):
            W = np.stack([signal.lfilter([0.0, bi], [1.0, -li], a_seat) for li, bi in zip(lam, b)], axis=1)
            y = np.real(W @ (Cd @ V).T)
    y = y + a_seat[:, None]
    if not np.all(np.isfinite(y)):
        raise SimulationDiverged("lumped model response is not finite")
    step = max(1, int(round(fs / output_rate)))
    sl = slice(0, a_seat.size - 1, step)
    ch = {"seat.acc_z": a_seat[sl]}
    for i, b in enumerate(bodies):
        ch[f"{b}.acc_z"] = y[sl, i]
    return TrajectoryLog(excitation.t[sl], ch)


class SimulationTemplate:
    """Config -> FRFs for one candidate parameter set."""

    def __init__(self, config: RunConfig, specs: Sequence[ParameterSpec], pairs=None):
        self.config = config
        self.specs = tuple(specs)
        self.kind = config.calibration.model
        self.excitation = config.excitation_signal()
        self.estimator = config.estimator()
        if self.kind == "lumped3":
            if "z" not in config.excitation.axes:
                raise ValueError("the lumped model is driven by vertical (z) excitation")
            self.pairs = pairs or [("seat.acc_z", f"{b}.acc_z") for b in config.analysis.bodies]
        else:
            self.pairs = pairs or config.channel_pairs()
        self._snapshot = None
        self._hash = None

    def candidate(self, x) -> RunConfig:
        return with_values(self.config, {s.path: float(v) for s, v in zip(self.specs, x)})

    def restart_snapshot(self):
        """Settle the base model once; candidates resume from its end state."""
        if self._snapshot is None:
            model = self.config.build_model()
            sim_cfg = self.config.simulation_config()
            settle = type(sim_cfg)(h=sim_cfg.h, duration=sim_cfg.settle_time, settle_time=sim_cfg.settle_time,
                                   output_rate=sim_cfg.output_rate, integrator=sim_cfg.integrator,
                                   channels=())
            res: RunResult = run(model, settle, self.excitation)
            self._snapshot = res.snapshot
            self._hash = model.structure_hash()
        return self._snapshot

    def simulate(self, cfg: RunConfig) -> TrajectoryLog:
        if self.kind == "lumped3":
            lp = cfg.calibration.lumped
            return lumped_log(lp.masses, lp.stiffness, lp.damping, self.excitation,
                              cfg.simulation.output_rate, tuple(cfg.analysis.bodies))
        model = cfg.build_model()
        snap = self.restart_snapshot()
        restart = snap if model.structure_hash() == self._hash else None
        return run(model, cfg.simulation_config(), self.excitation, restart=restart).log

    def frfs(self, x) -> dict:
        log = self.simulate(self.candidate(x))
        return trajectory_frfs(log, self.pairs, self.estimator, t0=self.config.excitation.settle_time)


class CalibrationObjective:
    """Picklable objective: parameter vector (physical units) -> cost."""

    def __init__(self, template: SimulationTemplate, cfg: ObjectiveConfig):
        self.template = template
        self.cfg = cfg

    @property
    def specs(self):
        return self.template.specs

    def __call__(self, x) -> float:
        x = np.asarray(x, float)
        bad = [s.name for s, v in zip(self.specs, x) if not s.contains(v)]
        if bad:
            raise ValueError(f"parameters out of bounds: {bad}")
        try:
            frfs = self.template.frfs(x)
        except (SimulationDiverged, FloatingPointError, np.linalg.LinAlgError):
            return self.cfg.penalty
        except ValueError as exc:
            if "no power" in str(exc) or "singular" in str(exc):
                return self.cfg.penalty
            raise
        return frf_cost(frfs, self.cfg)


def objective(params, template: SimulationTemplate, cfg: ObjectiveConfig) -> float:
    return CalibrationObjective(template, cfg)(params)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class Evaluation:
    index: int
    x: np.ndarray
    cost: float
    best_cost: float


@dataclass
class OptimizeResult:
    x: np.ndarray
    cost: float
    history: list
    names: tuple
    stable_evaluations: int = 0

    @property
    def evaluations(self) -> int:
        return len(self.history)

    def params(self) -> dict:
        return dict(zip(self.names, map(float, self.x)))

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eval", "cost", "best_cost", *self.names])
            for e in self.history:
                w.writerow([e.index, repr(e.cost), repr(e.best_cost), *(repr(float(v)) for v in e.x)])


class _BudgetExhausted(Exception):
    pass


def _call(fn, x):
    return fn(x)


def optimize(fn: Callable, specs: Sequence[ParameterSpec], budget: int, seed: int = 0,
             restarts: int = 2, workers: int = 1, x0=None, penalty: Optional[float] = None) -> OptimizeResult:
    """Bounded Nelder-Mead with restarts; returns the best point and every evaluation.

    ``budget`` caps objective evaluations. The first round starts at ``x0``
    (default: the centre of the transformed box) with a seeded random
    orientation of the initial simplex; each restart begins at the best point
    so far with half the previous simplex size. With ``workers`` > 1 the
    initial simplex of each round is evaluated in parallel; results are used
    in submission order so the trace does not depend on ``workers``.
    """
    specs = tuple(specs)
    n = len(specs)
    if n == 0:
        raise ValueError("no parameters to optimize")
    if budget < n + 1:
        raise ValueError(f"budget {budget} is below the minimum of dimension + 1 = {n + 1}")
    rng = np.random.default_rng(seed)
    to_x = lambda z: np.array([s.from_unbounded(v) for s, v in zip(specs, z)])  # noqa: E731
    z = np.zeros(n) if x0 is None else np.array([s.to_unbounded(v) for s, v in zip(specs, x0)])
    history: list[Evaluation] = []
    cache: dict = {}
    best = [math.inf, None]
    stable = [0]

    def record(x, c):
        if c < best[0]:
            best[0], best[1] = c, x.copy()
        if penalty is None or c < penalty:
            stable[0] += 1
        history.append(Evaluation(len(history), x, float(c), float(best[0])))

    def f(zv):
        key = np.asarray(zv, float).tobytes()
        x = to_x(zv)
        if key in cache:
            c = cache.pop(key)
        else:
            if len(history) >= budget:
                raise _BudgetExhausted
            c = float(fn(x))
        record(x, c)
        return c

    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    step = 1.0
    try:
        for rnd in range(restarts + 1):
            remaining = budget - len(history)
            if remaining < 1:
                break
            if best[1] is not None:
                z = np.array([s.to_unbounded(v) for s, v in zip(specs, best[1])])
            # random rotation of the axis-aligned simplex, seeded
            q, _ = np.linalg.qr(rng.standard_normal((n, n)))
            simplex = np.vstack([z, z + step * q.T])
            k = min(n + 1, remaining)
            if pool is not None:
                xs = [to_x(p) for p in simplex[:k]]
                for p, c in zip(simplex[:k], pool.map(_call, [fn] * k, xs)):
                    cache[np.asarray(p, float).tobytes()] = float(c)
            try:
                sopt.minimize(f, z, method="Nelder-Mead",
                              options=dict(initial_simplex=simplex, maxfev=remaining + 1, xatol=1e-9,
                                           fatol=1e-14, adaptive=n > 3))
            except _BudgetExhausted:
                break
            finally:
                cache.clear()
            step *= 0.5
    finally:
        if pool is not None:
            pool.shutdown()
    if best[1] is None:
        raise RuntimeError("optimizer made no evaluations")
    return OptimizeResult(best[1], best[0], history, tuple(s.name for s in specs), stable[0])


def specs_from_config(config: RunConfig) -> list[ParameterSpec]:
    return [ParameterSpec(p.name, p.path, p.lower, p.upper, p.scale) for p in config.calibration.parameters]


def recommended_budget(n_params: int) -> int:
    return 10 * n_params


def budget_warning(budget: int, n_params: int) -> Optional[str]:
    rec = recommended_budget(n_params)
    if budget < rec:
        return f"budget {budget} is below the recommended {rec} evaluations for {n_params} parameters"
    return None


def check_reference_band(reference: dict, band, df_tol: Optional[float] = None) -> None:
    """Raise ValueError listing every reference that does not span ``band``."""
    lo, hi = band
    bad = []
    for key, r in reference.items():
        if r.freq.size < 2:
            bad.append(f"{key}: fewer than two frequency lines")
            continue
        tol = df_tol if df_tol is not None else float(np.max(np.diff(r.freq)))
        if r.freq[0] > lo + tol or r.freq[-1] < hi - tol:
            bad.append(f"{key}: covers {r.freq[0]:.3g}-{r.freq[-1]:.3g} Hz, need {lo:.3g}-{hi:.3g} Hz")
    if bad:
        raise ValueError("reference band mismatch:\n  " + "\n  ".join(bad))


def calibrate(config: RunConfig, reference: dict, seed: int = 0, workers: int = 1,
              budget: Optional[int] = None, specs=None) -> tuple[OptimizeResult, RunConfig]:
    """Fit ``specs`` (default ``config.calibration.parameters``) to ``reference``.

    Returns the optimizer result and the fitted config.
    """
    specs = list(specs) if specs is not None else specs_from_config(config)
    if not specs:
        raise ValueError("calibration.parameters is empty")
    cal = config.calibration
    template = SimulationTemplate(config, specs)
    missing = [f"{i} -> {o}" for i, o in template.pairs if f"{i}__{o}" not in reference]
    if missing:
        raise KeyError("references missing for pairs: " + ", ".join(missing))
    ref = {f"{i}__{o}": reference[f"{i}__{o}"] for i, o in template.pairs}
    check_reference_band(ref, config.analysis.band)
    ocfg = ObjectiveConfig(ref, dict(cal.weights), tuple(config.analysis.band), cal.penalty)
    b = cal.budget if budget is None else budget
    msg = budget_warning(b, len(specs))
    if msg:
        warnings.warn(msg, stacklevel=2)
    data = config.model_dump(mode="json")
    x0 = [min(max(float(np.atleast_1d(get_path(data, s.path))[0]), s.lower), s.upper) for s in specs]
    result = optimize(CalibrationObjective(template, ocfg), specs, b, seed, cal.restarts, workers,
                      x0=x0, penalty=cal.penalty)
    if result.stable_evaluations == 0:
        raise SimulationDiverged("calibration budget exhausted without any stable evaluation")
    return result, template.candidate(result.x)


__all__ = ["ParameterSpec", "ObjectiveConfig", "objective", "optimize", "calibrate", "lumped_log",
           "SimulationTemplate", "CalibrationObjective", "OptimizeResult", "FrequencyResponse",
           "EstimatorConfig"]
