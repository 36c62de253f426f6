"""Run configuration: one JSON document validated against a pydantic schema.

Unknown keys are rejected at every level. ``default_config()`` and
``config_schema()`` generate the documented defaults and the JSON schema.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .body import Anthropometry, JointGroup, SeatConfig, build_ehm, model_table
from .excitation import generate_excitation, quiet
from .simulation import CHANNEL_GROUPS, INTEGRATORS, SimulationConfig


class ConfigError(ValueError):
    """Invalid configuration; the message lists every offending field."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AnthropometrySection(_Section):
    total_mass: float = Field(75.3, gt=0, description="kg")
    stature: float = Field(1.76, gt=0, description="m")
    sitting_height: float = Field(0.92, gt=0, description="m")
    mass_fractions: Optional[dict[str, float]] = Field(None, description="per segment; default from the data file")
    length_scales: dict[str, float] = Field(default_factory=dict, description="per-segment geometry scale override")


class JointGroupSection(_Section):
    stiffness: list[float]
    damping: list[float]
    kp: Optional[list[float]] = None
    kd: Optional[list[float]] = None
    ki: Optional[list[float]] = Field(None, description="default from the settling-time rule")
    integrator_limit: float = Field(1.5, gt=0)

    @model_validator(mode="after")
    def _lengths(self):
        n = len(self.stiffness)
        for name in ("damping", "kp", "kd", "ki"):
            v = getattr(self, name)
            if v is not None and len(v) != n:
                raise ValueError(f"{name} has {len(v)} entries, stiffness has {n}")
        if (self.kp is None) != (self.kd is None):
            raise ValueError("kp and kd must be given together")
        return self


def _default_groups() -> dict:
    return {k: JointGroupSection(**v) for k, v in model_table()["joint_groups"].items()}


class ModelSection(_Section):
    anthropometry: AnthropometrySection = Field(default_factory=AnthropometrySection)
    joint_groups: dict[str, JointGroupSection] = Field(default_factory=_default_groups)
    controlled_groups: Optional[list[str]] = Field(None, description="None: every group with kp/kd")
    settle_target: float = Field(3.0, gt=0, description="s, integral-gain tuning target")
    posture: dict[str, float] = Field(default_factory=dict, description="initial DoF offsets")


class SeatSection(_Section):
    floor_height: float = -0.411
    backrest: bool = True
    backrest_angle: float = Field(0.0, description="rad, recline about the hinge")
    seat_pan_raise: float = Field(0.0, description="m")
    contact_stiffness: float = Field(5.0e4, gt=0)
    contact_damping: float = Field(500.0, ge=0)
    friction_mu: float = Field(0.5, ge=0)
    friction_vel_eps: float = Field(0.05, gt=0)
    flesh_stiffness: float = Field(2.0e4, ge=0)
    flesh_damping: float = Field(400.0, ge=0)
    back_flesh_stiffness: float = Field(500.0, ge=0)
    back_flesh_damping: float = Field(50.0, ge=0)


class ExcitationSection(_Section):
    seed: int = 1
    band: tuple[float, float] = (0.3, 12.0)
    rms: float = Field(0.1941, ge=0, description="m/s^2 per axis")
    duration: float = Field(35.0, gt=0, description="s, total including settling")
    settle_time: float = Field(5.0, ge=0, description="s")
    axes: list[Literal["x", "y", "z"]] = Field(default_factory=lambda: ["x", "y", "z"])
    fade_time: float = Field(1.0, ge=0)

    @model_validator(mode="after")
    def _window(self):
        if self.settle_time > self.duration:
            raise ValueError("settle_time exceeds duration")
        return self


class SimulationSection(_Section):
    h: float = Field(1e-3, gt=0, description="s")
    output_rate: float = Field(200.0, gt=0, description="Hz")
    integrator: str = "semi_implicit_euler"
    channels: list[str] = Field(default_factory=lambda: list(CHANNEL_GROUPS))

    @field_validator("integrator")
    @classmethod
    def _integrator(cls, v):
        if v not in INTEGRATORS:
            raise ValueError(f"unknown integrator {v!r}; expected one of {sorted(INTEGRATORS)}")
        return v

    @field_validator("channels")
    @classmethod
    def _channels(cls, v):
        bad = set(v) - set(CHANNEL_GROUPS)
        if bad:
            raise ValueError(f"unknown channel groups {sorted(bad)}")
        return v


class AnalysisSection(_Section):
    window_s: float = Field(10.0, gt=0)
    overlap: float = Field(0.5, ge=0, lt=1)
    band: tuple[float, float] = (0.5, 12.0)
    multi_input: bool = True
    bodies: list[str] = Field(default_factory=lambda: ["head", "upper_torso", "pelvis"])
    axes: list[Literal["x", "y", "z"]] = Field(default_factory=lambda: ["x", "y", "z"])


class ParameterSection(_Section):
    name: str
    path: str = Field(description="dotted path into this document, optional [i] index")
    lower: float
    upper: float
    scale: Literal["linear", "log"] = "linear"


class LumpedSection(_Section):
    masses: list[float] = Field(default_factory=lambda: [20.0, 30.0, 5.0], description="pelvis, trunk, head kg")
    stiffness: list[float] = Field(default_factory=lambda: [9.0e4, 4.0e4, 1.2e4])
    damping: list[float] = Field(default_factory=lambda: [1500.0, 600.0, 80.0])


class CalibrationSection(_Section):
    model: Literal["ehm", "lumped3"] = "ehm"
    parameters: list[ParameterSection] = Field(default_factory=list)
    weights: dict[str, float] = Field(default_factory=lambda: {"head": 1.0, "trunk": 1.0, "pelvis": 0.3})
    budget: int = Field(200, ge=0)
    restarts: int = Field(2, ge=0)
    penalty: float = Field(1.0e3, gt=0)
    lumped: LumpedSection = Field(default_factory=LumpedSection)


class AblationSection(_Section):
    stiffness_factor: float = Field(16.0, gt=0)


class RunConfig(_Section):
    model: ModelSection = Field(default_factory=ModelSection)
    seat: SeatSection = Field(default_factory=SeatSection)
    excitation: ExcitationSection = Field(default_factory=ExcitationSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    analysis: AnalysisSection = Field(default_factory=AnalysisSection)
    calibration: CalibrationSection = Field(default_factory=CalibrationSection)
    ablation: AblationSection = Field(default_factory=AblationSection)

    # -- builders ---------------------------------------------------------
    def anthropometry(self) -> Anthropometry:
        a = self.model.anthropometry
        kw = dict(total_mass=a.total_mass, stature=a.stature, sitting_height=a.sitting_height,
                  length_scales=dict(a.length_scales))
        if a.mass_fractions is not None:
            kw["mass_fractions"] = dict(a.mass_fractions)
        return Anthropometry(**kw)

    def joint_groups(self) -> dict:
        out = {}
        for name, g in self.model.joint_groups.items():
            t = lambda v: None if v is None else tuple(v)  # noqa: E731
            out[name] = JointGroup(tuple(g.stiffness), tuple(g.damping), t(g.kp), t(g.kd), t(g.ki),
                                   g.integrator_limit)
        return out

    def seat_config(self) -> SeatConfig:
        s = self.seat
        return SeatConfig.default(
            floor_height=s.floor_height, backrest_pads=None if s.backrest else (),
            backrest_angle=s.backrest_angle, seat_pan_raise=s.seat_pan_raise,
            contact_stiffness=s.contact_stiffness, contact_damping=s.contact_damping,
            friction_mu=s.friction_mu, friction_vel_eps=s.friction_vel_eps,
            flesh_stiffness=s.flesh_stiffness, flesh_damping=s.flesh_damping,
            back_flesh_stiffness=s.back_flesh_stiffness, back_flesh_damping=s.back_flesh_damping,
        )

    def build_model(self):
        m = self.model
        return build_ehm(self.anthropometry(), self.seat_config(), self.joint_groups(), m.settle_target,
                         None if m.controlled_groups is None else tuple(m.controlled_groups),
                         dict(m.posture))

    def simulation_config(self) -> SimulationConfig:
        s, e = self.simulation, self.excitation
        return SimulationConfig(h=s.h, duration=e.duration, settle_time=e.settle_time,
                                output_rate=s.output_rate, integrator=s.integrator,
                                channels=tuple(s.channels))

    def excitation_signal(self):
        e = self.excitation
        fs = 1.0 / self.simulation.h
        if e.settle_time >= e.duration or e.rms == 0 or not e.axes:
            return quiet(e.duration, fs, e.settle_time)
        return generate_excitation(e.seed, tuple(e.band), e.rms, e.duration, e.settle_time, fs,
                                   e.fade_time, tuple(e.axes))

    def estimator(self):
        from .analysis import EstimatorConfig

        a = self.analysis
        return EstimatorConfig(a.window_s, a.overlap, tuple(a.band), a.multi_input)

    def channel_pairs(self):
        from .analysis import channel_pairs

        axes = [ax for ax in self.analysis.axes if ax in self.excitation.axes]
        return channel_pairs(tuple(self.analysis.bodies), tuple(axes))

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def default_config() -> RunConfig:
    return RunConfig()


def config_schema() -> dict:
    return RunConfig.model_json_schema()


def _format_errors(err: ValidationError, source: str) -> str:
    lines = [f"invalid configuration {source}:"]
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"  {loc}: {e['msg']}")
    return "\n".join(lines)


def parse_config(data: dict, source: str = "<dict>") -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_errors(err, source)) from None


def load_config(path=None) -> RunConfig:
    """Load and validate a JSON config file (defaults when ``path`` is None)."""
    if path is None:
        return default_config()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {p}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {p} at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(data, str(p))


def _split_path(path: str):
    parts = []
    for token in path.split("."):
        if "[" in token and token.endswith("]"):
            name, idx = token[:-1].split("[", 1)
            parts.append(name)
            parts.append(int(idx))
        else:
            parts.append(token)
    return parts


def get_path(data: dict, path: str):
    node = data
    for key in _split_path(path):
        try:
            node = node[key]
        except (KeyError, IndexError, TypeError):
            raise ConfigError(f"configuration path {path!r} does not exist") from None
    return node


def set_path(data: dict, path: str, value: float) -> None:
    """Set a numeric leaf; a list leaf without an index gets ``value`` in every entry."""
    keys = _split_path(path)
    parent = data
    try:
        for k in keys[:-1]:
            parent = parent[k]
    except (KeyError, IndexError, TypeError):
        raise ConfigError(f"configuration path {path!r} does not exist") from None
    last = keys[-1]
    try:
        current = parent[last]
    except (KeyError, IndexError, TypeError):
        raise ConfigError(f"configuration path {path!r} does not exist") from None
    if isinstance(current, list):
        parent[last] = [float(value)] * len(current)
    elif isinstance(current, (int, float)) and not isinstance(current, bool):
        parent[last] = float(value)
    else:
        raise ConfigError(f"configuration path {path!r} is not numeric")


def with_values(config: RunConfig, values: dict) -> RunConfig:
    """Copy of ``config`` with dotted-path values substituted and re-validated."""
    data = config.model_dump(mode="json")
    for path, v in values.items():
        set_path(data, path, v)
    return parse_config(data, "with substituted parameters")
