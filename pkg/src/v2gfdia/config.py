"""Scenario configuration: defaults, JSON round-trip, validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

from .agc import AgcParams, AreaParams
from .attack import AttackConfig
from .fleet import ConfigurationError, FleetParams, TruncatedNormal, Uniform


class ConfigError(ValueError):
    """Invalid scenario configuration; message lists the offending fields."""


@dataclass(frozen=True)
class DispatchConfig:
    """Utility dispatch request profile, in MW on the fleet."""

    profile: str = "default"          # "none" | "default" | "steps"
    amplitude_mw: float = 4.0
    period_h: float = 4.0
    start_h: float = 7.0
    stop_h: float = 21.5
    taper_h: float = 18.0
    taper_amplitude_mw: float = 1.0
    mid_step_mw: float = 3.0
    mid_step_start_h: float = 9.0
    mid_step_stop_h: float = 11.0
    big_step_mw: float = 50.0
    big_step_start_h: float = 22.0
    big_step_stop_h: float = 22.5
    steps: tuple = ()

    def request_kw(self, t_h: float) -> float:
        if self.profile == "none":
            return 0.0
        if self.profile == "steps":
            for start, stop, mw in self.steps:
                if start <= t_h < stop:
                    return mw * 1e3
            return 0.0
        value = 0.0
        if self.start_h <= t_h < self.stop_h:
            amp = self.amplitude_mw if t_h < self.taper_h else self.taper_amplitude_mw
            value += amp * math.sin(2.0 * math.pi * (t_h - self.start_h) / self.period_h)
        if self.mid_step_start_h <= t_h < self.mid_step_stop_h:
            value += self.mid_step_mw
        if self.big_step_start_h <= t_h < self.big_step_stop_h:
            value += self.big_step_mw
        return value * 1e3


@dataclass
class ScenarioConfig:
    fleet: FleetParams = field(default_factory=FleetParams)
    attack: AttackConfig = field(default_factory=AttackConfig)
    dispatch: DispatchConfig = field(default_factory=DispatchConfig)
    agc: AgcParams = field(default_factory=AgcParams)
    n_s: int = 10
    step_s: float = 20.0
    t_p_s: float = 300.0
    n_p: Optional[int] = None         # derived from t_p_s/step_s when omitted
    g_soc: float = 0.01
    duration_h: float = 24.0
    control_enabled: bool = False
    epsilon: float = 0.01             # detector threshold
    detection_norm: str = "l1"
    seed: int = 1
    out_dir: Optional[str] = None

    def resolved_n_p(self) -> int:
        if self.n_p is not None:
            return self.n_p
        return int(round(self.t_p_s / self.step_s))

    def validate(self):
        problems = []
        if self.n_s < 2:
            problems.append("n_s: need at least 2 SoC intervals")
        if self.step_s <= 0:
            problems.append("step_s: must be positive")
        if self.t_p_s <= 0:
            problems.append("t_p_s: must be positive")
        n_p = self.resolved_n_p()
        if n_p < 1:
            problems.append("n_p: resolves below 1")
        elif abs(n_p * self.step_s - self.t_p_s) > self.step_s / 2:
            problems.append(
                f"n_p: {n_p} steps of {self.step_s}s do not tile t_p={self.t_p_s}s")
        if not 0 < self.g_soc <= 0.1:
            problems.append("g_soc: must be in (0, 0.1]")
        if self.duration_h <= 0:
            problems.append("duration_h: must be positive")
        if self.epsilon <= 0:
            problems.append("epsilon: must be positive")
        if self.detection_norm not in ("l1", "linf"):
            problems.append("detection_norm: must be 'l1' or 'linf'")
        if self.attack.epsilon <= 0:
            problems.append("attack.epsilon: must be positive")
        if not 0 <= self.attack.budget_fraction <= 1:
            problems.append("attack.budget_fraction: must be in [0, 1]")
        if self.attack.horizon < 0:
            problems.append("attack.horizon: must be nonnegative")
        if self.attack.objective not in ("upper", "lower"):
            problems.append("attack.objective: must be 'upper' or 'lower'")
        if self.dispatch.profile not in ("none", "default", "steps"):
            problems.append("dispatch.profile: must be none|default|steps")
        try:
            self.fleet.validate()
        except ConfigurationError as exc:
            problems.append(f"fleet: {exc}")
        try:
            self.agc.validate()
        except ValueError as exc:
            problems.append(f"agc: {exc}")
        if problems:
            raise ConfigError("; ".join(problems))


def _clean(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    return obj


def to_dict(cfg: ScenarioConfig) -> dict:
    return _clean(dataclasses.asdict(cfg))


def _restore_inf(value):
    if value == "inf":
        return math.inf
    return value


def from_dict(data: dict) -> ScenarioConfig:
    data = dict(data)

    def build(cls, sub, tuples=()):
        if sub is None:
            return cls()
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in sub:
                v = _restore_inf(sub[f.name])
                if f.name in tuples and isinstance(v, list):
                    v = tuple(tuple(e) for e in v)
                kwargs[f.name] = v
        return cls(**kwargs)

    fleet_d = data.pop("fleet", None)
    fleet = None
    if fleet_d is not None:
        fd = dict(fleet_d)
        for name in ("start_soc", "depart_soc", "start_time", "finish_time"):
            if name in fd and isinstance(fd[name], dict):
                fd[name] = TruncatedNormal(**fd[name])
        for name in ("charge_power", "discharge_power", "efficiency", "capacity"):
            if name in fd and isinstance(fd[name], dict):
                fd[name] = Uniform(**fd[name])
        fleet = FleetParams(**fd)
    agc_d = data.pop("agc", None)
    agc = None
    if agc_d is not None:
        ad = dict(agc_d)
        for name in ("area1", "area2"):
            if name in ad and isinstance(ad[name], dict):
                ad[name] = AreaParams(**ad[name])
        agc = AgcParams(**ad)
    attack = build(AttackConfig, data.pop("attack", None))
    dispatch = build(DispatchConfig, data.pop("dispatch", None), tuples=("steps",))

    kwargs = {}
    for f in dataclasses.fields(ScenarioConfig):
        if f.name in ("fleet", "attack", "dispatch", "agc"):
            continue
        if f.name in data:
            kwargs[f.name] = data[f.name]
    cfg = ScenarioConfig(
        fleet=fleet if fleet is not None else FleetParams(),
        attack=attack, dispatch=dispatch,
        agc=agc if agc is not None else AgcParams(), **kwargs)
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = from_dict(data)
    cfg.validate()
    return cfg


def save_config(cfg: ScenarioConfig, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def config_hash(cfg: ScenarioConfig) -> str:
    payload = to_dict(cfg)
    payload.pop("out_dir", None)
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]
