"""Operator-side anomaly detection.

Two checks run at every model renewal: an aggregate consistency test
comparing the freshly rebuilt state distribution against the model's own
stale prediction, and a per-EV feasibility test on consecutive measurement
pairs.

The feasibility test works on the energy axis. A reported SoC rise is a
charging claim bounded by the rated charging energy over the reporting
period; a drop is a discharging claim bounded by the grid-side discharging
energy (rated power divided by efficiency, since discharging drains the
battery faster than it delivers). Reported SoC moves in whole quanta and
both endpoints carry quantization error, so one quantum of slack is
forgiven; without it, honest reports straddling a rounding edge would alarm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fleet import SOC_GRANULARITY, EvSpec, Measurement


@dataclass(frozen=True)
class DetectionConfig:
    """Thresholds for the two renewal-time checks.

    min_population gates the aggregate test: below 2/epsilon connected EVs a
    single vehicle's state weighs more than the whole detection tolerance,
    so the distribution distance carries no signal and is not scored.
    """

    epsilon: float = 0.01
    norm: str = "l1"              # "l1" or "linf"
    granularity: float = SOC_GRANULARITY
    min_population: int = 200

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.norm not in ("l1", "linf"):
            raise ValueError("norm must be 'l1' or 'linf'")
        if self.min_population < 0:
            raise ValueError("min_population must be nonnegative")


@dataclass(frozen=True)
class Alarm:
    kind: str                     # "aggregate" | "feasibility"
    step: int
    value: float                  # distance, or the offending quantity
    ev_id: int = -1
    detail: str = ""


def _distance(a: np.ndarray, b: np.ndarray, norm: str) -> float:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(np.abs(d).sum()) if norm == "l1" else float(np.abs(d).max())


def check_aggregate(x_true: np.ndarray, x_est: np.ndarray,
                    cfg: DetectionConfig, step: int = 0,
                    n_connected: int | None = None) -> Optional[Alarm]:
    """Alarm when the rebuilt distribution strays from the stale estimate by
    epsilon or more (strict inequality keeps sub-threshold deviations quiet).

    Passing the connected-fleet size enables the statistical-validity floor;
    omitting it scores every invocation."""
    x_true = np.asarray(x_true, dtype=float)
    x_est = np.asarray(x_est, dtype=float)
    if x_true.shape != x_est.shape:
        raise ValueError("state vectors must have equal length")
    if n_connected is not None and n_connected < cfg.min_population:
        return None
    dist = _distance(x_true, x_est, cfg.norm)
    if dist >= cfg.epsilon:
        return Alarm(kind="aggregate", step=step, value=dist,
                     detail=f"{cfg.norm} distance {dist:.5f} >= {cfg.epsilon}")
    return None


def ceil_quantum(delta: float, granularity: float) -> float:
    """|delta| rounded away from zero to the reporting grid."""
    return math.ceil(abs(delta) / granularity - 1e-9) * granularity


def check_feasibility(prev: Measurement, cur: Measurement, spec: EvSpec,
                      t_p_h: float, cfg: DetectionConfig,
                      expected_gap: int | None = None) -> Optional[Alarm]:
    """Per-EV consistency of two consecutive reports, one period apart."""
    if prev.ev_id != cur.ev_id:
        raise ValueError("measurements belong to different EVs")
    if cur.step <= prev.step or (expected_gap is not None
                                 and cur.step - prev.step != expected_gap):
        raise ValueError("measurements are not consecutive reports")
    g = cfg.granularity
    delta = cur.soc - prev.soc
    stepped = ceil_quantum(delta, g)
    excess = max(stepped - g, 0.0)          # one quantum of rounding slack
    energy = spec.capacity_kwh * excess
    if delta > 0:
        limit = spec.charge_power_kw * t_p_h
        if energy > limit + 1e-9:
            return Alarm(kind="feasibility", step=cur.step, value=delta,
                         ev_id=cur.ev_id,
                         detail=f"SoC rise {delta:.4f} needs {energy:.3f} kWh"
                                f" > charge limit {limit:.3f} kWh")
    elif delta < 0:
        limit = (spec.discharge_power_kw / spec.efficiency) * t_p_h
        if energy > limit + 1e-9:
            return Alarm(kind="feasibility", step=cur.step, value=delta,
                         ev_id=cur.ev_id,
                         detail=f"SoC drop {delta:.4f} frees {energy:.3f} kWh"
                                f" > discharge limit {limit:.3f} kWh")
    p = cur.power_kw
    if p < -spec.charge_power_kw - 1e-9 or p > spec.discharge_power_kw + 1e-9:
        return Alarm(kind="feasibility", step=cur.step, value=p, ev_id=cur.ev_id,
                     detail=f"power {p:.3f} kW outside "
                            f"[-{spec.charge_power_kw}, {spec.discharge_power_kw}]")
    return None


def feasibility_mask(prev_soc, cur_soc, cur_power, capacity, charge_power,
                     discharge_power, efficiency, t_p_h: float,
                     cfg: DetectionConfig) -> np.ndarray:
    """Vector twin of ``check_feasibility``: True where a pair violates."""
    g = cfg.granularity
    delta = np.asarray(cur_soc) - np.asarray(prev_soc)
    stepped = np.ceil(np.abs(delta) / g - 1e-9) * g
    excess = np.maximum(stepped - g, 0.0)
    energy = np.asarray(capacity) * excess
    up_bad = (delta > 0) & (energy > np.asarray(charge_power) * t_p_h + 1e-9)
    dn_bad = (delta < 0) & (
        energy > (np.asarray(discharge_power) / np.asarray(efficiency)) * t_p_h + 1e-9)
    p = np.asarray(cur_power)
    p_bad = (p < -np.asarray(charge_power) - 1e-9) | (p > np.asarray(discharge_power) + 1e-9)
    return up_bad | dn_bad | p_bad


@dataclass
class AlarmLog:
    alarms: list[Alarm] = field(default_factory=list)

    def add(self, alarm: Optional[Alarm]):
        if alarm is not None:
            self.alarms.append(alarm)

    def extend(self, alarms):
        self.alarms.extend(a for a in alarms if a is not None)

    def count(self, kind: str | None = None) -> int:
        if kind is None:
            return len(self.alarms)
        return sum(1 for a in self.alarms if a.kind == kind)
