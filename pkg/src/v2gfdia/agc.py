"""Two-area load-frequency control with the EV fleet as an Area-1 resource.

Classical non-reheat LFC blocks per area (governor, turbine, inertia and
damping, droop, integral secondary control on the area control error) tied
together through a synchronizing tie-line. All powers are per-unit on the
shared base; frequency deviations are in Hz.

State layout: [df1, df2, pg1, pg2, pm1, pm2, ptie, iace1, iace2] where pg is
the governor output, pm the turbine mechanical power, ptie the Area-1 to
Area-2 tie flow and iace the integrated area control error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

TWO_PI = 2.0 * math.pi


class DivergenceError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"integration diverged at step {step}")
        self.step = step


@dataclass(frozen=True)
class AreaParams:
    inertia: float          # H (s)
    damping: float          # D (p.u./Hz)
    droop: float            # R (Hz/p.u.)
    t_gov: float            # governor time constant (s)
    t_turb: float           # turbine time constant (s)
    k_integral: float       # secondary-control integral gain
    bias: float             # frequency bias B (p.u./Hz)

    def validate(self):
        for name in ("inertia", "t_gov", "t_turb"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class AgcParams:
    area1: AreaParams = field(default_factory=lambda: AreaParams(
        inertia=10.0, damping=0.6, droop=0.05, t_gov=0.2, t_turb=0.5,
        k_integral=0.3, bias=20.6))
    area2: AreaParams = field(default_factory=lambda: AreaParams(
        inertia=8.0, damping=0.9, droop=0.0625, t_gov=0.3, t_turb=0.6,
        k_integral=0.3, bias=16.9))
    tie_coeff: float = 2.0
    base_mva: float = 400.0
    # Generator delta headroom: units run at 190 MW of a 200 MW ceiling,
    # so only 0.025 p.u. of extra mechanical power is available per area.
    gen_headroom_pu: float | None = 0.025

    def validate(self):
        self.area1.validate()
        self.area2.validate()
        if self.base_mva <= 0:
            raise ValueError("base power must be positive")


STATE_DIM = 9


def _sat(pm: float, headroom: float | None) -> float:
    if headroom is None:
        return pm
    return min(pm, headroom)


def derivatives(state: np.ndarray, p: AgcParams, dp_l1: float, dp_l2: float,
                dp_ev: float) -> np.ndarray:
    """Right-hand side of the two-area loop; EV power enters Area 1 only."""
    df1, df2, pg1, pg2, pm1, pm2, ptie, i1, i2 = state
    a1, a2 = p.area1, p.area2
    pm1_eff = _sat(pm1, p.gen_headroom_pu)
    pm2_eff = _sat(pm2, p.gen_headroom_pu)
    ace1 = a1.bias * df1 + ptie
    ace2 = a2.bias * df2 - ptie
    pc1 = -a1.k_integral * i1
    pc2 = -a2.k_integral * i2
    out = np.empty(STATE_DIM)
    out[0] = (pm1_eff - dp_l1 - ptie + dp_ev - a1.damping * df1) / (2.0 * a1.inertia)
    out[1] = (pm2_eff - dp_l2 + ptie - a2.damping * df2) / (2.0 * a2.inertia)
    out[2] = (pc1 - df1 / a1.droop - pg1) / a1.t_gov
    out[3] = (pc2 - df2 / a2.droop - pg2) / a2.t_gov
    out[4] = (pg1 - pm1) / a1.t_turb
    out[5] = (pg2 - pm2) / a2.t_turb
    out[6] = TWO_PI * p.tie_coeff * (df1 - df2)
    out[7] = ace1
    out[8] = ace2
    return out


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray          # (n, STATE_DIM)
    dp_ev: np.ndarray

    @property
    def df1(self):
        return self.states[:, 0]

    @property
    def df2(self):
        return self.states[:, 1]

    @property
    def ptie(self):
        return self.states[:, 6]

    def pm(self, area: int, params: AgcParams):
        raw = self.states[:, 3 + area]
        if params.gen_headroom_pu is None:
            return raw
        return np.minimum(raw, params.gen_headroom_pu)


def integrate(params: AgcParams,
              schedule: Callable[[float], tuple[float, float, float]],
              dt_s: float, duration_s: float) -> Trajectory:
    """Classical fixed-step RK4. ``schedule(t)`` returns the exogenous
    inputs (dp_l1, dp_l2, dp_ev) in per-unit."""
    params.validate()
    if dt_s <= 0 or dt_s > 0.02:
        raise ValueError("dt must be in (0, 0.02] s")
    n = int(round(duration_s / dt_s)) + 1
    t = np.arange(n) * dt_s
    states = np.zeros((n, STATE_DIM))
    dp_ev_log = np.zeros(n)
    x = np.zeros(STATE_DIM)
    dp_ev_log[0] = schedule(0.0)[2]
    for i in range(1, n):
        t0 = t[i - 1]
        u0 = schedule(t0)
        uh = schedule(t0 + 0.5 * dt_s)
        u1 = schedule(t0 + dt_s)
        k1 = derivatives(x, params, *u0)
        k2 = derivatives(x + 0.5 * dt_s * k1, params, *uh)
        k3 = derivatives(x + 0.5 * dt_s * k2, params, *uh)
        k4 = derivatives(x + dt_s * k3, params, *u1)
        x = x + (dt_s / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(i)
        states[i] = x
        dp_ev_log[i] = u1[2]
    return Trajectory(t=t, states=states, dp_ev=dp_ev_log)


@dataclass
class AgcRunReport:
    peak_df1_hz: float
    peak_df2_hz: float
    ptie_min_pu: float
    ptie_max_pu: float
    dispatched_mw: float
    delivered_mw: float
    shortfall_mw: float                  # dispatched - delivered
    residual_after_generators_mw: float  # shortfall net of generator headroom
    trajectory: Trajectory


def step_schedule(step_pu: float, dp_ev_pu: float, t_step_s: float,
                  ev_delay_s: float) -> Callable[[float], tuple[float, float, float]]:
    def schedule(t: float):
        dp_l1 = step_pu if t >= t_step_s else 0.0
        dp_ev = dp_ev_pu if t >= t_step_s + ev_delay_s else 0.0
        return dp_l1, 0.0, dp_ev
    return schedule


def scenario_2200(params: AgcParams, flexibility_true_mw: float,
                  dispatched_mw: float, delivered_mw: float,
                  step_mw: float = 50.0, t_step_s: float = 5.0,
                  ev_delay_s: float = 0.1, duration_s: float = 120.0,
                  dt_s: float = 0.005) -> AgcRunReport:
    """Evening load-step scenario: a sudden Area-1 load increase answered by
    whatever correction the fleet actually delivers, 100 ms later."""
    if delivered_mw > flexibility_true_mw + 1e-9:
        raise ValueError("delivered power cannot exceed the true flexibility")
    base = params.base_mva
    schedule = step_schedule(step_mw / base, delivered_mw / base, t_step_s, ev_delay_s)
    traj = integrate(params, schedule, dt_s, duration_s)
    headroom = params.gen_headroom_pu
    gen_support_mw = 0.0 if headroom is None else 2.0 * headroom * base
    return AgcRunReport(
        peak_df1_hz=float(np.max(np.abs(traj.df1))),
        peak_df2_hz=float(np.max(np.abs(traj.df2))),
        ptie_min_pu=float(traj.ptie.min()),
        ptie_max_pu=float(traj.ptie.max()),
        dispatched_mw=dispatched_mw,
        delivered_mw=delivered_mw,
        shortfall_mw=dispatched_mw - delivered_mw,
        residual_after_generators_mw=step_mw - delivered_mw - gen_support_mw,
        trajectory=traj,
    )


def write_csv(traj: Trajectory, params: AgcParams, path, decimate: int = 10):
    """Time series in gnuplot-friendly form."""
    pm1 = traj.pm(1, params)
    pm2 = traj.pm(2, params)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("t_s,delta_f1_hz,delta_f2_hz,delta_p_tie_pu,delta_p_m1_pu,"
                "delta_p_m2_pu,delta_p_ev_pu\n")
        for i in range(0, traj.t.size, max(decimate, 1)):
            f.write(f"{traj.t[i]:.3f},{traj.df1[i]:.8f},{traj.df2[i]:.8f},"
                    f"{traj.ptie[i]:.8f},{pm1[i]:.8f},{pm2[i]:.8f},"
                    f"{traj.dp_ev[i]:.8f}\n")
