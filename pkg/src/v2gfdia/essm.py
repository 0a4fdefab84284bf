"""Aggregate state-space model of a connected EV fleet.

The fleet is summarized by a distribution x over 3*N_s + 3 states: N_s SoC
blocks per operating mode (charging block first, then idle, then
discharging) followed by three special states for EVs pinned at the upper
SoC limit, in forced charging, and pinned at the lower limit. State ids are
1-based everywhere in the public API; vector position = id - 1.

SoC blocks follow the reporting decades: block j covers [ (j-1)/N_s, j/N_s ),
clipped into the operating window [soc_min, soc_max], so the edge blocks are
narrower than the interior ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fleet import Mode

_EPS = 1e-9


class NotIndexable(ValueError):
    """Disconnected EVs have no aggregate state."""


class EmptyFleetError(ValueError):
    """An operation needing at least one connected EV saw none."""


class FeedbackInfeasible(ValueError):
    """A feedback signal would drive some state mass negative."""


class MixedDirectionError(ValueError):
    """Feedback vectors mixing both control directions cannot be broadcast."""


@dataclass(frozen=True)
class SocGrid:
    """State indexing layout shared by the operator and the attacker."""

    n_s: int = 10
    soc_min: float = 0.05
    soc_max: float = 0.95

    @property
    def n_states(self) -> int:
        return 3 * self.n_s + 3

    @property
    def ss_max(self) -> int:
        return 3 * self.n_s + 1

    @property
    def fcs(self) -> int:
        return 3 * self.n_s + 2

    @property
    def ss_min(self) -> int:
        return 3 * self.n_s + 3

    @property
    def delta_s(self) -> float:
        """Mean SoC interval width inside the operating window."""
        return (self.soc_max - self.soc_min) / self.n_s

    def block_of(self, soc):
        """1-based SoC block: j = min(floor(soc*N_s)+1, N_s)."""
        soc = np.asarray(soc, dtype=float)
        j = np.floor(soc * self.n_s + 1e-9).astype(np.int64) + 1
        return np.minimum(np.maximum(j, 1), self.n_s)

    def loc_of(self, soc):
        """Fractional position inside the current SoC block, in [0, 1)."""
        soc = np.asarray(soc, dtype=float)
        scaled = soc * self.n_s + 1e-9
        return np.clip(scaled - np.floor(scaled), 0.0, 1.0)


def state_index(soc: float, power_kw: float, forced: bool, grid: SocGrid,
                connected: bool = True) -> int:
    """Aggregate state id of one measurement. Special states take precedence:
    forced charging, then idle-at-a-bound."""
    if not connected:
        raise NotIndexable("disconnected EV has no state index")
    if forced:
        return grid.fcs
    idle = abs(power_kw) <= 1e-9
    if idle and soc >= grid.soc_max - 1e-9:
        return grid.ss_max
    if idle and soc <= grid.soc_min + 1e-9:
        return grid.ss_min
    j = int(grid.block_of(soc))
    if power_kw < 0:
        return j
    if power_kw > 0:
        return 2 * grid.n_s + j
    return grid.n_s + j


def classify_forced(old_forced, soc, power_kw, depart_soc, capacity, efficiency,
                    charge_power, t_finish, now_h: float, granularity: float,
                    margin_h: float = 0.0):
    """Sticky forced-charging classification from reported values.

    Quantized reports sit up to half a quantum off the true SoC, so an EV
    that physically tripped the forced predicate can look borderline forever
    (its deficit and its slack shrink in lockstep while it charges). Reports
    that show charging therefore get one quantum's worth of charging time as
    predicate tolerance; a non-charging report with slack in hand releases
    the classification, as does reaching the departure target. margin_h is
    the fleet protocol's own trigger safety margin, known to the
    coordinator.
    """
    soc = np.asarray(soc, dtype=float)
    power_kw = np.asarray(power_kw, dtype=float)
    old_forced = np.asarray(old_forced, dtype=bool)
    need = np.asarray(depart_soc) - soc
    rate = np.asarray(efficiency) * np.asarray(charge_power) / np.asarray(capacity)
    hours = need / rate
    slack = np.asarray(t_finish) - now_h
    charging = power_kw < -1e-9
    tol_idle = np.full_like(rate, margin_h)
    tol = np.where(charging, margin_h + granularity / rate + 0.01, tol_idle)
    done = need <= 0.5 * granularity
    trip = ~done & (hours >= slack - tol - 1e-12)
    release = ~charging & (done | (hours < slack - tol_idle - 1e-12))
    return (old_forced & ~release) | trip


def state_indices(soc: np.ndarray, power_kw: np.ndarray, forced: np.ndarray,
                  grid: SocGrid) -> np.ndarray:
    """Vector twin of ``state_index``."""
    soc = np.asarray(soc, dtype=float)
    power_kw = np.asarray(power_kw, dtype=float)
    forced = np.asarray(forced, dtype=bool)
    j = grid.block_of(soc)
    idle = np.abs(power_kw) <= 1e-9
    out = np.where(power_kw < 0, j, np.where(power_kw > 0, 2 * grid.n_s + j, grid.n_s + j))
    out = np.where(idle & (soc >= grid.soc_max - 1e-9), grid.ss_max, out)
    out = np.where(idle & (soc <= grid.soc_min + 1e-9), grid.ss_min, out)
    out = np.where(forced, grid.fcs, out)
    return out.astype(np.int64)


def build_state_vector(states: np.ndarray, grid: SocGrid) -> tuple[np.ndarray, int]:
    """Normalized occupancy histogram over state ids; ([0]*dim, 0) when empty."""
    states = np.asarray(states, dtype=np.int64)
    n = states.size
    x = np.zeros(grid.n_states)
    if n == 0:
        return x, 0
    counts = np.bincount(states - 1, minlength=grid.n_states)
    x = counts.astype(float) / n
    return x, n


def p_ave(charge_ratings: np.ndarray) -> float:
    """Mean rated charging power of the currently connected EVs."""
    charge_ratings = np.asarray(charge_ratings, dtype=float)
    if charge_ratings.size == 0:
        raise EmptyFleetError("average charging power undefined for an empty fleet")
    return float(charge_ratings.mean())


@dataclass(frozen=True)
class FleetStats:
    """Connected-fleet statistics feeding the transition-matrix drift rates."""

    p_ave_charge: float
    p_ave_discharge: float
    eta_mean: float
    q_mean: float


@lru_cache(maxsize=8)
def _d_vectors(n_s: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    one = np.ones(n_s)
    zero = np.zeros(n_s)
    d = np.concatenate([-one, zero, one, [0.0, -1.0, 0.0]])
    d_u = np.concatenate([zero, one, 2 * one, [0.0, 0.0, 2.0]])
    d_l = np.concatenate([2 * one, one, zero, [2.0, 0.0, 0.0]])
    for v in (d, d_u, d_l):
        v.setflags(write=False)
    return d, d_u, d_l


def output_vector(grid: SocGrid) -> np.ndarray:
    return _d_vectors(grid.n_s)[0]


def upper_vector(grid: SocGrid) -> np.ndarray:
    return _d_vectors(grid.n_s)[1]


def lower_vector(grid: SocGrid) -> np.ndarray:
    return _d_vectors(grid.n_s)[2]


def aggregated_power(x: np.ndarray, p_ave_kw: float, n_connected: int,
                     grid: SocGrid) -> float:
    """Fleet power output in kW; discharging counts positive."""
    return float(p_ave_kw * n_connected * (output_vector(grid) @ x))


def flexibility_bounds(x: np.ndarray, p_ave_kw: float, n_connected: int,
                       grid: SocGrid) -> tuple[float, float]:
    """(y_u, y_l) linear flexibility forms in kW."""
    y_u = float(p_ave_kw * n_connected * (upper_vector(grid) @ x))
    y_l = float(p_ave_kw * n_connected * (lower_vector(grid) @ x))
    return y_u, y_l


@dataclass
class FlexibilityReport:
    y_kw: float
    y_upper_kw: float
    y_lower_kw: float
    p_ave_kw: float
    n_connected: int


def flexibility_report(x: np.ndarray, p_ave_kw: float, n_connected: int,
                       grid: SocGrid) -> FlexibilityReport:
    y = aggregated_power(x, p_ave_kw, n_connected, grid)
    y_u, y_l = flexibility_bounds(x, p_ave_kw, n_connected, grid)
    return FlexibilityReport(y, y_u, y_l, p_ave_kw, n_connected)


def build_transition_matrix(grid: SocGrid, dt_h: float, stats: FleetStats,
                            states: np.ndarray | None = None,
                            would_force: np.ndarray | None = None) -> np.ndarray:
    """Column-stochastic per-step transition matrix.

    Drift uses the uniform-within-interval assumption with fleet-mean rates:
    a charging block advances one block per step with probability
    p_c = min(1, P_ave*eta*dt/Q / delta_s); discharging descends with the
    grid-side rate p_d = min(1, (P_ave_d/eta)*dt/Q / delta_s). The top
    charging block feeds the upper special state, the bottom discharging
    block the lower one. Special states are absorbing.

    When measurement classifications are supplied, each interval's forced-
    charging inflow rate is the fraction of its occupants that currently
    satisfy the forced-charging predicate (EVs already classified as forced
    sit in the special state, so this is typically zero).
    """
    if dt_h <= 0:
        raise ValueError("dt must be positive")
    n_s = grid.n_s
    dim = grid.n_states
    a = np.zeros((dim, dim))

    p_c = min(1.0, stats.p_ave_charge * stats.eta_mean * dt_h / stats.q_mean / grid.delta_s)
    p_d = min(1.0, (stats.p_ave_discharge / stats.eta_mean) * dt_h / stats.q_mean / grid.delta_s)

    fcs_rate = np.zeros(3 * n_s)
    if states is not None and would_force is not None:
        states = np.asarray(states, dtype=np.int64)
        would_force = np.asarray(would_force, dtype=bool)
        for col in range(3 * n_s):
            mask = states == col + 1
            total = int(mask.sum())
            if total:
                fcs_rate[col] = float((mask & would_force).sum()) / total

    for j in range(1, n_s + 1):
        cm = j - 1
        im = n_s + j - 1
        dm = 2 * n_s + j - 1
        up = grid.ss_max - 1 if j == n_s else cm + 1
        down = grid.ss_min - 1 if j == 1 else dm - 1
        a[up, cm] += p_c
        a[cm, cm] += 1.0 - p_c
        a[im, im] += 1.0
        a[down, dm] += p_d
        a[dm, dm] += 1.0 - p_d
    for col in range(3 * n_s):
        rate = min(fcs_rate[col], 1.0)
        if rate > 0:
            a[:, col] *= 1.0 - rate
            a[grid.fcs - 1, col] += rate
    for s in (grid.ss_max, grid.fcs, grid.ss_min):
        a[s - 1, s - 1] = 1.0
    return a


def predict(x: np.ndarray, a: np.ndarray, u: np.ndarray, v: np.ndarray,
            grid: SocGrid) -> np.ndarray:
    """One model step: x' = A x + B u + C v.

    B moves mass from the charging blocks into idle, C from idle into
    discharging (negative entries go the other way). Special-state rows are
    untouched by feedback.
    """
    n_s = grid.n_s
    x2 = a @ x
    x2[:n_s] -= u
    x2[n_s:2 * n_s] += u - v
    x2[2 * n_s:3 * n_s] += v
    low = float(x2.min())
    if low < -1e-9:
        raise FeedbackInfeasible(f"feedback drives mass {low:.3e} negative")
    np.clip(x2, 0.0, None, out=x2)
    s = x2.sum()
    drift = abs(s - x.sum())
    if drift >= 1e-6:
        raise FeedbackInfeasible(f"mass drift {drift:.3e} after feedback step")
    if s > 0:
        x2 *= x.sum() / s
    return x2


@dataclass
class FeedbackSignal:
    u: np.ndarray           # charging<->idle mass shifts per SoC block
    v: np.ndarray           # idle<->discharging mass shifts per SoC block
    saturated: bool = False


def make_feedback(x: np.ndarray, target_power_kw: float, p_ave_kw: float,
                  n_connected: int, grid: SocGrid,
                  margin: float = 0.95) -> FeedbackSignal:
    """Greedy state-priority allocation of the mass shift that moves the model
    output toward the requested power.

    Power increases release chargers first (highest-SoC blocks first), then
    push idle EVs to discharge. Power decreases mirror that: recall
    dischargers from the lowest blocks, then send idle EVs to charge.
    The per-block shift is capped below the block occupancy so the following
    model step stays feasible.
    """
    n_s = grid.n_s
    u = np.zeros(n_s)
    v = np.zeros(n_s)
    scale = p_ave_kw * n_connected
    if scale <= 0:
        return FeedbackSignal(u, v, saturated=abs(target_power_kw) > 1e-9)
    y = aggregated_power(x, p_ave_kw, n_connected, grid)
    need = (target_power_kw - y) / scale
    if abs(need) < 1e-12:
        return FeedbackSignal(u, v)

    cm = x[:n_s]
    im = x[n_s:2 * n_s]
    dm = x[2 * n_s:3 * n_s]
    remaining = abs(need)
    if need > 0:
        for j in reversed(range(n_s)):      # stop charging, high SoC first
            take = min(margin * cm[j], remaining)
            u[j] = take
            remaining -= take
            if remaining <= 1e-15:
                break
        if remaining > 1e-15:
            for j in reversed(range(n_s)):  # then discharge idle EVs
                take = min(margin * im[j], remaining)
                v[j] = take
                remaining -= take
                if remaining <= 1e-15:
                    break
    else:
        for j in range(n_s):                # recall dischargers, low SoC first
            take = min(margin * dm[j], remaining)
            v[j] = -take
            remaining -= take
            if remaining <= 1e-15:
                break
        if remaining > 1e-15:
            for j in range(n_s):            # then charge idle EVs
                take = min(margin * im[j], remaining)
                u[j] = -take
                remaining -= take
                if remaining <= 1e-15:
                    break
    return FeedbackSignal(u, v, saturated=remaining > 1e-12)


@dataclass
class ControlBroadcast:
    """Probabilistic switching vectors plus the control direction element."""

    u_s: np.ndarray
    v_s: np.ndarray
    cde: int = 1

    def is_zero(self) -> bool:
        return not (np.any(self.u_s > 0) or np.any(self.v_s > 0))


def to_broadcast(u: np.ndarray, v: np.ndarray, x: np.ndarray,
                 grid: SocGrid) -> ControlBroadcast:
    """Convert mass shifts into per-block switching probabilities.

    Probability = |shift| / occupancy of the block EVs switch out of; blocks
    with zero occupancy broadcast zero. A single call must carry a single
    direction.
    """
    n_s = grid.n_s
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    has_pos = np.any(u > 1e-15) or np.any(v > 1e-15)
    has_neg = np.any(u < -1e-15) or np.any(v < -1e-15)
    if has_pos and has_neg:
        raise MixedDirectionError("feedback mixes both control directions")
    cde = -1 if has_neg else 1
    cm = x[:n_s]
    im = x[n_s:2 * n_s]
    dm = x[2 * n_s:3 * n_s]
    if cde > 0:
        src_u, src_v = cm, im
    else:
        src_u, src_v = im, dm
    with np.errstate(divide="ignore", invalid="ignore"):
        u_s = np.where(src_u > 0, np.abs(u) / src_u, 0.0)
        v_s = np.where(src_v > 0, np.abs(v) / src_v, 0.0)
    return ControlBroadcast(u_s=np.clip(u_s, 0.0, 1.0),
                            v_s=np.clip(v_s, 0.0, 1.0), cde=cde)
