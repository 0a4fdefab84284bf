"""EV fleet: population sampling, per-EV battery physics, mode switching.

Sign convention follows the battery state equation used throughout the
package: power < 0 means the EV is charging (SoC rises), power > 0 means it
is discharging into the grid, 0 is idle. Charging multiplies by efficiency,
discharging divides by it, so the grid-side energy always exceeds the
battery-side change.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

SOC_GRANULARITY = 0.01  # reporting resolution of the SoC channel


class Mode(IntEnum):
    """Operating mode; the value matches the sign of the EV's power."""

    CHARGING = -1
    IDLE = 0
    DISCHARGING = 1


class PhysicsViolation(ValueError):
    """Commanded power outside the EV's rated envelope."""


class ConfigurationError(ValueError):
    """Invalid population descriptors."""


@dataclass(frozen=True)
class EvSpec:
    capacity_kwh: float
    charge_power_kw: float      # positive magnitude
    discharge_power_kw: float   # positive magnitude
    efficiency: float
    soc_min: float = 0.05
    soc_max: float = 0.95

    def __post_init__(self):
        if not (0.0 <= self.soc_min < self.soc_max <= 1.0):
            raise ConfigurationError("require 0 <= soc_min < soc_max <= 1")
        if self.capacity_kwh <= 0 or self.charge_power_kw <= 0 or self.discharge_power_kw <= 0:
            raise ConfigurationError("capacity and power ratings must be positive")
        if not (0.0 < self.efficiency <= 1.0):
            raise ConfigurationError("efficiency must be in (0, 1]")


@dataclass(frozen=True)
class EvSession:
    start_time_h: float
    finish_time_h: float
    start_soc: float
    depart_soc: float

    def __post_init__(self):
        if not self.start_time_h < self.finish_time_h:
            raise ConfigurationError("session must start before it finishes")
        if not self.start_soc <= self.depart_soc:
            raise ConfigurationError("departure SoC below start SoC")


@dataclass
class EvStatus:
    soc: float
    power_kw: float
    mode: Mode
    connected: bool
    compromised: bool = False
    forced_charging: bool = False


@dataclass(frozen=True)
class Measurement:
    ev_id: int
    soc: float          # integer multiple of the reporting granularity
    power_kw: float
    step: int


@dataclass(frozen=True)
class TruncatedNormal:
    mean: float
    std: float
    low: float
    high: float

    def validate(self, name):
        if not self.low < self.high:
            raise ConfigurationError(f"{name}: degenerate range [{self.low}, {self.high}]")
        if self.std <= 0:
            raise ConfigurationError(f"{name}: std must be positive")


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def validate(self, name):
        if not self.low < self.high:
            raise ConfigurationError(f"{name}: degenerate range [{self.low}, {self.high}]")


@dataclass(frozen=True)
class FleetParams:
    """Population descriptors; defaults are the reference fleet."""

    size: int = 10_000
    compromised_fraction: float = 0.30
    start_soc: TruncatedNormal = field(
        default_factory=lambda: TruncatedNormal(0.2, 0.05, 0.2, 0.4))
    depart_soc: TruncatedNormal = field(
        default_factory=lambda: TruncatedNormal(0.85, 0.03, 0.75, 0.95))
    start_time: TruncatedNormal = field(
        default_factory=lambda: TruncatedNormal(-6.5, 3.4, 0.0, 5.5))
    finish_time: TruncatedNormal = field(
        default_factory=lambda: TruncatedNormal(8.9, 3.4, 0.0, 20.9))
    charge_power: Uniform = field(default_factory=lambda: Uniform(6.0, 8.0))
    discharge_power: Uniform = field(default_factory=lambda: Uniform(6.0, 8.0))
    efficiency: Uniform = field(default_factory=lambda: Uniform(0.88, 0.95))
    capacity: Uniform = field(default_factory=lambda: Uniform(20.0, 40.0))
    soc_min: float = 0.05
    soc_max: float = 0.95
    # session times are sampled as offsets from these simulation-clock anchors
    # (hour 0 of the simulation is the evening connection ramp)
    start_anchor_h: float = 0.0
    finish_anchor_h: float = 12.0
    # safety margin of the vehicle-side forced-charging trigger: EVs start
    # their catch-up charge this many hours before the last possible moment
    forced_margin_h: float = 0.05

    def validate(self):
        if self.size <= 0:
            raise ConfigurationError("fleet size must be positive")
        if not 0.0 <= self.compromised_fraction <= 1.0:
            raise ConfigurationError("compromised_fraction must be in [0, 1]")
        if not (0.0 <= self.soc_min < self.soc_max <= 1.0):
            raise ConfigurationError("require 0 <= soc_min < soc_max <= 1")
        for name in ("start_soc", "depart_soc", "start_time", "finish_time"):
            getattr(self, name).validate(name)
        for name in ("charge_power", "discharge_power", "efficiency", "capacity"):
            getattr(self, name).validate(name)


def _sample_truncated_normal(rng, tn: TruncatedNormal, size: int) -> np.ndarray:
    """Rejection sampling: redraw until every value lands inside the range."""
    out = rng.normal(tn.mean, tn.std, size)
    bad = (out < tn.low) | (out > tn.high)
    guard = 0
    while np.any(bad):
        out[bad] = rng.normal(tn.mean, tn.std, int(bad.sum()))
        bad = (out < tn.low) | (out > tn.high)
        guard += 1
        if guard > 100_000:
            raise ConfigurationError("rejection sampling failed; range too unlikely")
    return out


class Fleet:
    """Vectorized container for the whole population plus its live state.

    Static arrays are set once by ``sample_fleet``. Live state (soc, mode,
    connected, forced) is advanced by ``step``. Scalar views (``spec_of`` and
    friends) expose single EVs for the per-EV operations and the detector.
    """

    def __init__(self, params: FleetParams, capacity, charge_power, discharge_power,
                 efficiency, t_start, t_finish, start_soc, depart_soc, compromised):
        self.params = params
        n = capacity.size
        self.size = n
        self.capacity = capacity
        self.charge_power = charge_power
        self.discharge_power = discharge_power
        self.efficiency = efficiency
        self.t_start = t_start
        self.t_finish = t_finish
        self.start_soc = start_soc
        self.depart_soc = depart_soc
        self.compromised = compromised
        self.soc_min = np.full(n, params.soc_min)
        self.soc_max = np.full(n, params.soc_max)
        # live state
        self.soc = start_soc.copy()
        self.mode = np.zeros(n, dtype=np.int8)
        self.connected = np.zeros(n, dtype=bool)
        self.forced = np.zeros(n, dtype=bool)

    # ---- scalar views ----------------------------------------------------
    def spec_of(self, i: int) -> EvSpec:
        return EvSpec(
            capacity_kwh=float(self.capacity[i]),
            charge_power_kw=float(self.charge_power[i]),
            discharge_power_kw=float(self.discharge_power[i]),
            efficiency=float(self.efficiency[i]),
            soc_min=float(self.soc_min[i]),
            soc_max=float(self.soc_max[i]),
        )

    def session_of(self, i: int) -> EvSession:
        return EvSession(
            start_time_h=float(self.t_start[i]),
            finish_time_h=float(self.t_finish[i]),
            start_soc=float(self.start_soc[i]),
            depart_soc=float(self.depart_soc[i]),
        )

    def status_of(self, i: int) -> EvStatus:
        return EvStatus(
            soc=float(self.soc[i]),
            power_kw=float(self.power_kw()[i]),
            mode=Mode(int(self.mode[i])),
            connected=bool(self.connected[i]),
            compromised=bool(self.compromised[i]),
            forced_charging=bool(self.forced[i]),
        )

    # ---- vectorized dynamics ----------------------------------------------
    def power_kw(self) -> np.ndarray:
        """Signed power implied by the current mode (0 when disconnected)."""
        p = np.zeros(self.size)
        charging = self.connected & (self.mode == Mode.CHARGING)
        discharging = self.connected & (self.mode == Mode.DISCHARGING)
        p[charging] = -self.charge_power[charging]
        p[discharging] = self.discharge_power[discharging]
        return p

    def process_connections(self, now_h: float, dt_h: float):
        """Connect/disconnect EVs whose session boundary falls in [now, now+dt).

        Returns (connected_ids, departed_ids). Newly connected EVs start idle.
        """
        arriving = ~self.connected & (self.t_start >= now_h - 1e-12) \
            & (self.t_start < now_h + dt_h - 1e-12) & (self.t_finish > now_h)
        ids_in = np.flatnonzero(arriving)
        if ids_in.size:
            self.connected[ids_in] = True
            self.soc[ids_in] = self.start_soc[ids_in]
            self.mode[ids_in] = Mode.IDLE
            self.forced[ids_in] = False
        leaving = self.connected & (self.t_finish < now_h + dt_h - 1e-12)
        ids_out = np.flatnonzero(leaving)
        if ids_out.size:
            self.connected[ids_out] = False
            self.mode[ids_out] = Mode.IDLE
            self.forced[ids_out] = False
        return ids_in, ids_out

    def update_forced_charging(self, now_h: float):
        """Enter/exit the forced-charging backstop; returns newly forced ids."""
        conn = self.connected
        exiting = conn & self.forced & (self.soc >= self.depart_soc - 1e-12)
        if np.any(exiting):
            self.forced[exiting] = False
            self.mode[exiting] = Mode.IDLE
        need = self.depart_soc - self.soc
        hours_needed = need * self.capacity / (self.efficiency * self.charge_power)
        margin = self.params.forced_margin_h
        trigger = conn & ~self.forced & (need > 1e-12) \
            & (hours_needed >= (self.t_finish - now_h) - margin - 1e-12)
        ids = np.flatnonzero(trigger)
        if ids.size:
            self.forced[ids] = True
            self.mode[ids] = Mode.CHARGING
        return ids

    def integrate(self, dt_h: float):
        """Advance SoC one step; EVs pinned at a bound fall back to idle."""
        conn = self.connected
        p = self.power_kw()
        ds = np.zeros(self.size)
        ch = conn & (p < 0)
        dis = conn & (p > 0)
        ds[ch] = -p[ch] * self.efficiency[ch] * dt_h / self.capacity[ch]
        ds[dis] = -(p[dis] / self.efficiency[dis]) * dt_h / self.capacity[dis]
        soc = self.soc + ds
        hit_hi = conn & (soc >= self.soc_max) & (p < 0)
        hit_lo = conn & (soc <= self.soc_min) & (p > 0)
        np.clip(soc, self.soc_min, self.soc_max, out=soc)
        self.soc = np.where(conn, soc, self.soc)
        stop = hit_hi | hit_lo
        if np.any(stop):
            self.mode[stop] = Mode.IDLE
            self.forced[stop] = False

    def apply_broadcast_vec(self, broadcast, blocks: np.ndarray,
                            eligible: np.ndarray, uniforms: np.ndarray):
        """Fleet-wide probabilistic mode switching.

        blocks : 1-based SoC block index per EV (only read where eligible)
        eligible : connected, not forced, not pinned in a boundary state
        uniforms : one U(0,1) draw per EV, supplied by the caller so that the
            draw schedule is independent of eligibility
        """
        cde = broadcast.cde
        u_s, v_s = broadcast.u_s, broadcast.v_s
        j = np.clip(blocks - 1, 0, u_s.size - 1)
        pu = u_s[j]
        pv = v_s[j]
        if cde > 0:
            sw_u = eligible & (self.mode == Mode.CHARGING) & (uniforms < pu)
            sw_v = eligible & (self.mode == Mode.IDLE) & (uniforms < pv)
            self.mode[sw_u] = Mode.IDLE
            self.mode[sw_v] = Mode.DISCHARGING
        else:
            sw_u = eligible & (self.mode == Mode.IDLE) & (uniforms < pu)
            sw_v = eligible & (self.mode == Mode.DISCHARGING) & (uniforms < pv)
            self.mode[sw_u] = Mode.CHARGING
            self.mode[sw_v] = Mode.IDLE


def sample_fleet(params: FleetParams, seed: int) -> Fleet:
    """Draw a population; identical (params, seed) gives identical fleets."""
    params.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = params.size
    capacity = rng.uniform(params.capacity.low, params.capacity.high, n)
    charge_power = rng.uniform(params.charge_power.low, params.charge_power.high, n)
    discharge_power = rng.uniform(params.discharge_power.low, params.discharge_power.high, n)
    efficiency = rng.uniform(params.efficiency.low, params.efficiency.high, n)

    start_soc = _sample_truncated_normal(rng, params.start_soc, n)
    depart_soc = _sample_truncated_normal(rng, params.depart_soc, n)
    t_start = params.start_anchor_h + _sample_truncated_normal(rng, params.start_time, n)
    t_finish = params.finish_anchor_h + _sample_truncated_normal(rng, params.finish_time, n)

    start_soc = np.clip(start_soc, params.soc_min, params.soc_max)
    depart_soc = np.clip(np.maximum(depart_soc, start_soc), params.soc_min, params.soc_max)
    t_finish = np.maximum(t_finish, t_start + 1e-6)

    n_comp = int(round(params.compromised_fraction * n))
    compromised = np.zeros(n, dtype=bool)
    compromised[rng.choice(n, size=n_comp, replace=False)] = True

    return Fleet(params, capacity, charge_power, discharge_power, efficiency,
                 t_start, t_finish, start_soc, depart_soc, compromised)


def step_ev(spec: EvSpec, soc: float, power_kw: float, dt_h: float) -> float:
    """One battery step. Charging (power<0) raises SoC by |P|*eta*dt/Q,
    discharging lowers it by (P/eta)*dt/Q; the result is clamped to the
    allowed SoC window."""
    if power_kw < -spec.charge_power_kw - 1e-9 or power_kw > spec.discharge_power_kw + 1e-9:
        raise PhysicsViolation(
            f"power {power_kw} kW outside [-{spec.charge_power_kw}, {spec.discharge_power_kw}]")
    if power_kw < 0:
        soc2 = soc - power_kw * spec.efficiency * dt_h / spec.capacity_kwh
    elif power_kw > 0:
        soc2 = soc - (power_kw / spec.efficiency) * dt_h / spec.capacity_kwh
    else:
        soc2 = soc
    return float(min(max(soc2, spec.soc_min), spec.soc_max))


def forced_charging_required(spec: EvSpec, session: EvSession,
                             soc: float, now_h: float) -> bool:
    """True when charging at full rated power from now on is (at best) just
    enough to reach the departure target by the session end."""
    remaining = session.depart_soc - soc
    if remaining <= 1e-12:
        return False
    hours_needed = remaining * spec.capacity_kwh / (spec.efficiency * spec.charge_power_kw)
    return hours_needed >= (session.finish_time_h - now_h) - 1e-12


def apply_broadcast(status: EvStatus, spec: EvSpec, broadcast, block: int,
                    uniform: float) -> EvStatus:
    """Per-EV response to a control broadcast.

    block is the EV's 1-based SoC block; EVs whose mode does not match the
    signalled direction ignore the message. Forced-charging EVs never react.
    Switched EVs take the power of their new mode (0 / -P_c / +P_d).
    """
    if not status.connected or status.forced_charging:
        return status
    j = block - 1
    if j < 0 or j >= broadcast.u_s.size:
        return status
    mode, power = status.mode, status.power_kw
    if broadcast.cde > 0:
        if mode == Mode.CHARGING and uniform < broadcast.u_s[j]:
            mode, power = Mode.IDLE, 0.0
        elif mode == Mode.IDLE and uniform < broadcast.v_s[j]:
            mode, power = Mode.DISCHARGING, spec.discharge_power_kw
    else:
        if mode == Mode.IDLE and uniform < broadcast.u_s[j]:
            mode, power = Mode.CHARGING, -spec.charge_power_kw
        elif mode == Mode.DISCHARGING and uniform < broadcast.v_s[j]:
            mode, power = Mode.IDLE, 0.0
    return EvStatus(soc=status.soc, power_kw=power, mode=mode,
                    connected=status.connected, compromised=status.compromised,
                    forced_charging=status.forced_charging)


def quantize_soc(soc, granularity: float = SOC_GRANULARITY):
    """Round to the nearest reporting quantum, ties upward."""
    return np.floor(np.asarray(soc) / granularity + 0.5) * granularity


def collect_measurements(fleet: Fleet, step: int, n_p: int | None = None,
                         granularity: float = SOC_GRANULARITY) -> list[Measurement]:
    """Quantized measurements of every connected EV, emitted on the reporting
    schedule (every n_p-th step when n_p is given)."""
    if n_p is not None and step % n_p != 0:
        return []
    ids = np.flatnonzero(fleet.connected)
    soc_q = quantize_soc(fleet.soc[ids], granularity)
    power = fleet.power_kw()[ids]
    return [Measurement(ev_id=int(i), soc=float(s), power_kw=float(p), step=step)
            for i, s, p in zip(ids, soc_q, power)]
