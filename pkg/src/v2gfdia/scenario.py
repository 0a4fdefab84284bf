"""Scenario orchestration: the measurement/control loop, metrics, export.

One simulated day ticks in steps of ``step_s`` seconds. Every ``n_p``-th
step the connected fleet reports, the operator's aggregate model is renewed
from those reports (fabricated ones included while the attack is active),
the detector runs, and the attacker plans its next period. In between, the
model evolves open loop plus feedback, control broadcasts are executed by
the true fleet, and per-step metrics are recorded from a ground-truth
channel the operator never sees.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import agc as agc_mod
from . import essm
from .attack import Attacker
from .config import ScenarioConfig, config_hash, to_dict
from .detector import Alarm, DetectionConfig, check_aggregate, feasibility_mask
from .essm import SocGrid
from .fleet import Fleet, quantize_soc, sample_fleet

logger = logging.getLogger(__name__)


class MetricsError(ValueError):
    """A summary metric was requested on records that cannot support it."""


def mape(dp_r_kw: np.ndarray, dp_ev_kw: np.ndarray) -> float:
    """Mean absolute percent error of delivered vs requested correction,
    over the steps with a nonzero request."""
    dp_r_kw = np.asarray(dp_r_kw, dtype=float)
    dp_ev_kw = np.asarray(dp_ev_kw, dtype=float)
    mask = np.abs(dp_r_kw) > 1e-9
    if not np.any(mask):
        raise MetricsError("no records with a nonzero power request")
    return float(np.mean(np.abs(dp_ev_kw[mask] - dp_r_kw[mask]) / np.abs(dp_r_kw[mask])))


def compute_true_aggregates(fleet: Fleet, grid: SocGrid):
    """Ground-truth aggregates from unfalsified physical state.

    Returns (x, n, p_ave, y, y_u, y_l). Never visible to the operator path.
    """
    conn = fleet.connected
    n = int(conn.sum())
    if n == 0:
        return np.zeros(grid.n_states), 0, 0.0, 0.0, 0.0, 0.0
    states = essm.state_indices(fleet.soc[conn], fleet.power_kw()[conn],
                                fleet.forced[conn], grid)
    x, _ = essm.build_state_vector(states, grid)
    p_avg = float(fleet.charge_power[conn].mean())
    y = essm.aggregated_power(x, p_avg, n, grid)
    y_u, y_l = essm.flexibility_bounds(x, p_avg, n, grid)
    return x, n, p_avg, y, y_u, y_l


def _philox_uniforms(seed: int, stream: int, step: int, n: int) -> np.ndarray:
    """Counter-based per-step uniforms: one independent draw per EV, identical
    regardless of evaluation order."""
    bg = np.random.Philox(key=np.array([seed & 0xFFFFFFFFFFFFFFFF,
                                        stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64),
                          counter=np.array([step, 0, 0, 0], dtype=np.uint64))
    return np.random.Generator(bg).random(n)


class Operator:
    """The coordinator's side: aggregate model, per-EV registry, prediction.

    The model state is kept in EV-count units (counts / N is the
    distribution): composition changes from known connections, scheduled
    departures and predicted forced-charging transitions are folded in as
    exact count moves, while drift and feedback evolve through the
    transition matrix.
    """

    def __init__(self, fleet: Fleet, grid: SocGrid, n_p: int, step_h: float,
                 g_soc: float, detect: DetectionConfig):
        self.fleet = fleet  # static spec/session knowledge only
        self.grid = grid
        self.n_p = n_p
        self.step_h = step_h
        self.t_p_h = n_p * step_h
        self.g = g_soc
        self.margin_h = fleet.params.forced_margin_h
        self.detect = detect
        n = fleet.size
        self.known = np.zeros(n, dtype=bool)
        self.rep_soc = np.zeros(n)
        self.rep_power = np.zeros(n)
        self.rep_step = np.full(n, -1, dtype=np.int64)
        self.forced_view = np.zeros(n, dtype=bool)
        self.state_view = np.zeros(n, dtype=np.int64)
        self.counts = np.zeros(grid.n_states)
        self.a_mat = np.eye(grid.n_states)
        self.p_ave = 0.0
        self.renewals = 0
        self.events: dict[int, list[tuple[int, int]]] = {}

    # ---- composition events ------------------------------------------------
    def register_connection(self, ev: int, soc_q: float, power: float,
                            now_h: float, k: int):
        f = self.fleet
        forced = bool(essm.classify_forced(
            np.array([False]), np.array([soc_q]), np.array([power]),
            f.depart_soc[ev:ev + 1], f.capacity[ev:ev + 1], f.efficiency[ev:ev + 1],
            f.charge_power[ev:ev + 1], f.t_finish[ev:ev + 1], now_h, self.g,
            self.margin_h)[0])
        state = int(essm.state_indices(np.array([soc_q]), np.array([power]),
                                       np.array([forced]), self.grid)[0])
        self.known[ev] = True
        self.rep_soc[ev] = soc_q
        self.rep_power[ev] = power
        self.rep_step[ev] = -1  # connection message, not a scheduled report
        self.forced_view[ev] = forced
        self.state_view[ev] = state
        self.counts[state - 1] += 1.0

    def deregister(self, ev: int):
        if not self.known[ev]:
            return
        state = int(self.state_view[ev])
        move = min(1.0, self.counts[state - 1])
        self.counts[state - 1] -= move
        self.known[ev] = False
        for lst in self.events.values():  # drop the EV's pending transitions
            lst[:] = [e for e in lst if e[0] != ev]

    def _apply_events(self, k: int):
        for ev, src, dst in self.events.pop(k, ()):
            move = min(1.0, self.counts[src - 1])
            self.counts[src - 1] -= move
            self.counts[dst - 1] += move
            self.state_view[ev] = dst

    def _schedule_window_events(self, ids: np.ndarray, k: int, now_h: float):
        """Predict forced-charging entries/exits inside the coming window from
        reported SoC and known sessions; exact per-EV count moves."""
        self.events.clear()
        f = self.fleet
        g2 = 0.5 * self.g
        soc = self.rep_soc[ids]
        power = self.rep_power[ids]
        forced = self.forced_view[ids]
        need = f.depart_soc[ids] - soc
        rate = f.efficiency[ids] * f.charge_power[ids] / f.capacity[ids]  # SoC/h
        # exits use the unbiased completion estimate from the reported SoC
        exit_dt = np.where(need > 0, need / rate, 0.0)
        # entries fire at the protocol trigger the classifier also uses
        hours_needed = need / rate
        slack = f.t_finish[ids] - now_h
        entry_dt = slack - hours_needed - self.margin_h
        target_q = quantize_soc(f.depart_soc[ids], self.g)
        dest_block = self.grid.block_of(target_q)
        for i, ev in enumerate(ids):
            if forced[i]:
                dt = float(exit_dt[i])
                if 0.0 <= dt < self.t_p_h:
                    step = k + max(1, int(np.ceil(dt / self.step_h - 1e-9)))
                    if target_q[i] >= self.grid.soc_max - 1e-9:
                        dst = self.grid.ss_max
                    else:
                        dst = self.grid.n_s + int(dest_block[i])  # idle at target
                    self.events.setdefault(step, []).append(
                        (int(ev), self.grid.fcs, dst))
            elif need[i] > g2 and abs(power[i]) < 1e-9:
                dt = float(entry_dt[i])
                if 0.0 < dt < self.t_p_h:
                    step = k + max(1, int(np.ceil(dt / self.step_h - 1e-9)))
                    self.events.setdefault(step, []).append(
                        (int(ev), int(self.state_view[ev]), self.grid.fcs))

    # ---- renewal -------------------------------------------------------------
    def renew(self, ids: np.ndarray, socs: np.ndarray, powers: np.ndarray,
              now_h: float, k: int) -> tuple[list[Alarm], np.ndarray, float]:
        """Consume one reporting round; returns (alarms, x_rebuilt, distance)."""
        f = self.fleet
        alarms: list[Alarm] = []

        # per-EV feasibility on consecutive scheduled reports
        prev_ok = self.known[ids] & (self.rep_step[ids] == k - self.n_p)
        if np.any(prev_ok) and k > 0:
            sub = ids[prev_ok]
            bad = feasibility_mask(self.rep_soc[sub], socs[prev_ok], powers[prev_ok],
                                   f.capacity[sub], f.charge_power[sub],
                                   f.discharge_power[sub], f.efficiency[sub],
                                   self.t_p_h, self.detect)
            for ev, d_soc, p in zip(sub[bad], (socs[prev_ok] - self.rep_soc[sub])[bad],
                                    powers[prev_ok][bad]):
                alarms.append(Alarm(kind="feasibility", step=k, value=float(d_soc),
                                    ev_id=int(ev),
                                    detail=f"dSoC={d_soc:.4f} P={p:.2f}"))

        # sticky forced-charging classification on the reported values
        forced = essm.classify_forced(
            self.forced_view[ids], socs, powers, f.depart_soc[ids], f.capacity[ids],
            f.efficiency[ids], f.charge_power[ids], f.t_finish[ids], now_h, self.g,
            self.margin_h)

        states = essm.state_indices(socs, powers, forced, self.grid)
        counts = np.bincount(states - 1, minlength=self.grid.n_states).astype(float)
        n = ids.size
        x_rebuilt = counts / n if n else counts

        distance = 0.0
        if self.renewals > 0 and n > 0 and self.counts.sum() > 0:
            x_model = self.counts / self.counts.sum()
            distance = float(np.abs(x_rebuilt - x_model).sum()
                             if self.detect.norm == "l1"
                             else np.abs(x_rebuilt - x_model).max())
            alarm = check_aggregate(x_rebuilt, x_model, self.detect, step=k,
                                    n_connected=n)
            if alarm is not None:
                alarms.append(alarm)

        # adopt the fresh snapshot
        self.counts = counts
        self.forced_view[ids] = forced
        self.rep_soc[ids] = socs
        self.rep_power[ids] = powers
        self.rep_step[ids] = k
        self.state_view[ids] = states
        if n:
            self.p_ave = float(f.charge_power[ids].mean())
            stats = essm.FleetStats(
                p_ave_charge=self.p_ave,
                p_ave_discharge=float(f.discharge_power[ids].mean()),
                eta_mean=float(f.efficiency[ids].mean()),
                q_mean=float(f.capacity[ids].mean()),
            )
            # interval occupants satisfying the forced predicate are already
            # classified into the forced state, so the literal inflow is zero
            would_force = np.zeros_like(forced)
            self.a_mat = essm.build_transition_matrix(
                self.grid, self.step_h, stats, states, would_force)
            col = self.a_mat.sum(axis=0)
            assert np.all(np.abs(col - 1.0) < 1e-9), "transition matrix not column-stochastic"
            self._schedule_window_events(ids, k, now_h)
        self.renewals += 1
        return alarms, x_rebuilt, distance

    # ---- between renewals ------------------------------------------------------
    def step_model(self, k: int, target_power_kw: float | None):
        """Apply scheduled events, derive feedback toward the target, advance
        the model one step; returns the broadcast (or None)."""
        self._apply_events(k)
        total = self.counts.sum()
        if total <= 0:
            return None, False
        broadcast = None
        saturated = False
        if target_power_kw is not None and self.p_ave > 0:
            fb = essm.make_feedback(self.counts, target_power_kw, self.p_ave, 1,
                                    self.grid)
            saturated = fb.saturated
            if np.any(fb.u != 0) or np.any(fb.v != 0):
                broadcast = essm.to_broadcast(fb.u, fb.v, self.counts, self.grid)
            self.counts = essm.predict(self.counts, self.a_mat, fb.u, fb.v, self.grid)
        else:
            self.counts = essm.predict(self.counts, self.a_mat,
                                       np.zeros(self.grid.n_s),
                                       np.zeros(self.grid.n_s), self.grid)
        return broadcast, saturated

    def model_y(self) -> float:
        return essm.aggregated_power(self.counts, self.p_ave, 1, self.grid)

    def fcs_draw_kw(self) -> float:
        return self.p_ave * float(self.counts[self.grid.fcs - 1])


@dataclass
class RunMetrics:
    seed: int
    config_hash: str
    step_t: np.ndarray
    step_dpr: np.ndarray
    step_dpev: np.ndarray
    step_y_true: np.ndarray
    step_y_model: np.ndarray
    step_saturated: np.ndarray
    epoch_t: np.ndarray
    epoch_n: np.ndarray
    epoch_distance: np.ndarray
    epoch_attack: np.ndarray
    epoch_y_est: np.ndarray
    epoch_yu_est: np.ndarray
    epoch_yl_est: np.ndarray
    epoch_y_true: np.ndarray
    epoch_yu_true: np.ndarray
    epoch_yl_true: np.ndarray
    alarms: list[Alarm]
    attack_fallbacks: int = 0
    measurement_log: list = field(default_factory=list)
    spec_table: list = field(default_factory=list)

    def alarm_count(self, kind: str | None = None) -> int:
        if kind is None:
            return len(self.alarms)
        return sum(1 for a in self.alarms if a.kind == kind)

    def mape_window(self, t_lo: float = -np.inf, t_hi: float = np.inf) -> float:
        mask = (self.step_t >= t_lo) & (self.step_t < t_hi)
        return mape(self.step_dpr[mask], self.step_dpev[mask])

    def summary(self, cfg: ScenarioConfig) -> dict:
        post = cfg.attack.start_h
        out = {
            "seed": self.seed,
            "config_hash": self.config_hash,
            "alarms_aggregate": self.alarm_count("aggregate"),
            "alarms_feasibility": self.alarm_count("feasibility"),
            "attack_fallbacks": self.attack_fallbacks,
            "epochs": int(self.epoch_t.size),
            "tracking_ok_fraction": None,
            "mape_overall": None,
            "mape_preattack": None,
            "mape_postattack": None,
            "divergence_mean_post_kw": None,
            "divergence_final_kw": None,
        }
        if self.epoch_t.size:
            dist = self.epoch_distance[1:]  # first epoch has no prediction
            if dist.size:
                out["tracking_ok_fraction"] = round(float(
                    np.mean(dist < cfg.epsilon)), 6)
        for key, lo, hi in (("mape_overall", -np.inf, np.inf),
                            ("mape_preattack", -np.inf, post),
                            ("mape_postattack", post, np.inf)):
            try:
                out[key] = round(self.mape_window(lo, hi), 6)
            except MetricsError:
                pass
        post_mask = self.epoch_attack.astype(bool)
        if np.any(post_mask):
            gap = self.epoch_yu_est[post_mask] - self.epoch_yu_true[post_mask]
            out["divergence_mean_post_kw"] = round(float(gap.mean()), 3)
            out["divergence_final_kw"] = round(float(gap[-1]), 3)
        return out


def run_scenario(cfg: ScenarioConfig, collect_measurement_log: bool = False) -> RunMetrics:
    cfg.validate()
    grid = SocGrid(n_s=cfg.n_s, soc_min=cfg.fleet.soc_min, soc_max=cfg.fleet.soc_max)
    step_h = cfg.step_s / 3600.0
    n_p = cfg.resolved_n_p()
    t_p_h = n_p * step_h
    n_steps = int(round(cfg.duration_h / step_h))
    detect = DetectionConfig(epsilon=cfg.epsilon, norm=cfg.detection_norm,
                             granularity=cfg.g_soc)

    fleet = sample_fleet(cfg.fleet, cfg.seed)
    operator = Operator(fleet, grid, n_p, step_h, cfg.g_soc, detect)
    attacker = Attacker(grid, cfg.attack, t_p_h, n_p, cfg.g_soc,
                        margin_h=cfg.fleet.forced_margin_h)

    m = RunMetrics(
        seed=cfg.seed, config_hash=config_hash(cfg),
        step_t=np.arange(n_steps) * step_h,
        step_dpr=np.zeros(n_steps), step_dpev=np.zeros(n_steps),
        step_y_true=np.zeros(n_steps), step_y_model=np.zeros(n_steps),
        step_saturated=np.zeros(n_steps, dtype=bool),
        epoch_t=np.zeros(0), epoch_n=np.zeros(0, dtype=np.int64),
        epoch_distance=np.zeros(0), epoch_attack=np.zeros(0, dtype=bool),
        epoch_y_est=np.zeros(0), epoch_yu_est=np.zeros(0), epoch_yl_est=np.zeros(0),
        epoch_y_true=np.zeros(0), epoch_yu_true=np.zeros(0), epoch_yl_true=np.zeros(0),
        alarms=[],
    )
    ep: dict[str, list] = {k: [] for k in ("t", "n", "dist", "att", "y_est", "yu_est",
                                           "yl_est", "y_true", "yu_true", "yl_true")}
    if collect_measurement_log:
        m.spec_table = [(int(i), float(fleet.capacity[i]), float(fleet.charge_power[i]),
                         float(fleet.discharge_power[i]), float(fleet.efficiency[i]))
                        for i in range(fleet.size)]

    for k in range(n_steps):
        now = k * step_h

        # composition events take effect at the step boundary
        ids_in, ids_out = fleet.process_connections(now, step_h)
        for ev in ids_out:
            operator.deregister(int(ev))
        fleet.update_forced_charging(now)
        if ids_in.size:
            soc_q = quantize_soc(fleet.soc[ids_in], cfg.g_soc)
            p_in = fleet.power_kw()[ids_in]
            for ev, s, p in zip(ids_in, soc_q, p_in):
                operator.register_connection(int(ev), float(s), float(p), now, k)

        attack_on = cfg.attack.active(now)

        if k % n_p == 0:
            conn_ids = np.flatnonzero(fleet.connected)
            socs = quantize_soc(fleet.soc[conn_ids], cfg.g_soc)
            powers = fleet.power_kw()[conn_ids]
            fab_mask = np.zeros(conn_ids.size, dtype=bool)
            if attack_on:
                attacker.sync(fleet, quantize_soc(fleet.soc, cfg.g_soc),
                              fleet.power_kw(), now)
                fab_ids, fab_soc, fab_power = attacker.step(now, k, step_h)
                if fab_ids.size:
                    pos = np.searchsorted(conn_ids, fab_ids)
                    ok = (pos < conn_ids.size) & (conn_ids[np.minimum(
                        pos, conn_ids.size - 1)] == fab_ids)
                    socs[pos[ok]] = fab_soc[ok]
                    powers[pos[ok]] = fab_power[ok]
                    fab_mask[pos[ok]] = True
            if collect_measurement_log:
                for i, ev in enumerate(conn_ids):
                    m.measurement_log.append((k, int(ev), float(socs[i]),
                                              float(powers[i]), bool(fab_mask[i])))
            alarms, x_rebuilt, dist = operator.renew(conn_ids, socs, powers, now, k)
            m.alarms.extend(alarms)

            x_t, n_t, p_t, y_t, yu_t, yl_t = compute_true_aggregates(fleet, grid)
            n_est = conn_ids.size
            y_e = essm.aggregated_power(x_rebuilt, operator.p_ave, n_est, grid)
            yu_e, yl_e = essm.flexibility_bounds(x_rebuilt, operator.p_ave, n_est, grid)
            assert n_est == 0 or abs(x_rebuilt.sum() - 1.0) < 1e-9
            ep["t"].append(now)
            ep["n"].append(n_est)
            ep["dist"].append(dist)
            ep["att"].append(attack_on)
            ep["y_est"].append(y_e)
            ep["yu_est"].append(yu_e)
            ep["yl_est"].append(yl_e)
            ep["y_true"].append(y_t)
            ep["yu_true"].append(yu_t)
            ep["yl_true"].append(yl_t)

        # dispatch and control
        dpr = cfg.dispatch.request_kw(now)
        target = None
        if cfg.control_enabled and abs(dpr) > 1e-9:
            target = dpr - operator.fcs_draw_kw()
        broadcast, saturated = operator.step_model(k, target)
        if broadcast is not None and not broadcast.is_zero():
            eligible = fleet.connected & ~fleet.forced
            idle = fleet.mode == 0
            eligible &= ~(idle & (fleet.soc >= fleet.soc_max - 1e-9))
            eligible &= ~(idle & (fleet.soc <= fleet.soc_min + 1e-9))
            blocks = grid.block_of(fleet.soc)
            uniforms = _philox_uniforms(cfg.seed, 0xB0ADCA57, k, fleet.size)
            fleet.apply_broadcast_vec(broadcast, blocks, eligible, uniforms)

        # truth channel and per-step records
        x_t, n_t, p_t, y_t, yu_t, yl_t = compute_true_aggregates(fleet, grid)
        fcs_true_kw = p_t * n_t * x_t[grid.fcs - 1] if n_t else 0.0
        m.step_dpr[k] = dpr
        m.step_dpev[k] = y_t + fcs_true_kw
        m.step_y_true[k] = y_t
        m.step_y_model[k] = operator.model_y()
        m.step_saturated[k] = saturated

        fleet.integrate(step_h)

    for key, attr in (("t", "epoch_t"), ("n", "epoch_n"), ("dist", "epoch_distance"),
                      ("att", "epoch_attack"), ("y_est", "epoch_y_est"),
                      ("yu_est", "epoch_yu_est"), ("yl_est", "epoch_yl_est"),
                      ("y_true", "epoch_y_true"), ("yu_true", "epoch_yu_true"),
                      ("yl_true", "epoch_yl_true")):
        setattr(m, attr, np.asarray(ep[key]))
    m.attack_fallbacks = attacker.fallbacks
    return m


# ---- artifact export ---------------------------------------------------------

def export(metrics: RunMetrics, cfg: ScenarioConfig, out_dir) -> list[str]:
    """Write flexibility.csv, control.csv, alarms.log, agc.csv, summary.json."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    path = os.path.join(out_dir, "flexibility.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("t_h,n_connected,y_est_kw,y_upper_est_kw,y_lower_est_kw,"
                "y_true_kw,y_upper_true_kw,y_lower_true_kw,attack_active\n")
        for i in range(metrics.epoch_t.size):
            f.write(f"{metrics.epoch_t[i]:.6f},{metrics.epoch_n[i]:d},"
                    f"{metrics.epoch_y_est[i]:.3f},{metrics.epoch_yu_est[i]:.3f},"
                    f"{metrics.epoch_yl_est[i]:.3f},{metrics.epoch_y_true[i]:.3f},"
                    f"{metrics.epoch_yu_true[i]:.3f},{metrics.epoch_yl_true[i]:.3f},"
                    f"{int(metrics.epoch_attack[i])}\n")
    written.append(path)

    path = os.path.join(out_dir, "control.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("t_h,dp_r_kw,dp_ev_kw,y_model_kw,y_true_kw,saturated\n")
        for i in range(metrics.step_t.size):
            f.write(f"{metrics.step_t[i]:.6f},{metrics.step_dpr[i]:.3f},"
                    f"{metrics.step_dpev[i]:.3f},{metrics.step_y_model[i]:.3f},"
                    f"{metrics.step_y_true[i]:.3f},{int(metrics.step_saturated[i])}\n")
    written.append(path)

    path = os.path.join(out_dir, "alarms.log")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for a in metrics.alarms:
            f.write(f"step={a.step} kind={a.kind} ev={a.ev_id} "
                    f"value={a.value:.6f} detail={a.detail}\n")
    written.append(path)

    path = os.path.join(out_dir, "agc.csv")
    report = agc_scenario_from_run(metrics, cfg)
    agc_mod.write_csv(report.trajectory, cfg.agc, path)
    written.append(path)

    path = os.path.join(out_dir, "summary.json")
    summary = metrics.summary(cfg)
    summary["agc"] = {
        "dispatched_mw": round(report.dispatched_mw, 3),
        "delivered_mw": round(report.delivered_mw, 3),
        "shortfall_mw": round(report.shortfall_mw, 3),
        "residual_after_generators_mw": round(report.residual_after_generators_mw, 3),
        "peak_df1_hz": round(report.peak_df1_hz, 6),
        "peak_df2_hz": round(report.peak_df2_hz, 6),
        "ptie_min_pu": round(report.ptie_min_pu, 6),
    }
    summary["config"] = to_dict(cfg)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    written.append(path)

    if metrics.measurement_log:
        path = os.path.join(out_dir, "measurements.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("step,ev_id,soc,power_kw,fabricated\n")
            for k, ev, s, p, fab in metrics.measurement_log:
                f.write(f"{k},{ev},{s:.2f},{p:.3f},{int(fab)}\n")
        written.append(path)
        path = os.path.join(out_dir, "evspecs.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("ev_id,capacity_kwh,charge_power_kw,discharge_power_kw,efficiency\n")
            for row in metrics.spec_table:
                f.write(f"{row[0]},{row[1]:.4f},{row[2]:.4f},{row[3]:.4f},{row[4]:.6f}\n")
        written.append(path)
    return written


def agc_scenario_from_run(metrics: RunMetrics, cfg: ScenarioConfig):
    """Feed the frequency scenario with this run's delivered correction at the
    big dispatch step when present, else with the canonical reference numbers."""
    dispatched = cfg.dispatch.big_step_mw
    window = (metrics.step_t >= cfg.dispatch.big_step_start_h) & \
             (metrics.step_t < cfg.dispatch.big_step_stop_h) & \
             (np.abs(metrics.step_dpr) > 1e-9)
    if np.any(window):
        delivered = float(np.clip(np.mean(metrics.step_dpev[window]) / 1e3,
                                  0.0, dispatched))
        epoch_mask = (metrics.epoch_t >= cfg.dispatch.big_step_start_h - 0.25)
        flex = float(metrics.epoch_yu_true[epoch_mask].max() / 1e3) \
            if np.any(epoch_mask) else dispatched
        flex = max(flex, delivered)
    else:
        dispatched, delivered, flex = 50.0, 25.95, 68.2
    return agc_mod.scenario_2200(cfg.agc, flexibility_true_mw=flex,
                                 dispatched_mw=dispatched, delivered_mw=delivered,
                                 step_mw=dispatched)
