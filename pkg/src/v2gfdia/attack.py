"""Stealthy measurement-fabrication engine.

The attacker owns a shadow replica of every compromised, connected EV. Each
reporting period it advances the replicas one period (the story an honest
fleet would tell), plans a small aggregate redistribution of the shadow
distribution under its stealth budget, assigns the redistributed state
counts to individual replicas by maximum likelihood, converts the
assignments into concrete (SoC, power) pairs, and emits those instead of
the truth. Replicas are then updated with the fabricated values, so the lie
stays self-consistent across periods.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import essm
from .detector import DetectionConfig, feasibility_mask
from .essm import SocGrid
from .fleet import SOC_GRANULARITY, Mode
from .optkit import (
    LinearProgram,
    TransportationProblem,
    TransportInfeasible,
    solve_lp,
    solve_transportation,
)

logger = logging.getLogger(__name__)


class StealthViolation(RuntimeError):
    """A fabricated measurement failed the attacker's own feasibility check."""


class AssignmentInfeasible(RuntimeError):
    def __init__(self, state: int):
        super().__init__(f"no compromised EV can reach demanded state {state}")
        self.state = state


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.01        # aggregate stealth budget (per period)
    budget_fraction: float = 0.8  # share of the budget the planner spends
    horizon: int = 2             # extra look-ahead periods in the plan
    norm: str = "l1"             # norm of the aggregate stealth constraint
    objective: str = "upper"     # flexibility bound whose estimate is inflated
    start_h: float = 12.0
    stop_h: float = math.inf
    enabled: bool = True
    sees_clean_fleet: bool = False
    # fabricated discharge claims are only worth their eventual forced-
    # charging repayment for EVs with a long remaining session and a low
    # true SoC; others are left untouched
    min_claim_slack_h: float = 6.0
    max_claim_truth_soc: float = 0.45

    def active(self, now_h: float) -> bool:
        return self.enabled and self.start_h <= now_h < self.stop_h


def allowed_transitions(grid: SocGrid) -> frozenset[tuple[int, int]]:
    """Period-feasible state transitions: any mode change within the same SoC
    block (including the diagonal); special states only map to themselves."""
    n_s = grid.n_s
    pairs = set()
    for j in range(1, n_s + 1):
        triple = (j, n_s + j, 2 * n_s + j)
        for m in triple:
            for n in triple:
                pairs.add((m, n))
    for s in (grid.ss_max, grid.fcs, grid.ss_min):
        pairs.add((s, s))
    return frozenset(pairs)


def expressible_transitions(grid: SocGrid) -> frozenset[tuple[int, int]]:
    """The subset of allowed transitions the measurement mapping can actually
    realize for any EV of the source state: charging and discharging claims
    may move to idle, idle may claim discharging, everything may stay.

    Planning over this tightened set keeps every aggregate plan assignable
    to individual replicas.
    """
    n_s = grid.n_s
    pairs = set()
    for s in range(1, grid.n_states + 1):
        pairs.add((s, s))
    for j in range(1, n_s + 1):
        pairs.add((j, n_s + j))            # charging -> idle
        pairs.add((2 * n_s + j, n_s + j))  # discharging -> idle
        pairs.add((n_s + j, 2 * n_s + j))  # idle -> discharging
    return frozenset(pairs)


def _arc_list(phi, dim: int) -> list[tuple[int, int]]:
    """0-based (source, target) arcs: the 1-based pair set plus every stay."""
    arcs = {(a - 1, b - 1) for a, b in phi}
    arcs.update((s, s) for s in range(dim))
    return sorted(arcs)


@dataclass
class PlanResult:
    e0: np.ndarray
    objective: float
    identity_objective: float = 0.0


def plan_objective(e_list, x0, a, n_p, weight) -> float:
    """Cumulative weighted deviation of a manipulation plan against the
    cascade it would itself create."""
    w = accumulated_weight(a, n_p, weight)
    m = np.linalg.matrix_power(a, n_p)
    obj = 0.0
    x = x0
    for e in e_list:
        z = e @ x
        obj += float(w @ (z - x))
        x = m @ z
    return obj


def accumulated_weight(a: np.ndarray, n_p: int, weight: np.ndarray) -> np.ndarray:
    """sum_{i<n_p} (A^T)^i d: the one-period value of a unit of state mass."""
    w = np.zeros_like(weight, dtype=float)
    cur = weight.astype(float).copy()
    for _ in range(n_p):
        w += cur
        cur = a.T @ cur
    return w


def _solve_period(x, arcs, c, eps, norm):
    """max sum_f c[target] f over mass-conserving flows on the arc set, with
    the stealth ball around x. Returns per-arc flows.

    Conservation (every source state's mass is routed exactly once) keeps the
    planned image realizable by an assignment of individual EVs, which the
    raw matrix-form constraints do not guarantee.
    """
    dim = x.size
    n_arcs = len(arcs)
    l1 = norm != "linf"
    # variables: flows, then |z-x| helpers (l1) and slacks
    n_t = dim if l1 else 0
    n_slack = 2 * dim + (1 if l1 else 0)
    n_var = n_arcs + n_t + n_slack
    cols_from = {}
    cols_into = {}
    for a, (src, dst) in enumerate(arcs):
        cols_from.setdefault(src, []).append(a)
        cols_into.setdefault(dst, []).append(a)

    rows = []
    rhs = []
    for s in range(dim):  # conservation per source state
        row = np.zeros(n_var)
        for a in cols_from.get(s, ()):
            row[a] = 1.0
        rows.append(row)
        rhs.append(x[s])
    s_off = n_arcs + n_t
    for m in range(dim):
        into = cols_into.get(m, ())
        if l1:  # z_m - t_m <= x_m and z_m + t_m >= x_m
            row = np.zeros(n_var)
            for a in into:
                row[a] = 1.0
            row[n_arcs + m] = -1.0
            row[s_off + m] = 1.0
            rows.append(row)
            rhs.append(x[m])
            row = np.zeros(n_var)
            for a in into:
                row[a] = -1.0
            row[n_arcs + m] = -1.0
            row[s_off + dim + m] = 1.0
            rows.append(row)
            rhs.append(-x[m])
        else:   # x_m - eps <= z_m <= x_m + eps
            row = np.zeros(n_var)
            for a in into:
                row[a] = 1.0
            row[s_off + m] = 1.0
            rows.append(row)
            rhs.append(x[m] + eps)
            row = np.zeros(n_var)
            for a in into:
                row[a] = 1.0
            row[s_off + dim + m] = -1.0
            rows.append(row)
            rhs.append(max(x[m] - eps, 0.0))
    if l1:
        row = np.zeros(n_var)
        row[n_arcs:n_arcs + dim] = 1.0
        row[-1] = 1.0
        rows.append(row)  # total deviation budget
        rhs.append(eps)

    c_full = np.zeros(n_var)
    for a, (_, dst) in enumerate(arcs):
        c_full[a] = c[dst]
    lower = np.zeros(n_var)
    upper = np.full(n_var, np.inf)
    upper[:n_arcs] = 1.0  # flows never exceed the unit of total mass
    if l1:
        upper[n_arcs:n_arcs + dim] = eps
        upper[-1] = eps
    lp = LinearProgram(c=c_full, a_eq=np.array(rows), b_eq=np.array(rhs),
                       lower=lower, upper=upper)
    sol = solve_lp(lp)
    return sol.x[:n_arcs]


def _matrix_from_flows(flows, x, arcs, dim) -> np.ndarray:
    """Manipulation matrix with E @ x equal to the flow image."""
    e = np.zeros((dim, dim))
    for a, (src, dst) in enumerate(arcs):
        if x[src] > 1e-15:
            e[dst, src] += max(flows[a], 0.0) / x[src]
    for s in range(dim):
        if x[s] <= 1e-15:
            e[s, s] = 1.0
        else:  # numerical cleanup: columns route exactly the unit of mass
            col = e[:, s].sum()
            if col > 1e-12:
                e[:, s] /= col
    return e


def plan_manipulation(x0: np.ndarray, a: np.ndarray, horizon: int, n_p: int,
                      eps: float, phi, weight: np.ndarray,
                      norm: str = "l1", passes: int = 2) -> PlanResult:
    """Receding-horizon plan; returns the first-period manipulation matrix.

    Sequential linear programming over the period images z_h = E_h x_h: each
    forward pass fixes the other periods' matrices, solves the exact linear
    subproblem for period h (downstream effects folded into the objective
    through the committed downstream matrices), and repeats the sweep. The
    identity plan is always feasible, so the result never scores below it.
    """
    x0 = np.asarray(x0, dtype=float)
    dim = x0.size
    w = accumulated_weight(a, n_p, weight)
    m_step = np.linalg.matrix_power(a, n_p)
    arcs = _arc_list(phi, dim)
    n_periods = horizon + 1
    e_list = [np.eye(dim) for _ in range(n_periods)]

    for _ in range(max(passes, 1)):
        for h in range(n_periods):
            x_h = x0.copy()
            for g in range(h):
                x_h = m_step @ (e_list[g] @ x_h)
            # objective coefficient: direct value + downstream chain
            c = w.copy()
            acc = m_step.copy()  # maps z_h to x_{h+1}
            for g in range(h + 1, n_periods):
                c += acc.T @ ((e_list[g].T - np.eye(dim)) @ w)
                acc = m_step @ (e_list[g] @ acc)
            flows = _solve_period(x_h, arcs, c, eps, norm)
            e_list[h] = _matrix_from_flows(flows, x_h, arcs, dim)

    obj = plan_objective(e_list, x0, a, n_p, weight)
    if obj < -1e-7:
        raise StealthViolation(f"plan scored {obj:.3e}, below the identity plan")
    return PlanResult(e0=e_list[0], objective=obj, identity_objective=0.0)


@dataclass
class TransitionWeights:
    ev_id: int
    states: np.ndarray   # candidate target states, 1-based
    probs: np.ndarray    # softmax-normalized over the candidates

    def empty(self) -> bool:
        return self.states.size == 0


def transition_weights(soc: float, power_kw: float, grid: SocGrid,
                       ev_id: int = -1) -> TransitionWeights:
    """Plausibility weights over the neighboring states of one replica.

    Mode-change weights scale with the SoC block (low blocks favour moving
    toward discharging-side claims for idle/charging EVs; high blocks favour
    a discharging EV claiming it stopped). Within-mode moves activate near
    the block edges via the fractional SoC position.
    """
    n_s = grid.n_s
    j_star = essm.state_index(soc, power_kw, False, grid)
    if j_star > 3 * n_s:
        return TransitionWeights(ev_id, np.empty(0, dtype=np.int64), np.empty(0))
    j = int(grid.block_of(soc))
    loc = float(grid.loc_of(soc))
    beta = 0.8 * (1.0 - j * j / 100.0)
    beta_p = 0.8 - beta

    entries: dict[int, float] = {j_star: 0.8}

    def put(state, weight):
        if 1 <= state <= 3 * n_s:
            entries[state] = weight

    if power_kw > 0:        # discharging: may claim it stopped
        put(n_s + j, beta_p)
        if loc >= 0.9 and j < n_s:
            put(2 * n_s + j + 1, 0.9)
    elif power_kw == 0:     # idle: may claim it started discharging
        put(2 * n_s + j, beta)
        if loc >= 0.9 and j < n_s:
            put(n_s + j + 1, 0.2)
        elif loc <= 0.1 and j > 1:
            put(n_s + j - 1, 0.2)
    else:                   # charging: may claim it stopped
        put(n_s + j, beta)
        if loc <= 0.1 and j > 1:
            put(j - 1, 0.9)

    states = np.array(sorted(entries), dtype=np.int64)
    raw = np.array([entries[s] for s in states])
    ex = np.exp(raw)
    return TransitionWeights(ev_id, states, ex / ex.sum())


def integerize_targets(weights: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder apportionment of ``total`` into integer counts
    proportional to ``weights``; ties break toward the lower index."""
    w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
    counts = np.zeros(w.size, dtype=np.int64)
    if total <= 0 or w.sum() <= 0:
        return counts
    quota = total * w / w.sum()
    counts = np.floor(quota + 1e-12).astype(np.int64)
    missing = total - int(counts.sum())
    if missing > 0:
        rem = quota - counts
        order = np.lexsort((np.arange(w.size), -rem))
        counts[order[:missing]] += 1
    elif missing < 0:  # guard against accumulated rounding
        rem = quota - counts
        order = np.lexsort((np.arange(w.size), rem))
        counts[order[:(-missing)]] -= 1
    return counts


def assign_targets(rows: list[TransitionWeights], counts: np.ndarray) -> np.ndarray:
    """Maximum-likelihood state assignment as a transportation problem.

    counts is indexed over the operational states (entry j = state j+1).
    Returns the 1-based target state per row. Identical weight rows are
    collapsed into classes first; the relaxation is integral, so the flow
    optimum equals the exact combinatorial optimum.
    """
    counts = np.asarray(counts, dtype=np.int64)
    n_rows = len(rows)
    if int(counts.sum()) != n_rows:
        raise ValueError("target counts must sum to the number of EVs")
    if n_rows == 0:
        return np.empty(0, dtype=np.int64)

    classes: dict[tuple, list[int]] = {}
    for idx, rw in enumerate(rows):
        key = (tuple(rw.states.tolist()), tuple(np.round(rw.probs, 12).tolist()))
        classes.setdefault(key, []).append(idx)
    keys = sorted(classes.keys())
    active = np.flatnonzero(counts > 0)
    state_col = {int(s) + 1: c for c, s in enumerate(active)}

    cost = np.full((len(keys), active.size), np.inf)
    supply = np.zeros(len(keys), dtype=np.int64)
    for r, key in enumerate(keys):
        supply[r] = len(classes[key])
        for s, p in zip(key[0], key[1]):
            col = state_col.get(int(s))
            if col is not None and p > 0:
                cost[r, col] = -math.log(p)
    try:
        sol = solve_transportation(TransportationProblem(
            cost=cost, supply=supply, demand=counts[active]))
    except TransportInfeasible as exc:
        raise AssignmentInfeasible(int(active[exc.column]) + 1) from exc

    targets = np.zeros(n_rows, dtype=np.int64)
    for r, key in enumerate(keys):
        members = classes[key]
        pos = 0
        for c in range(active.size):
            f = int(sol.flow[r, c])
            state = int(active[c]) + 1
            for _ in range(f):
                targets[members[pos]] = state
                pos += 1
    return targets


def _mode_of_state(state: int, grid: SocGrid) -> Mode:
    n_s = grid.n_s
    if state <= n_s:
        return Mode.CHARGING
    if state <= 2 * n_s:
        return Mode.IDLE
    if state <= 3 * n_s:
        return Mode.DISCHARGING
    raise ValueError(f"state {state} is not operational")


def ceil_soc_step(power_kw: float, t_p_h: float, capacity_kwh: float,
                  granularity: float = SOC_GRANULARITY) -> float:
    """Reported-SoC movement of one period at the given power, rounded away
    from zero to the reporting grid."""
    raw = abs(power_kw) * t_p_h / capacity_kwh
    return math.ceil(raw / granularity - 1e-9) * granularity


def map_to_measurements(target_state: int, soc: float, power_kw: float,
                        spec, grid: SocGrid, t_p_h: float,
                        granularity: float = SOC_GRANULARITY) -> tuple[float, float]:
    """Concrete fabricated (SoC, power) for one assigned transition.

    Mode changes take the power of the new mode; the SoC moves by the
    period's energy at the new power, rounded away from zero to the
    reporting grid, in the direction the new mode implies. Hitting a SoC
    bound zeroes the power (the claim stays physical).
    """
    cur_mode = Mode.CHARGING if power_kw < 0 else (
        Mode.DISCHARGING if power_kw > 0 else Mode.IDLE)
    new_mode = _mode_of_state(target_state, grid)
    if new_mode == cur_mode:
        new_power = power_kw
    elif new_mode == Mode.IDLE:
        new_power = 0.0
    elif cur_mode == Mode.IDLE and new_mode == Mode.CHARGING:
        new_power = -spec.charge_power_kw
    elif cur_mode == Mode.IDLE and new_mode == Mode.DISCHARGING:
        new_power = spec.discharge_power_kw
    else:
        raise StealthViolation(
            f"transition {cur_mode.name}->{new_mode.name} has no measurement mapping")
    direction = 1.0 if new_power < 0 else (-1.0 if new_power > 0 else 0.0)
    step = ceil_soc_step(new_power, t_p_h, spec.capacity_kwh, granularity)
    soc2 = soc + direction * step
    if soc2 >= spec.soc_max and new_power < 0:
        soc2, new_power = spec.soc_max, 0.0   # full battery: the claim goes idle
    if soc2 <= spec.soc_min and new_power > 0:
        soc2, new_power = spec.soc_min, 0.0   # empty battery: same
    soc2 = min(max(soc2, spec.soc_min), spec.soc_max)
    return float(np.floor(soc2 / granularity + 0.5) * granularity), float(new_power)


class Attacker:
    """Shadow-fleet bookkeeping plus the per-period fabrication pipeline.

    Replica arrays mirror the operator's view of every compromised,
    connected EV: the last reported SoC/power and the sticky forced-charging
    classification. All per-EV static data comes from the intercepted
    connection messages.
    """

    def __init__(self, grid: SocGrid, cfg: AttackConfig, t_p_h: float, n_p: int,
                 granularity: float = SOC_GRANULARITY, margin_h: float = 0.05):
        self.grid = grid
        self.cfg = cfg
        self.t_p_h = t_p_h
        self.n_p = n_p
        self.g = granularity
        self.margin_h = margin_h
        self.phi = expressible_transitions(grid)
        self.weight = (essm.upper_vector(grid) if cfg.objective == "upper"
                       else essm.lower_vector(grid))
        self.detect_cfg = DetectionConfig(epsilon=cfg.epsilon, granularity=granularity)
        self.ids = np.empty(0, dtype=np.int64)
        self._cols = {}  # ev_id -> replica column
        for name in ("soc", "soc_exact", "soc_true_est", "power", "capacity",
                     "charge_power", "discharge_power", "efficiency", "soc_min",
                     "soc_max", "t_finish", "depart_soc"):
            setattr(self, name, np.empty(0))
        self.forced = np.empty(0, dtype=bool)
        self.fresh = np.empty(0, dtype=bool)
        self.fallbacks = 0

    def __len__(self):
        return self.ids.size

    # ---- replica lifecycle -------------------------------------------------
    def sync(self, fleet, reports_soc: np.ndarray, reports_power: np.ndarray,
             now_h: float):
        """Refresh the replica set: drop departed EVs, absorb newly connected
        compromised EVs from their (truthful) connection reports."""
        keep = np.array([fleet.connected[i] for i in self.ids], dtype=bool) \
            if self.ids.size else np.zeros(0, dtype=bool)
        want = np.flatnonzero(fleet.connected & fleet.compromised)
        known = set(self.ids[keep].tolist())
        new = np.array([i for i in want if i not in known], dtype=np.int64)

        def cat(name, new_vals):
            old = getattr(self, name)[keep] if keep.size else getattr(self, name)[:0]
            setattr(self, name, np.concatenate([old, new_vals]))

        cat("soc", reports_soc[new])
        cat("soc_exact", reports_soc[new])
        cat("soc_true_est", reports_soc[new])
        cat("power", reports_power[new])
        cat("capacity", fleet.capacity[new])
        cat("charge_power", fleet.charge_power[new])
        cat("discharge_power", fleet.discharge_power[new])
        cat("efficiency", fleet.efficiency[new])
        cat("soc_min", fleet.soc_min[new])
        cat("soc_max", fleet.soc_max[new])
        cat("t_finish", fleet.t_finish[new])
        cat("depart_soc", fleet.depart_soc[new])
        # a charging report at takeover is presumed forced; the shared sticky
        # classifier confirms or clears it on the next natural step
        self.forced = np.concatenate([self.forced[keep],
                                      reports_power[new] < -1e-9])
        # replicas seeded this period emit their held values once: the truth
        # already advanced to "now", so an extra period would double-step
        self.fresh = np.concatenate([self.fresh[keep] if self.fresh.size else
                                     np.zeros(0, dtype=bool),
                                     np.ones(new.size, dtype=bool)])
        self.ids = np.concatenate([self.ids[keep], new])
        order = np.argsort(self.ids)
        for name in ("ids", "soc", "soc_exact", "soc_true_est", "power",
                     "capacity", "charge_power", "discharge_power", "efficiency",
                     "soc_min", "soc_max", "t_finish", "depart_soc", "forced",
                     "fresh"):
            setattr(self, name, getattr(self, name)[order])

    # ---- per-period pipeline -------------------------------------------------
    def _natural_continuation(self, now_h: float):
        """One period of honest-looking evolution from the held reports.

        Replicas carry an exact internal SoC and report its quantized value,
        exactly like a physical EV, so unmanipulated shadow trajectories are
        statistically indistinguishable from true ones. Forced-charging exits
        follow the coordinator's own exit prediction evaluated on the same
        reported values, so model and reports flip in the same period.
        Returns (exact_soc, reported_soc, power, forced).
        """
        n = len(self)
        exact = self.soc_exact.copy()
        power = self.power.copy()
        forced = self.forced.copy()
        q = lambda v: float(np.floor(v / self.g + 0.5) * self.g)
        reported = self.soc.copy()
        for i in range(n):
            if self.fresh[i]:
                continue  # first epoch after takeover: held values are current
            if forced[i]:
                rate = self.efficiency[i] * self.charge_power[i] / self.capacity[i]
                need = self.depart_soc[i] - self.soc[i]
                target = q(self.depart_soc[i])
                if need / rate <= self.t_p_h + 1e-12:
                    exact[i] = max(self.depart_soc[i], target)
                    reported[i] = max(self.soc[i], target)
                    power[i] = 0.0
                    forced[i] = False
                else:
                    exact[i] = min(exact[i] + rate * self.t_p_h, target)
                    reported[i] = q(exact[i])
                    power[i] = -self.charge_power[i]
            elif power[i] < 0:
                ds = -power[i] * self.efficiency[i] * self.t_p_h / self.capacity[i]
                exact[i] = exact[i] + ds
                ceiling = min(self.soc_max[i], max(self.soc_true_est[i], self.soc[i]))
                if exact[i] >= ceiling:
                    exact[i], power[i] = ceiling, 0.0
                reported[i] = q(exact[i])
            elif power[i] > 0:
                ds = (power[i] / self.efficiency[i]) * self.t_p_h / self.capacity[i]
                exact[i] = exact[i] - ds
                if exact[i] <= self.soc_min[i]:
                    exact[i], power[i] = self.soc_min[i], 0.0
                reported[i] = q(exact[i])
        # forced-charging classification, exactly as the operator applies it
        before = forced.copy()
        forced = essm.classify_forced(forced, reported, power, self.depart_soc,
                                      self.capacity, self.efficiency,
                                      self.charge_power, self.t_finish, now_h,
                                      self.g, self.margin_h)
        newly = forced & ~before & (np.abs(power) < 1e-12)
        power[newly] = -self.charge_power[newly]
        return exact, reported, power, forced

    def _subfleet_stats(self) -> essm.FleetStats:
        return essm.FleetStats(
            p_ave_charge=float(self.charge_power.mean()),
            p_ave_discharge=float(self.discharge_power.mean()),
            eta_mean=float(self.efficiency.mean()),
            q_mean=float(self.capacity.mean()),
        )

    def step(self, now_h: float, k: int, step_h: float):
        """Run the fabrication pipeline; returns (ids, soc, power) to report.

        Any sub-stage failure degrades to the natural continuation for the
        affected replicas, never to silence.
        """
        n = len(self)
        if n == 0:
            empty = np.empty(0)
            return self.ids, empty, empty
        nat_exact, nat_soc, nat_power, nat_forced = self._natural_continuation(now_h)
        out_exact = nat_exact.copy()
        out_soc, out_power = nat_soc.copy(), nat_power.copy()
        states = essm.state_indices(nat_soc, nat_power, nat_forced, self.grid)
        op_mask = states <= 3 * self.grid.n_s
        n_op = int(op_mask.sum())
        if n_op > 0:
            try:
                x, _ = essm.build_state_vector(states, self.grid)
                a = essm.build_transition_matrix(self.grid, step_h, self._subfleet_stats())
                eps_eff = self.cfg.epsilon * self.cfg.budget_fraction
                plan = plan_manipulation(x, a, self.cfg.horizon, self.n_p, eps_eff,
                                         self.phi, self.weight, norm=self.cfg.norm)
                x_target = plan.e0 @ x
                counts = integerize_targets(x_target[:3 * self.grid.n_s], n_op)
                op_idx = np.flatnonzero(op_mask)
                rows = [transition_weights(nat_soc[i], nat_power[i], self.grid,
                                           ev_id=int(self.ids[i])) for i in op_idx]
                targets = assign_targets(rows, counts)
                for local, i in enumerate(op_idx):
                    tgt = int(targets[local])
                    if tgt == int(states[i]):
                        continue  # stay: the natural continuation already holds
                    spec = _ReplicaSpec(self, i)
                    s2, p2 = map_to_measurements(tgt, float(nat_soc[i]),
                                                 float(nat_power[i]), spec,
                                                 self.grid, self.t_p_h, self.g)
                    if p2 > 0 and nat_power[i] <= 0:
                        slack = self.t_finish[i] - now_h
                        if (slack < self.cfg.min_claim_slack_h or
                                self.soc_true_est[i] > self.cfg.max_claim_truth_soc):
                            continue  # repayment would outweigh the claim
                    out_soc[i], out_power[i] = s2, p2
                    out_exact[i] = s2  # fabricated values re-anchor the replica
            except (AssignmentInfeasible, StealthViolation) as exc:
                logger.debug("attack step %d degraded to natural reporting: %s", k, exc)
                out_exact = nat_exact.copy()
                out_soc, out_power = nat_soc.copy(), nat_power.copy()
                self.fallbacks += 1

        # the attacker's own stealth gate: every emitted pair must pass the
        # operator's feasibility predicate against the previous report
        bad = feasibility_mask(self.soc, out_soc, out_power, self.capacity,
                               self.charge_power, self.discharge_power,
                               self.efficiency, self.t_p_h, self.detect_cfg)
        if np.any(bad):
            out_soc[bad] = nat_soc[bad]
            out_power[bad] = nat_power[bad]
            out_exact[bad] = nat_exact[bad]
            still = feasibility_mask(self.soc[bad], out_soc[bad], out_power[bad],
                                     self.capacity[bad], self.charge_power[bad],
                                     self.discharge_power[bad],
                                     self.efficiency[bad], self.t_p_h,
                                     self.detect_cfg)
            if np.any(still):
                raise StealthViolation("natural continuation failed feasibility")

        # operator-view forced classification of what was actually emitted
        self.forced = essm.classify_forced(nat_forced, out_soc, out_power,
                                           self.depart_soc, self.capacity,
                                           self.efficiency, self.charge_power,
                                           self.t_finish, now_h, self.g,
                                           self.margin_h)
        self.soc = out_soc
        self.soc_exact = out_exact
        self.power = out_power
        self.fresh[:] = False
        return self.ids, out_soc.copy(), out_power.copy()


class _ReplicaSpec:
    """Light spec view over one replica column (duck-typed like EvSpec)."""

    def __init__(self, shadow: Attacker, i: int):
        self.capacity_kwh = float(shadow.capacity[i])
        self.charge_power_kw = float(shadow.charge_power[i])
        self.discharge_power_kw = float(shadow.discharge_power[i])
        self.efficiency = float(shadow.efficiency[i])
        self.soc_min = float(shadow.soc_min[i])
        self.soc_max = float(shadow.soc_max[i])
