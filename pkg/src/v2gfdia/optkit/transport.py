"""Balanced transportation problems via successive shortest paths.

Supplies and demands are integers, so the min-cost flow returned is integral
by construction. Forbidden cells are marked with +inf cost. Costs may be
negative; the first shortest-path pass falls back to Bellman-Ford when they
are, after which node potentials keep all reduced costs nonnegative and
Dijkstra applies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class TransportInfeasible(Exception):
    def __init__(self, column: int, message: str | None = None):
        super().__init__(message or f"demand column {column} cannot be served")
        self.column = column


@dataclass
class TransportationProblem:
    cost: np.ndarray      # (m, n), +inf marks a forbidden cell
    supply: np.ndarray    # (m,) nonnegative integers
    demand: np.ndarray    # (n,) nonnegative integers

    def __post_init__(self):
        self.cost = np.atleast_2d(np.asarray(self.cost, dtype=float))
        self.supply = np.asarray(self.supply, dtype=np.int64)
        self.demand = np.asarray(self.demand, dtype=np.int64)
        m, n = self.cost.shape
        if self.supply.size != m or self.demand.size != n:
            raise ValueError("supply/demand length mismatch with cost matrix")
        if np.any(self.supply < 0) or np.any(self.demand < 0):
            raise ValueError("supplies and demands must be nonnegative")
        if self.supply.sum() != self.demand.sum():
            raise ValueError("unbalanced problem: total supply != total demand")


@dataclass
class TransportSolution:
    flow: np.ndarray      # (m, n) integer flows
    total_cost: float


def solve_transportation(tp: TransportationProblem) -> TransportSolution:
    cost = tp.cost
    m, n = cost.shape
    finite = np.isfinite(cost)
    for j in range(n):
        if tp.demand[j] > 0 and not np.any(finite[:, j] & (tp.supply > 0)):
            raise TransportInfeasible(j)

    flow = np.zeros((m, n), dtype=np.int64)
    rem_supply = tp.supply.astype(np.int64).copy()
    rem_demand = tp.demand.astype(np.int64).copy()
    pot_u = np.zeros(m)
    pot_v = np.zeros(n)
    need_bellman = bool(np.any(cost[finite] < 0))

    while rem_demand.sum() > 0:
        dist_u, dist_v, par_u, par_v = _shortest_paths(
            cost, finite, flow, rem_supply, pot_u, pot_v, need_bellman
        )
        need_bellman = False
        # closest reachable column with unmet demand
        j_best = -1
        for j in range(n):
            if rem_demand[j] > 0 and np.isfinite(dist_v[j]):
                if j_best < 0 or dist_v[j] < dist_v[j_best] - 1e-15:
                    j_best = j
        if j_best < 0:
            unmet = int(np.flatnonzero(rem_demand > 0)[0])
            raise TransportInfeasible(unmet, f"demand column {unmet} unreachable")

        # trace path back, find bottleneck
        path = []  # (i, j, forward)
        j = j_best
        while True:
            i = par_v[j]
            path.append((i, j, True))
            if rem_supply[i] > 0 and dist_u[i] == 0 and par_u[i] == -1:
                break
            j2 = par_u[i]
            path.append((i, j2, False))
            j = j2
        bottleneck = min(rem_supply[path[-1][0]], rem_demand[j_best])
        for i, jj, forward in path:
            if not forward:
                bottleneck = min(bottleneck, flow[i, jj])

        for i, jj, forward in path:
            if forward:
                flow[i, jj] += bottleneck
            else:
                flow[i, jj] -= bottleneck
        rem_supply[path[-1][0]] -= bottleneck
        rem_demand[j_best] -= bottleneck

        # update potentials with the new distances
        ok_u = np.isfinite(dist_u)
        ok_v = np.isfinite(dist_v)
        pot_u[ok_u] += dist_u[ok_u]
        pot_v[ok_v] += dist_v[ok_v]

    total = float(np.sum(flow * np.where(finite, cost, 0.0)))
    return TransportSolution(flow=flow, total_cost=total)


def _shortest_paths(cost, finite, flow, rem_supply, pot_u, pot_v, bellman):
    """Distances from the set of rows with remaining supply.

    Reduced arc costs: row i -> col j costs cost[i,j] - pot_u[i] + pot_v[j]...
    maintained in the standard min-cost-flow potential form so that after
    convergence every used arc has zero reduced cost.
    """
    m, n = cost.shape
    dist_u = np.where(rem_supply > 0, 0.0, np.inf)
    dist_v = np.full(n, np.inf)
    par_u = np.full(m, -1, dtype=np.int64)
    par_v = np.full(n, -1, dtype=np.int64)

    if bellman:
        # plain label-correcting sweep; fine at these sizes
        for _ in range(m + n + 1):
            changed = False
            for i in range(m):
                if not np.isfinite(dist_u[i]):
                    continue
                for j in range(n):
                    if finite[i, j]:
                        nd = dist_u[i] + cost[i, j]
                        if nd < dist_v[j] - 1e-15:
                            dist_v[j] = nd
                            par_v[j] = i
                            changed = True
            for j in range(n):
                if not np.isfinite(dist_v[j]):
                    continue
                for i in range(m):
                    if flow[i, j] > 0:
                        nd = dist_v[j] - cost[i, j]
                        if nd < dist_u[i] - 1e-15:
                            dist_u[i] = nd
                            par_u[i] = j
                            changed = True
            if not changed:
                break
        return dist_u, dist_v, par_u, par_v

    # Dijkstra over the bipartite residual graph with potentials
    done_u = np.zeros(m, dtype=bool)
    done_v = np.zeros(n, dtype=bool)
    while True:
        best = np.inf
        node = None
        for i in range(m):
            if not done_u[i] and dist_u[i] < best:
                best, node = dist_u[i], ("u", i)
        for j in range(n):
            if not done_v[j] and dist_v[j] < best:
                best, node = dist_v[j], ("v", j)
        if node is None:
            break
        kind, k = node
        if kind == "u":
            done_u[k] = True
            red = cost[k] + pot_u[k] - pot_v  # forward arcs k -> all j
            cand = finite[k] & ~done_v
            nd = dist_u[k] + red
            upd = cand & (nd < dist_v - 1e-15)
            dist_v[upd] = nd[upd]
            par_v[upd] = k
        else:
            done_v[k] = True
            has_flow = flow[:, k] > 0
            red = pot_v[k] - cost[:, k] - pot_u  # backward arcs k -> i
            cand = has_flow & ~done_u
            nd = dist_v[k] + red
            upd = cand & (nd < dist_u - 1e-15)
            dist_u[upd] = nd[upd]
            par_u[upd] = k
    return dist_u, dist_v, par_u, par_v
