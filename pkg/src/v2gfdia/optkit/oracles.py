"""Brute-force reference oracles used to cross-check the solvers in tests.

These are deliberately independent of the production code paths: vertex
enumeration for LPs and factorial enumeration for assignments. Only viable
for tiny instances.
"""

from __future__ import annotations

import itertools

import numpy as np

from .lp import LinearProgram


def enumerate_vertex_optimum(lp: LinearProgram, tol: float = 1e-9):
    """Best objective over all basic feasible points of a bounded-variable LP.

    Enumerates every choice of basic columns and every lower/upper assignment
    of the nonbasic ones. Returns (objective, x) or None when no candidate is
    feasible. Exponential; keep n small.
    """
    a, b = lp.a_eq, lp.b_eq
    m, n = a.shape
    if n > 14:
        raise ValueError("vertex enumeration is only intended for tiny LPs")
    best = None
    cols = range(n)
    for basis in itertools.combinations(cols, min(m, n)):
        basis = list(basis)
        sub = a[:, basis]
        if np.linalg.matrix_rank(sub) < len(basis):
            continue
        nonbasic = [j for j in cols if j not in basis]
        for pattern in itertools.product((0, 1), repeat=len(nonbasic)):
            x = np.empty(n)
            ok = True
            for j, side in zip(nonbasic, pattern):
                v = lp.lower[j] if side == 0 else lp.upper[j]
                if not np.isfinite(v):
                    ok = False
                    break
                x[j] = v
            if not ok:
                continue
            rhs = b - a[:, nonbasic] @ x[nonbasic] if nonbasic else b.copy()
            try:
                xb = np.linalg.lstsq(sub, rhs, rcond=None)[0]
            except np.linalg.LinAlgError:
                continue
            x[basis] = xb
            if np.max(np.abs(a @ x - b)) > 1e-7:
                continue
            if np.any(x < lp.lower - tol) or np.any(x > lp.upper + tol):
                continue
            obj = float(lp.c @ x)
            if best is None or obj > best[0] + 1e-12:
                best = (obj, x.copy())
    return best


def exhaustive_assignment(cost: np.ndarray, demand: np.ndarray):
    """Optimal unit-supply assignment by enumerating all distinct placements.

    cost : (m, n) with +inf forbidding a cell; every row is one unit of supply.
    demand : (n,) integer column totals, summing to m.

    Returns (total_cost, assignment) with assignment[i] = column of row i,
    or None when every placement hits a forbidden cell.
    """
    cost = np.asarray(cost, dtype=float)
    demand = np.asarray(demand, dtype=np.int64)
    m, n = cost.shape
    if demand.sum() != m:
        raise ValueError("demand must sum to the number of rows")
    if m > 9:
        raise ValueError("exhaustive assignment is factorial; keep m <= 9")
    labels = []
    for j, d in enumerate(demand):
        labels.extend([j] * int(d))
    best = None
    for perm in set(itertools.permutations(labels)):
        total = 0.0
        ok = True
        for i, j in enumerate(perm):
            c = cost[i, j]
            if not np.isfinite(c):
                ok = False
                break
            total += c
        if ok and (best is None or total < best[0] - 1e-12):
            best = (total, np.array(perm, dtype=np.int64))
    return best
