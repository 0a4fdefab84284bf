"""Dense two-phase simplex for small linear programs with variable bounds.

The solver is deliberately simple: a tableau-based bounded-variable primal
simplex using Bland's rule throughout, which makes it deterministic and
immune to cycling. Problem sizes in this package are tiny (a few dozen rows,
at most a couple hundred columns), so robustness wins over speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_TOL = 1e-9


class LpInfeasible(Exception):
    """No point satisfies the constraints.

    Attributes
    ----------
    residual : float
        Optimal phase-1 objective, i.e. the minimum total constraint
        violation. Strictly positive for an infeasible program.
    """

    def __init__(self, residual: float):
        super().__init__(f"infeasible: minimum constraint violation {residual:.3e}")
        self.residual = residual


class LpUnbounded(Exception):
    """Objective is unbounded along a feasible ray."""

    def __init__(self, variable: int):
        super().__init__(f"objective unbounded along variable {variable}")
        self.variable = variable


@dataclass
class LinearProgram:
    """maximize c @ x  subject to  a_eq @ x == b_eq,  lower <= x <= upper."""

    c: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.a_eq = np.atleast_2d(np.asarray(self.a_eq, dtype=float))
        self.b_eq = np.asarray(self.b_eq, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = self.c.size
        if self.a_eq.shape != (self.b_eq.size, n):
            raise ValueError("constraint matrix shape mismatch")
        if self.lower.size != n or self.upper.size != n:
            raise ValueError("bound vector length mismatch")
        if not np.all(np.isfinite(self.c)):
            raise ValueError("objective coefficients must be finite")
        if not np.all(np.isfinite(self.lower)):
            raise ValueError("lower bounds must be finite")
        if np.any(self.upper < self.lower - _TOL):
            raise ValueError("upper bound below lower bound")


@dataclass
class LpSolution:
    x: np.ndarray
    objective: float
    iterations: int = field(default=0)


# nonbasic variable status markers
_AT_LOWER = 0
_AT_UPPER = 1
_BASIC = 2


def _bland_simplex(tab, rhs, cost, ranges, basis, status, max_iter=20000):
    """Run bounded-variable primal simplex on an already-feasible tableau.

    tab : (m, n) current tableau, B^-1 A
    rhs : (m,) values of the basic variables (in shifted coordinates)
    cost : (n,) objective to maximize
    ranges : (n,) upper bound of each shifted variable (lower bound is 0)
    basis : (m,) column index basic in each row
    status : (n,) _AT_LOWER/_AT_UPPER/_BASIC per column

    Mutates its arguments; returns the iteration count.
    """
    m, n = tab.shape
    for it in range(max_iter):
        cb = cost[basis]
        # reduced costs d_j = c_j - c_B^T B^-1 a_j
        d = cost - cb @ tab
        enter = -1
        direction = 0
        for j in range(n):
            if status[j] == _AT_LOWER and d[j] > _TOL:
                enter, direction = j, +1
                break
            if status[j] == _AT_UPPER and d[j] < -_TOL:
                enter, direction = j, -1
                break
        if enter < 0:
            return it  # optimal

        col = tab[:, enter]
        # movement t >= 0 of the entering variable changes basics by -dir*t*col
        best_t = ranges[enter]  # bound flip of the entering variable itself
        leave = -1
        leave_at_upper = False
        for i in range(m):
            step = direction * col[i]
            if step > _TOL:  # basic i decreases toward 0
                t = rhs[i] / step
                hit_upper = False
            elif step < -_TOL and np.isfinite(ranges[basis[i]]):
                t = (ranges[basis[i]] - rhs[i]) / (-step)
                hit_upper = True
            else:
                continue
            if t < best_t - _TOL or (
                t < best_t + _TOL and (leave < 0 or basis[i] < basis[leave])
            ):
                best_t = t
                leave = i
                leave_at_upper = hit_upper
        if not np.isfinite(best_t):
            raise LpUnbounded(enter)

        best_t = max(best_t, 0.0)
        rhs -= direction * best_t * col
        if leave < 0:
            # entering variable flips to its opposite bound, basis unchanged
            status[enter] = _AT_UPPER if direction > 0 else _AT_LOWER
            continue

        out = basis[leave]
        status[out] = _AT_UPPER if leave_at_upper else _AT_LOWER
        status[enter] = _BASIC
        basis[leave] = enter
        rhs[leave] = best_t if direction > 0 else ranges[enter] - best_t

        # pivot the tableau on (leave, enter)
        piv = tab[leave, enter]
        tab[leave] /= piv
        for i in range(m):
            if i != leave and abs(tab[i, enter]) > 1e-13:
                tab[i] -= tab[i, enter] * tab[leave]
        np.clip(rhs, 0.0, None, out=rhs)
    raise RuntimeError("simplex iteration limit reached")


def _values(n, ranges, basis, status, rhs):
    x = np.zeros(n)
    x[status == _AT_UPPER] = ranges[status == _AT_UPPER]
    x[basis] = rhs
    return x


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Solve to vertex optimality; raises LpInfeasible / LpUnbounded."""
    m, n = lp.a_eq.shape
    ranges = lp.upper - lp.lower
    a = lp.a_eq.copy()
    b = lp.b_eq - a @ lp.lower

    # orient rows so the artificial basis starts feasible
    flip = b < 0
    a[flip] *= -1.0
    b = np.where(flip, -b, b)

    # phase 1: minimize the artificial variables
    tab = np.hstack([a, np.eye(m)])
    rng_all = np.concatenate([ranges, np.full(m, np.inf)])
    cost1 = np.concatenate([np.zeros(n), -np.ones(m)])
    basis = np.arange(n, n + m)
    status = np.full(n + m, _AT_LOWER, dtype=np.int8)
    status[basis] = _BASIC
    rhs = b.copy()

    it1 = _bland_simplex(tab, rhs, cost1, rng_all, basis, status)
    residual = float(np.sum(rhs[basis >= n]))
    if residual > 1e-7:
        raise LpInfeasible(residual)

    # drive any degenerate artificials out of the basis
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] >= n:
            row = tab[i, :n]
            nz = np.flatnonzero(np.abs(row) > 1e-9)
            if not nz.size:
                keep[i] = False  # redundant constraint row
                continue
            j = int(nz[0])
            piv = tab[i, j]
            tab[i] /= piv
            for k in range(m):
                if k != i and abs(tab[k, j]) > 1e-13:
                    tab[k] -= tab[k, j] * tab[i]
            entering_value = 0.0 if status[j] == _AT_LOWER else ranges[j]
            status[basis[i]] = _AT_LOWER
            status[j] = _BASIC
            basis[i] = j
            rhs[i] = entering_value
    if not np.all(keep):
        tab = tab[keep]
        rhs = rhs[keep]
        basis = basis[keep]
        m = tab.shape[0]

    # phase 2 on structural columns only
    tab2 = tab[:, :n].copy()
    cost2 = lp.c.copy()
    it2 = _bland_simplex(tab2, rhs, cost2, ranges, basis, status[:n])

    y = _values(n, ranges, basis, status[:n], rhs)
    x = y + lp.lower
    return LpSolution(x=x, objective=float(lp.c @ x), iterations=it1 + it2)
