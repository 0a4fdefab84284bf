"""Self-contained numerical kernels: dense simplex LP and a transportation solver."""

from .lp import LinearProgram, LpInfeasible, LpSolution, LpUnbounded, solve_lp
from .transport import (
    TransportationProblem,
    TransportInfeasible,
    TransportSolution,
    solve_transportation,
)

__all__ = [
    "LinearProgram",
    "LpSolution",
    "LpInfeasible",
    "LpUnbounded",
    "solve_lp",
    "TransportationProblem",
    "TransportSolution",
    "TransportInfeasible",
    "solve_transportation",
]
