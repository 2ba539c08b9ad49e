"""Small dense convex QP solver used by both MPC layers."""

from ._backend import NAME as BACKEND
from .solver import QpProblem, QpSolution, QpSolver, QpStatus, kkt_residuals, solve

__all__ = [
    "BACKEND",
    "QpProblem",
    "QpSolution",
    "QpSolver",
    "QpStatus",
    "kkt_residuals",
    "solve",
]
