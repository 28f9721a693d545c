"""Internal optimization stack: QP/LP relaxations, branch and bound, and the
exact hyperplane-arrangement cell oracle."""

from .problem import MioProblem, MioSolution, SolverConfig
from .qp import BoxQpSolver, RelaxationResult, solve_relaxation
from .bnb import branch_and_bound
from .cells import ScanResult, enumerate_cells, scan_cells

__all__ = [
    "MioProblem",
    "MioSolution",
    "SolverConfig",
    "BoxQpSolver",
    "RelaxationResult",
    "solve_relaxation",
    "branch_and_bound",
    "ScanResult",
    "enumerate_cells",
    "scan_cells",
]
