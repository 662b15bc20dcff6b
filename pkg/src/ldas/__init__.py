"""Linear dependency aware solves for compound structural optimization problems."""

from .backends import (ConvergenceError, DirectSolver, IterativeSolver, SingularSystemError,
                       SymmetricSystem, estimate_chi, preprocess, solve)
from .core import (ContractViolation, OrthoBasis, SolveLedger, StaleBasisError, gso, is_dependent,
                   ldas_batch, ldas_solve, ldas_step, partition_independent, reconstruct, reset_basis)
from .fem import DensityFilter, Mesh, assemble, element_stiffness
from .responses import MODES, ProblemDefinition, evaluate_iteration

__all__ = [
    "ContractViolation", "ConvergenceError", "DensityFilter", "DirectSolver", "IterativeSolver", "MODES",
    "Mesh", "OrthoBasis", "ProblemDefinition", "SingularSystemError", "SolveLedger", "StaleBasisError",
    "SymmetricSystem", "assemble", "element_stiffness", "estimate_chi", "evaluate_iteration", "gso",
    "is_dependent", "ldas_batch", "ldas_solve", "ldas_step", "partition_independent", "preprocess",
    "reconstruct", "reset_basis", "solve",
]
