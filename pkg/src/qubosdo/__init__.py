"""Solver for the unit-diagonal SDO relaxation of QUBO/Ising problems.

Gibbs-state mirror descent handles each feasibility subproblem; an outer
refinement loop drives the precision exponentially with constant-precision
inner calls; solutions round to exactly feasible matrices and compress to
small per-round tuples.
"""

from .cost import CostMatrix
from .feasibility import (
    FeasibilityInstance,
    FeasibilityOutcome,
    HamiltonianDescription,
    oracle_diagonal,
    oracle_objective,
    solve_feasibility,
)
from .io import ParseError, parse_matrix
from .linalg import (
    GibbsState,
    SparseSymmetric,
    TaylorPlan,
    frobenius_norm,
    gibbs_exact,
    gibbs_from_hamiltonian,
    hadamard_apply,
    taylor_plan,
    trace_norm,
    trace_product,
)
from .optimize import RoundedSolution, binary_search_gamma, hyperplane_round, round_to_feasible
from .reference import BruteForceResult, brute_force_iqp, brute_force_qubo, closed_form_instance, closed_form_sdo
from .refine import (
    ConvergenceError,
    InfeasibleError,
    RefineConfig,
    RefinementState,
    RefinementTuple,
    assemble_solution,
    fold_shifts,
    refine_solve,
    trace_with_solution,
)

__all__ = [
    "BruteForceResult",
    "ConvergenceError",
    "CostMatrix",
    "FeasibilityInstance",
    "FeasibilityOutcome",
    "GibbsState",
    "HamiltonianDescription",
    "InfeasibleError",
    "ParseError",
    "RefineConfig",
    "RefinementState",
    "RefinementTuple",
    "RoundedSolution",
    "SparseSymmetric",
    "TaylorPlan",
    "assemble_solution",
    "binary_search_gamma",
    "brute_force_iqp",
    "brute_force_qubo",
    "closed_form_instance",
    "closed_form_sdo",
    "fold_shifts",
    "frobenius_norm",
    "gibbs_exact",
    "gibbs_from_hamiltonian",
    "hadamard_apply",
    "hyperplane_round",
    "oracle_diagonal",
    "oracle_objective",
    "parse_matrix",
    "refine_solve",
    "round_to_feasible",
    "solve_feasibility",
    "taylor_plan",
    "trace_norm",
    "trace_product",
    "trace_with_solution",
]
