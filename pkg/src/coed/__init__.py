"""Constrained optimal experimental design by adaptive discretization.

The package computes epsilon-optimal approximate designs on large finite
candidate spaces. A design problem couples a convex criterion of the
information matrix (``D`` or ``A``) with moment and integral constraints;
the adaptive algorithms solve it on a growing subspace and certify the
result through the Lagrangian sensitivity over the whole space.
"""

from .adaptive import (
    AlgoSettings,
    Certificate,
    IterationRecord,
    RunResult,
    RunTrace,
    SearchSettings,
    certify,
    kinetics_initial_subset,
    min_sensitivity,
    preflight,
    run_general,
    run_special,
    search_violator,
    support_bound,
    vertex_direction_oracle,
)
from .criteria import (
    Constraint,
    Criterion,
    Design,
    Problem,
    SensitivityKernel,
    constraint_value,
    constraint_values,
    criterion_value,
    info_matrix,
    lagrangian_sensitivity,
    objective_value,
    sensitivity,
    sensitivity_kernel,
)
from .errors import (
    CoedError,
    DomainError,
    DomainEscape,
    GridEmpty,
    Infeasible,
    MaxIterations,
    NotFeasible,
    PreflightFailed,
    SchemaError,
    SingularMatrixError,
    SolverError,
)
from .model import (
    CandidateSpace,
    GridAxis,
    ModelConfig,
    build_exponential_space,
    build_kinetics_space,
    build_space,
    exponential_config,
    export_space,
    kinetics_config,
    load_tabulated_space,
)
from .solver import SaddlePoint, SolverTolerances, phase1_feasible, solve_lp, solve_saddle

__all__ = [
    "AlgoSettings",
    "build_exponential_space",
    "build_kinetics_space",
    "build_space",
    "CandidateSpace",
    "Certificate",
    "certify",
    "CoedError",
    "Constraint",
    "constraint_value",
    "constraint_values",
    "Criterion",
    "criterion_value",
    "Design",
    "DomainError",
    "DomainEscape",
    "exponential_config",
    "export_space",
    "GridAxis",
    "GridEmpty",
    "Infeasible",
    "info_matrix",
    "IterationRecord",
    "kinetics_config",
    "kinetics_initial_subset",
    "lagrangian_sensitivity",
    "load_tabulated_space",
    "MaxIterations",
    "min_sensitivity",
    "ModelConfig",
    "NotFeasible",
    "objective_value",
    "phase1_feasible",
    "preflight",
    "PreflightFailed",
    "Problem",
    "run_general",
    "run_special",
    "RunResult",
    "RunTrace",
    "SaddlePoint",
    "SchemaError",
    "search_violator",
    "SearchSettings",
    "sensitivity",
    "sensitivity_kernel",
    "SensitivityKernel",
    "SingularMatrixError",
    "solve_lp",
    "solve_saddle",
    "SolverError",
    "SolverTolerances",
    "support_bound",
    "vertex_direction_oracle",
]
