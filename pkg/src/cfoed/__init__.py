"""Optimal experimental design with explicit constraint forces on a 1D bar."""

from .errors import (
    AssemblyError,
    CfoedError,
    ConfigError,
    ContractError,
    DegenerateEigenvalueError,
    DesignDegeneracyError,
    DomainError,
    OptimizationError,
    SeparationError,
    SolverError,
)
from .fem import (
    AffineParameterizedSystem,
    ExperimentDesign,
    Mesh1D,
    build_case_system,
    forward_solve,
    measurement_operator,
    true_model_system,
)
from .objectives import DesignCriterion, ecfm_hessian, fisher_matrix
from .optimize import grid_sweep, multistart, projected_gradient_ascent
from .oracle import (
    CaseKind,
    Criterion,
    ModelProblemSpec,
    OracleCriterion,
    constraint_force,
    ecfm_design_objective,
    fisher_design_objective,
    optimal_beta_analytic,
)
from .priors import PriorSpec, QuadratureRule
from .saddle import ecfm_inverse, solve_constrained, standard_inverse
from .sensitivity import min_eigenpair, min_eigenvalue_gradient, solve_sensitivity_cascade

__version__ = "0.1.0"
