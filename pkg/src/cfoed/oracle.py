"""Closed-form solutions of the 1D model problem ``k u'' + b = 0, u(0) = 0, k u'(1) = p``.

Every function here is exact and serves as ground truth for the discretized
path. The model parameter ``eps`` replaces one of the constants depending on
:class:`CaseKind`; a single impulse constraint force of magnitude ``lambda``
is applied at the measurement position ``beta`` and its value is fixed by
requiring the model prediction to pass through the noiseless datum ``u(beta)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .priors import PriorSpec


class CaseKind(str, enum.Enum):
    PARAMETERIZED_BC = "parameterized_bc"
    PARAMETERIZED_SOURCE = "parameterized_source"
    PARAMETERIZED_MATERIAL = "parameterized_material"
    MISSPECIFIED_SOURCE = "misspecified_source"


class Criterion(str, enum.Enum):
    FISHER = "fisher"
    ECFM = "ecfm"


@dataclass(frozen=True)
class ModelProblemSpec:
    """Constants of the data-generating model: stiffness ``k``, source ``b``, traction ``p``."""

    k: float = 1.0
    b: float = 0.0
    p: float = 1.0

    def __post_init__(self):
        for name in ("k", "b", "p"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if self.k <= 0.0:
            raise DomainError("stiffness k must be positive")


@dataclass(frozen=True)
class OracleEvaluation:
    lam: float
    dlambda_deps: float
    d2lambda_deps2: float
    objective_integrand: float


@dataclass(frozen=True)
class BetaSet:
    """Maximizers over [0, 1]: either isolated points or the whole interval."""

    points: tuple[float, ...] = ()
    whole_interval: bool = False

    def __contains__(self, beta) -> bool:
        if self.whole_interval:
            return 0.0 <= beta <= 1.0
        return any(beta == x for x in self.points)


def _check_unit(x: float, name: str) -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"{name}={x} outside [0, 1]")
    return x


def _case(case) -> CaseKind:
    try:
        return CaseKind(case)
    except ValueError as exc:
        raise DomainError(f"unknown case {case!r}") from exc


def true_solution(spec: ModelProblemSpec, x: float) -> float:
    x = _check_unit(x, "x")
    return -spec.b / (2.0 * spec.k) * x * x + (spec.p + spec.b) / spec.k * x


def data_at(spec: ModelProblemSpec, beta: float) -> float:
    """Noiseless measurement of the true state at ``beta``."""
    return true_solution(spec, _check_unit(beta, "beta"))


def consistent_parameter(case, spec: ModelProblemSpec) -> float | None:
    """Parameter value at which the parameterized model reproduces the data exactly.

    The mis-specified model (homogeneous Neumann end) is only consistent when p = 0.
    """
    case = _case(case)
    if case is CaseKind.PARAMETERIZED_BC:
        return spec.p
    if case is CaseKind.PARAMETERIZED_SOURCE:
        return spec.b
    if case is CaseKind.PARAMETERIZED_MATERIAL:
        return spec.k
    return spec.b if spec.p == 0.0 else None


def constraint_force(case, spec: ModelProblemSpec, eps: float, beta: float) -> OracleEvaluation:
    """Impulse constraint force that makes the parameterized prediction hit ``u(beta)``.

    Each formula follows from w(beta) = v(beta) with the impulse contributing
    lambda * beta / stiffness at its own location; dividing by beta leaves an
    expression continuous at beta = 0, which is used there as well.
    """
    case = _case(case)
    beta = _check_unit(beta, "beta")
    eps = float(eps)
    k, b, p = spec.k, spec.b, spec.p
    if case is CaseKind.PARAMETERIZED_BC:
        lam, dlam = p - eps, -1.0
    elif case is CaseKind.PARAMETERIZED_SOURCE:
        lam = 0.5 * beta * (eps - b) + b - eps
        dlam = 0.5 * beta - 1.0
    elif case is CaseKind.PARAMETERIZED_MATERIAL:
        if eps <= 0.0:
            raise DomainError("material parameter must be positive")
        a = 0.5 * b * beta - p - b
        lam = a * (1.0 - eps / k)
        dlam = -a / k
    else:
        # homogeneous Neumann end in the model, traction p in the data
        lam = 0.5 * beta * (eps - b) + p + b - eps
        dlam = 0.5 * beta - 1.0
    d2lam = 0.0
    return OracleEvaluation(lam, dlam, d2lam, dlam * dlam + lam * d2lam)


def printed_misspecified_force(spec: ModelProblemSpec, eps: float, beta: float) -> float:
    """Alternative reading of the mis-specified force with (eps - beta) in the middle term.

    Kept for comparison only; its eps-derivative coincides with
    :func:`constraint_force`, so the design objective is unaffected.
    """
    beta = _check_unit(beta, "beta")
    return 0.5 * beta * (eps - beta) + spec.p + spec.b - eps


def prediction_sensitivity(case, spec: ModelProblemSpec, eps: float, beta: float) -> float:
    """d w(beta) / d eps of the unconstrained (lambda = 0) model prediction."""
    case = _case(case)
    beta = _check_unit(beta, "beta")
    k, b, p = spec.k, spec.b, spec.p
    if case is CaseKind.PARAMETERIZED_BC:
        return beta / k
    if case in (CaseKind.PARAMETERIZED_SOURCE, CaseKind.MISSPECIFIED_SOURCE):
        return (beta - 0.5 * beta * beta) / k
    if eps <= 0.0:
        raise DomainError("material parameter must be positive")
    return -(-0.5 * b * beta * beta + (p + b) * beta) / (eps * eps)


def _scalar_prior(prior: PriorSpec) -> PriorSpec:
    if prior.dim != 1:
        raise DomainError("the closed-form cases have a single model parameter")
    return prior


def _inverse_fourth_moment(prior: PriorSpec) -> float:
    lo, hi = float(prior.a[0]), float(prior.b[0])
    if prior.kind == "point":
        if lo <= 0.0:
            raise DomainError("material prior must be supported on eps > 0")
        return lo**-4
    if prior.kind == "uniform":
        if lo <= 0.0:
            raise DomainError("material prior must be supported on eps > 0")
        return (lo**-3 - hi**-3) / (3.0 * (hi - lo))
    raise DomainError("a Gaussian prior puts mass on eps <= 0, where the material case is undefined")


def ecfm_design_objective(case, spec: ModelProblemSpec, prior: PriorSpec, beta: float) -> float:
    """Prior average of (dlambda/deps)^2 + lambda * d2lambda/deps2.

    The integrand does not depend on eps in any of the four cases, so the
    average equals the integrand.
    """
    case = _case(case)
    _scalar_prior(prior)
    beta = _check_unit(beta, "beta")
    k, b, p = spec.k, spec.b, spec.p
    if case is CaseKind.PARAMETERIZED_BC:
        return 1.0
    if case in (CaseKind.PARAMETERIZED_SOURCE, CaseKind.MISSPECIFIED_SOURCE):
        return (0.5 * beta - 1.0) ** 2
    return (p + b * (1.0 - 0.5 * beta)) ** 2 / (k * k)


def fisher_design_objective(case, spec: ModelProblemSpec, prior: PriorSpec, beta: float) -> float:
    """Prior average of the squared prediction sensitivity at ``beta``."""
    case = _case(case)
    _scalar_prior(prior)
    beta = _check_unit(beta, "beta")
    if case is not CaseKind.PARAMETERIZED_MATERIAL:
        return prediction_sensitivity(case, spec, 1.0, beta) ** 2
    g = -0.5 * spec.b * beta * beta + (spec.p + spec.b) * beta
    return g * g * _inverse_fourth_moment(prior)


def material_vertex(spec: ModelProblemSpec) -> float:
    """Vertex 2 (p/b + 1) of the convex quadratic ECFM objective of the material case."""
    if spec.b == 0.0:
        raise DomainError("material case with b = 0 has a beta-independent objective")
    return 2.0 * (spec.p / spec.b + 1.0)


def _argmax_of(values: dict[float, float]) -> BetaSet:
    best = max(values.values())
    tol = 1e-14 * max(1.0, abs(best))
    return BetaSet(tuple(sorted(x for x, v in values.items() if v >= best - tol)))


def optimal_beta_analytic(case, spec: ModelProblemSpec, criterion) -> BetaSet:
    """Set of maximizing measurement positions in [0, 1]."""
    case = _case(case)
    criterion = Criterion(criterion)
    if criterion is Criterion.ECFM:
        if case is CaseKind.PARAMETERIZED_BC:
            return BetaSet(whole_interval=True)
        if case in (CaseKind.PARAMETERIZED_SOURCE, CaseKind.MISSPECIFIED_SOURCE):
            return BetaSet((0.0,))
        star = material_vertex(spec)
        if star > 0.5:
            return BetaSet((0.0,))
        if star < 0.5:
            return BetaSet((1.0,))
        return BetaSet((0.0, 1.0))

    if case is not CaseKind.PARAMETERIZED_MATERIAL:
        # sensitivity is increasing in beta on [0, 1] for these cases
        return BetaSet((1.0,))
    b, p = spec.b, spec.p
    if b == 0.0 and p == 0.0:
        return BetaSet(whole_interval=True)
    candidates = [0.0, 1.0]
    if b != 0.0 and 0.0 < (p + b) / b < 1.0:
        candidates.append((p + b) / b)
    g2 = {x: (-0.5 * b * x * x + (p + b) * x) ** 2 for x in candidates}
    return _argmax_of(g2)


def ecfm_objective_slope(case, spec: ModelProblemSpec, beta: float) -> float:
    """d/dbeta of :func:`ecfm_design_objective`."""
    case = _case(case)
    beta = _check_unit(beta, "beta")
    if case is CaseKind.PARAMETERIZED_BC:
        return 0.0
    if case in (CaseKind.PARAMETERIZED_SOURCE, CaseKind.MISSPECIFIED_SOURCE):
        return 0.5 * beta - 1.0
    return -spec.b * (spec.p + spec.b * (1.0 - 0.5 * beta)) / (spec.k * spec.k)


def fisher_objective_slope(case, spec: ModelProblemSpec, prior: PriorSpec, beta: float) -> float:
    """d/dbeta of :func:`fisher_design_objective`."""
    case = _case(case)
    beta = _check_unit(beta, "beta")
    k, b, p = spec.k, spec.b, spec.p
    if case is CaseKind.PARAMETERIZED_BC:
        return 2.0 * beta / (k * k)
    if case in (CaseKind.PARAMETERIZED_SOURCE, CaseKind.MISSPECIFIED_SOURCE):
        return 2.0 * (beta - 0.5 * beta * beta) * (1.0 - beta) / (k * k)
    g = -0.5 * b * beta * beta + (p + b) * beta
    return 2.0 * g * (p + b - b * beta) * _inverse_fourth_moment(_scalar_prior(prior))


class OracleCriterion:
    """Closed-form single-measurement criterion with the optimizer's call signatures."""

    def __init__(self, case, spec: ModelProblemSpec, prior: PriorSpec, criterion):
        self.case = _case(case)
        self.spec = spec
        self.prior = _scalar_prior(prior)
        self.criterion = Criterion(criterion)

    def value(self, positions) -> float:
        (beta,) = positions
        if self.criterion is Criterion.ECFM:
            return ecfm_design_objective(self.case, self.spec, self.prior, beta)
        return fisher_design_objective(self.case, self.spec, self.prior, beta)

    def value_and_grad(self, positions):
        (beta,) = positions
        if self.criterion is Criterion.ECFM:
            slope = ecfm_objective_slope(self.case, self.spec, beta)
        else:
            slope = fisher_objective_slope(self.case, self.spec, self.prior, beta)
        return self.value(positions), np.array([slope])
