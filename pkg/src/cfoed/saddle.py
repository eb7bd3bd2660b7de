"""Constraint-force (saddle-point) solves and the two inverse-problem formulations.

Unknowns are stacked as ``y = [theta_free; lam]`` and satisfy

    [ K    -G ] [theta]   [ F ]
    [ -M    0 ] [ lam ] = [-V ]

with ``G = M^T`` on the free DOFs, i.e. ``K theta - G lam = F`` and
``M theta = V``. The sign makes ``lam`` act as an added source, which is
the convention of the strong form ``k w'' + b + lam delta(x - beta) = 0``,
while keeping the matrix symmetric.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DesignDegeneracyError, DomainError, OptimizationError
from .fem import (
    AffineParameterizedSystem,
    ExperimentDesign,
    ReducedOperator,
    measurement_derivative,
    measurement_operator,
)
from .sensitivity import Factorization, SystemDerivatives, solve_sensitivity_cascade

log = logging.getLogger(__name__)

GTOL = 1e-10
MAX_ITER = 100


@dataclass(frozen=True)
class DataVector:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.atleast_1d(np.asarray(self.values, dtype=float)).ravel())

    def __len__(self):
        return self.values.size


@dataclass
class SaddleSystem:
    D: np.ndarray
    Q: np.ndarray
    n_free: int
    n_constraints: int
    M_free: np.ndarray
    M_fixed: np.ndarray

    @property
    def lam_index(self) -> slice:
        """Truncation picking the constraint forces out of ``y``."""
        return slice(self.n_free, self.n_free + self.n_constraints)


@dataclass
class SaddleSolution:
    theta: np.ndarray
    lam: np.ndarray
    objective: float
    y: np.ndarray
    state_residual: float
    data_residual: float


def _data(design: ExperimentDesign, data) -> np.ndarray:
    V = data.values if isinstance(data, DataVector) else np.atleast_1d(np.asarray(data, dtype=float))
    if V.size != design.size:
        raise DomainError(f"{V.size} data values for {design.size} measurements")
    return V


def build_saddle(system: AffineParameterizedSystem, eps, design: ExperimentDesign, data,
                 side: str = "right", operator: ReducedOperator | None = None) -> SaddleSystem:
    V = _data(design, data)
    M = measurement_operator(design, system.mesh, side).matrix
    Mf, Md = M[:, system.free], M[:, system.fixed]
    if operator is None:
        K, F = system.reduce(system.stiffness(eps), system.load(eps))
    else:
        K, F = operator.K, operator.F
    nf, C = K.shape[0], design.size
    D = np.zeros((nf + C, nf + C))
    D[:nf, :nf] = K
    D[:nf, nf:] = -Mf.T
    D[nf:, :nf] = -Mf
    Q = np.concatenate([F, -(V - Md @ system.fixed_values)])
    return SaddleSystem(D, Q, nf, C, Mf, Md)


def factorize_saddle(saddle: SaddleSystem) -> Factorization:
    return Factorization(saddle.D, error=DesignDegeneracyError)


def _relres(r, *scales):
    s = max(max(scales), 1e-300)
    return float(np.linalg.norm(r) / s)


def _solution(system, saddle: SaddleSystem, y: np.ndarray) -> SaddleSolution:
    nf = saddle.n_free
    th, lam = y[:nf], y[saddle.lam_index]
    K, Mf = saddle.D[:nf, :nf], saddle.M_free
    F, rhs_data = saddle.Q[:nf], -saddle.Q[nf:]
    r1 = K @ th - Mf.T @ lam - F
    r2 = Mf @ th - rhs_data
    res1 = _relres(r1, np.linalg.norm(K @ th), np.linalg.norm(Mf.T @ lam), np.linalg.norm(F))
    res2 = _relres(r2, np.linalg.norm(Mf @ th), np.linalg.norm(rhs_data))
    return SaddleSolution(system.expand(th), lam.copy(), 0.5 * float(lam @ lam), y, res1, res2)


def solve_constrained(system: AffineParameterizedSystem, eps, design: ExperimentDesign, data,
                      side: str = "right") -> SaddleSolution:
    """State and constraint forces that make the model pass through ``data`` at ``design``.

    Raises DesignDegeneracyError when measurements coincide or sit on a
    Dirichlet node (the saddle matrix is then singular).
    """
    saddle = build_saddle(system, eps, design, data, side)
    fac = factorize_saddle(saddle)
    return _solution(system, saddle, fac.solve(saddle.Q))


def saddle_derivatives(system: AffineParameterizedSystem, design: ExperimentDesign, saddle: SaddleSystem,
                       data_slope=None, with_beta: bool = True, side: str = "right") -> SystemDerivatives:
    """Partials of the saddle matrix and right-hand side.

    ``data_slope[K]`` is dV_K/dbeta_K (zero if omitted). For an affine system
    all second and third partials of D and Q vanish and are left as None.
    """
    nf, C = saddle.n_free, saddle.n_constraints
    n = nf + C
    dD_e, dQ_e = [], []
    for dK, dF in system.reduced_terms():
        if dK is None:
            dD_e.append(None)
        else:
            A = np.zeros((n, n))
            A[:nf, :nf] = dK
            dD_e.append(A)
        if dF is None:
            dQ_e.append(None)
        else:
            q = np.zeros(n)
            q[:nf] = dF
            dQ_e.append(q)
    if not with_beta:
        return SystemDerivatives(n, system.n_params, 0, dD_deps=dD_e, dQ_deps=dQ_e)

    dM = measurement_derivative(design, system.mesh, side)
    dMf, dMd = dM[:, system.free], dM[:, system.fixed]
    slope = np.zeros(C) if data_slope is None else np.asarray(data_slope, dtype=float).ravel()
    if slope.size != C:
        raise DomainError("need one data slope per measurement")
    dD_b, dQ_b = [], []
    for K in range(C):
        A = np.zeros((n, n))
        A[:nf, nf + K] = -dMf[K]
        A[nf + K, :nf] = -dMf[K]
        dD_b.append(A)
        q = np.zeros(n)
        q[nf + K] = -(slope[K] - dMd[K] @ system.fixed_values)
        dQ_b.append(q)
    return SystemDerivatives(n, system.n_params, C, dD_deps=dD_e, dD_dbeta=dD_b, dQ_deps=dQ_e, dQ_dbeta=dQ_b)


@dataclass
class InverseResult:
    eps: np.ndarray
    objective: float
    iterations: int
    lam: np.ndarray | None = None
    trace: list = field(default_factory=list)
    termination: str = ""


def _bounds(prior_support, P):
    if prior_support is None:
        return np.full(P, -np.inf), np.full(P, np.inf)
    lo, hi = prior_support
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (P,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (P,)).copy()
    if np.any(lo > hi):
        raise DomainError("prior support has lo > hi")
    return lo, hi


def _descent(evaluate, eps0, lo, hi, max_iter, gtol, label):
    """Projected (Gauss-)Newton with backtracking.

    ``evaluate(eps)`` returns (objective, gradient, model Hessian). Steps that
    leave the box are projected; the Armijo condition is checked on the
    projected step.
    """
    eps = np.clip(np.atleast_1d(np.asarray(eps0, dtype=float)), lo, hi)
    f, g, H = evaluate(eps)
    trace = [(eps.copy(), f, float(np.linalg.norm(g)))]
    for it in range(1, max_iter + 1):
        pg = eps - np.clip(eps - g, lo, hi)
        if np.linalg.norm(pg, np.inf) < gtol:
            return eps, f, it - 1, trace, "gradient"
        try:
            step = np.linalg.solve(H, -g)
            if not np.all(np.isfinite(step)) or step @ g >= 0.0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = -g
        t, accepted = 1.0, False
        while t > 1e-12:
            trial = np.clip(eps + t * step, lo, hi)
            ft, gt, Ht = evaluate(trial)
            if ft <= f + 1e-4 * (g @ (trial - eps)):
                accepted = True
                break
            t *= 0.5
        if not accepted or np.all(trial == eps):
            # no representable descent left: accept as converged if the
            # gradient is at round-off level relative to the objective scale
            if np.linalg.norm(pg, np.inf) <= 1e-6 * max(1.0, abs(f)):
                return eps, f, it, trace, "stalled"
            raise OptimizationError(f"{label}: line search failed at eps={eps}", trace)
        eps, f, g, H = trial, ft, gt, Ht
        trace.append((eps.copy(), f, float(np.linalg.norm(g))))
    raise OptimizationError(f"{label}: no convergence after {max_iter} iterations", trace)


def ecfm_inverse(system: AffineParameterizedSystem, design: ExperimentDesign, data, eps0,
                 prior_support=None, max_iter: int = MAX_ITER, gtol: float = GTOL) -> InverseResult:
    """Minimize 0.5 |lam(eps)|^2 over the box ``prior_support``.

    The gradient and Hessian come from the sensitivity cascade (first and
    second eps-derivatives of lam). The minimum value is returned as a
    consistency meter: zero means some parameter reproduces the data exactly.
    """
    if design.size == 0:
        raise OptimizationError("no measurements: the constraint-force objective is constant")
    V = _data(design, data)
    lo, hi = _bounds(prior_support, system.n_params)

    def evaluate(eps):
        op = ReducedOperator(system, eps)
        saddle = build_saddle(system, eps, design, V, operator=op)
        fac = factorize_saddle(saddle)
        y = fac.solve(saddle.Q)
        derivs = saddle_derivatives(system, design, saddle, with_beta=False)
        sol = solve_sensitivity_cascade(derivs, fac, y).take(saddle.lam_index)
        lam = y[saddle.lam_index]
        g = sol.dy_deps.T @ lam
        H = sol.dy_deps.T @ sol.dy_deps + np.einsum("l,lag->ag", lam, sol.d2y_deps2)
        return 0.5 * float(lam @ lam), g, H

    eps, f, it, trace, reason = _fallback(evaluate, eps0, lo, hi, max_iter, gtol, "ECFM inverse")
    lam = solve_constrained(system, eps, design, V).lam
    return InverseResult(eps, f, it, lam, trace, reason)


def standard_inverse(system: AffineParameterizedSystem, design: ExperimentDesign, data, eps0,
                     prior_support=None, max_iter: int = MAX_ITER, gtol: float = GTOL) -> InverseResult:
    """Minimize 0.5 |M theta(eps) - V|^2 by projected Gauss-Newton."""
    if design.size == 0:
        raise OptimizationError("no measurements: the misfit objective is constant")
    V = _data(design, data)
    lo, hi = _bounds(prior_support, system.n_params)
    M = measurement_operator(design, system.mesh).matrix

    def evaluate(eps):
        op = ReducedOperator(system, eps)
        th = op.state()
        r = M @ system.expand(th) - V
        Jac = M[:, system.free] @ op.state_sensitivity(th)
        return 0.5 * float(r @ r), Jac.T @ r, Jac.T @ Jac

    eps, f, it, trace, reason = _fallback(evaluate, eps0, lo, hi, max_iter, gtol, "standard inverse")
    return InverseResult(eps, f, it, None, trace, reason)


def _fallback(evaluate, eps0, lo, hi, max_iter, gtol, label):
    """Newton descent; for one bounded parameter, fall back to a bracketing search on failure."""
    try:
        return _descent(evaluate, eps0, lo, hi, max_iter, gtol, label)
    except (OptimizationError, np.linalg.LinAlgError) as exc:
        if lo.size != 1 or not (np.isfinite(lo[0]) and np.isfinite(hi[0])):
            raise
        log.warning("%s: Newton failed (%s); bracketing over [%g, %g]", label, exc, lo[0], hi[0])
        res = minimize_scalar(lambda e: evaluate(np.array([e]))[0], bounds=(lo[0], hi[0]),
                              method="bounded", options={"xatol": 1e-12, "maxiter": 500})
        trace = getattr(exc, "trace", [])
        if not res.success:
            raise OptimizationError(f"{label}: bracketing search failed", trace) from exc
        return np.array([res.x]), float(res.fun), int(res.nfev), trace, "bracketing"
