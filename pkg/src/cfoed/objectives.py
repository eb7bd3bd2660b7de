"""Design criteria: the prior-averaged Gauss-Newton (Fisher) matrix and the
prior-averaged Hessian of the constraint-force magnitude, with their smallest
eigenvalue and its gradient with respect to the measurement positions.

The constant 1/sigma^2 noise factor of the Fisher matrix is dropped; it
rescales every eigenvalue equally and does not move the maximizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AssemblyError, DomainError
from .fem import (
    AffineParameterizedSystem,
    ExperimentDesign,
    ReducedOperator,
    measurement_derivative,
    measurement_operator,
)
from .oracle import Criterion
from .priors import DEFAULT_NODES, PriorSpec, QuadratureRule
from .saddle import DataVector, build_saddle, factorize_saddle, saddle_derivatives
from .sensitivity import min_eigenpair, min_eigenvalue_gradient, solve_sensitivity_cascade


@dataclass(frozen=True)
class CriterionResult:
    J: np.ndarray
    min_eig: float
    grad_beta: np.ndarray | None
    diagnostics: dict = field(default_factory=dict)


class PriorEnsemble:
    """Forward solves at every quadrature node, factorized once and shared.

    Holds the reduced operators, free-DOF states, state sensitivities, and the
    prior-averaged nodal state used as the data model.
    """

    def __init__(self, system: AffineParameterizedSystem, prior: PriorSpec, quad: QuadratureRule | None = None):
        if prior.dim != system.n_params:
            raise DomainError(f"prior has {prior.dim} parameters, system has {system.n_params}")
        self.system = system
        self.prior = prior
        self.quad = quad if quad is not None else prior.quadrature(DEFAULT_NODES)
        if self.quad.dim != system.n_params:
            raise DomainError("quadrature dimension does not match the system")
        self.operators, self.states, self.sensitivities = [], [], []
        for i, node in enumerate(self.quad.nodes):
            try:
                op = ReducedOperator(system, node)
            except AssemblyError as exc:
                raise AssemblyError(f"quadrature node {i} at eps={node.tolist()}: {exc}") from exc
            th = op.state()
            self.operators.append(op)
            self.states.append(th)
            self.sensitivities.append(op.state_sensitivity(th))
        mean_free = sum(w * th for w, th in zip(self.quad.weights, self.states))
        self.mean_state = system.expand(mean_free)

    def __iter__(self):
        return iter(zip(self.quad.weights, self.quad.nodes, self.operators, self.states, self.sensitivities))


def _ensemble(system, prior, quad, ensemble):
    if ensemble is not None:
        return ensemble
    return PriorEnsemble(system, prior, quad)


def data_model(system: AffineParameterizedSystem, design: ExperimentDesign, prior: PriorSpec,
               quad: QuadratureRule | None = None, ensemble: PriorEnsemble | None = None) -> DataVector:
    """Prior-averaged model response at the measurement positions."""
    ens = _ensemble(system, prior, quad, ensemble)
    if design.size == 0:
        return DataVector(np.zeros(0))
    M = measurement_operator(design, system.mesh).matrix
    return DataVector(M @ ens.mean_state)


def _finish(J, dJ, gradient, gap_tol, diagnostics):
    J = 0.5 * (J + J.T)
    pair = min_eigenpair(J, gap_tol=None)
    grad = None
    if gradient:
        grad = min_eigenvalue_gradient(J, dJ, gap_tol) if dJ.shape[0] else np.zeros(0)
    diagnostics["eigenvector"] = pair.q
    diagnostics["eigengap"] = pair.gap
    return CriterionResult(J, pair.mu, grad, diagnostics)


def fisher_matrix(system: AffineParameterizedSystem, design: ExperimentDesign, prior: PriorSpec,
                  quad: QuadratureRule | None = None, *, ensemble: PriorEnsemble | None = None,
                  gradient: bool = True, side: str = "right", gap_tol: float = 1e-8) -> CriterionResult:
    """Prior average of (M dtheta/deps)^T (M dtheta/deps)."""
    ens = _ensemble(system, prior, quad, ensemble)
    P, C = system.n_params, design.size
    J = np.zeros((P, P))
    dJ = np.zeros((C, P, P))
    integrands = []
    if C:
        M = measurement_operator(design, system.mesh, side).matrix[:, system.free]
        dM = measurement_derivative(design, system.mesh, side)[:, system.free]
    for w, _, _, _, S in ens:
        if C:
            A = M @ S
            dA = dM @ S
            contrib = A.T @ A
            J += w * contrib
            dJ += w * (np.einsum("ka,kg->kag", dA, A) + np.einsum("ka,kg->kag", A, dA))
        else:
            contrib = np.zeros((P, P))
        integrands.append(contrib)
    diagnostics = {"integrands": np.array(integrands), "nodes": ens.quad.nodes, "weights": ens.quad.weights}
    return _finish(J, dJ, gradient, gap_tol, diagnostics)


def ecfm_hessian(system: AffineParameterizedSystem, design: ExperimentDesign, prior: PriorSpec,
                 quad: QuadratureRule | None = None, *, ensemble: PriorEnsemble | None = None,
                 reference_state: np.ndarray | None = None, gradient: bool = True, side: str = "right",
                 gap_tol: float = 1e-8) -> CriterionResult:
    """Prior average of the eps-Hessian of 0.5 |lam(eps, beta)|^2.

    The data are ``M(beta) @ reference_state``; by default the reference is
    the prior-averaged state, so the data follow the design. Passing the
    nodal values of a known true state reproduces the idealized setting in
    which the data-generating process is available.
    """
    ens = _ensemble(system, prior, quad, ensemble)
    P, C = system.n_params, design.size
    if C == 0:
        raise DomainError("the constraint-force criterion needs at least one measurement")
    ref = ens.mean_state if reference_state is None else np.asarray(reference_state, dtype=float)
    if ref.shape != (system.mesh.n_nodes,):
        raise DomainError("reference_state must hold one value per mesh node")
    M = measurement_operator(design, system.mesh, side).matrix
    V = M @ ref
    slope = measurement_derivative(design, system.mesh, side) @ ref if gradient else None

    J = np.zeros((P, P))
    dJ = np.zeros((C, P, P))
    integrands, lams = [], []
    for w, node, op, _, _ in ens:
        saddle = build_saddle(system, node, design, V, side, operator=op)
        fac = factorize_saddle(saddle)
        y = fac.solve(saddle.Q)
        derivs = saddle_derivatives(system, design, saddle, slope, with_beta=gradient, side=side)
        d = solve_sensitivity_cascade(derivs, fac, y).take(saddle.lam_index)
        lam = y[saddle.lam_index]
        lam_e, lam_ee = d.dy_deps, d.d2y_deps2
        contrib = lam_e.T @ lam_e + np.einsum("l,lag->ag", lam, lam_ee)
        J += w * contrib
        if gradient:
            lam_b, lam_eb, lam_eeb = d.dy_dbeta, d.d2y_depsdbeta, d.d3y_depsdepsdbeta
            t = np.einsum("laK,lg->Kag", lam_eb, lam_e)
            dJ += w * (t + t.transpose(0, 2, 1)
                       + np.einsum("lK,lag->Kag", lam_b, lam_ee)
                       + np.einsum("l,lagK->Kag", lam, lam_eeb))
        integrands.append(contrib)
        lams.append(lam)
    diagnostics = {
        "integrands": np.array(integrands), "nodes": ens.quad.nodes, "weights": ens.quad.weights,
        "lambda": np.array(lams), "data": V,
    }
    return _finish(J, dJ, gradient, gap_tol, diagnostics)


class DesignCriterion:
    """E-criterion of one kind as a function of the measurement positions.

    The quadrature-node forward solves are computed once and reused for
    every design evaluated.
    """

    def __init__(self, system: AffineParameterizedSystem, prior: PriorSpec, criterion,
                 template: ExperimentDesign, quad: QuadratureRule | None = None,
                 reference_state: np.ndarray | None = None, side: str = "right", gap_tol: float = 1e-8):
        self.system = system
        self.criterion = Criterion(criterion)
        self.template = template
        self.ensemble = PriorEnsemble(system, prior, quad)
        self.reference_state = reference_state
        self.side = side
        self.gap_tol = gap_tol

    @property
    def bounds(self) -> np.ndarray:
        return self.template.bounds

    def design(self, positions) -> ExperimentDesign:
        return self.template.with_positions(positions)

    def evaluate(self, positions, gradient: bool = True) -> CriterionResult:
        design = self.design(positions)
        common = dict(ensemble=self.ensemble, gradient=gradient, side=self.side, gap_tol=self.gap_tol)
        if self.criterion is Criterion.FISHER:
            return fisher_matrix(self.system, design, self.ensemble.prior, **common)
        return ecfm_hessian(self.system, design, self.ensemble.prior, reference_state=self.reference_state, **common)

    def value(self, positions) -> float:
        return self.evaluate(positions, gradient=False).min_eig

    def value_and_grad(self, positions) -> tuple[float, np.ndarray]:
        res = self.evaluate(positions, gradient=True)
        return res.min_eig, res.grad_beta
