"""Linear finite elements on [0, 1] for affine-in-parameter boundary value problems.

The operator and load are ``K(eps) = K0 + sum_a eps_a K_a`` and
``F(eps) = F0 + sum_a eps_a F_a``. Dirichlet nodes are eliminated; their
prescribed values are lifted into the right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import AssemblyError, DomainError, SeparationError, SolverError
from .oracle import CaseKind, ModelProblemSpec


@dataclass(frozen=True)
class Mesh1D:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).ravel()
        if nodes.size < 2:
            raise DomainError("a mesh needs at least two nodes")
        if nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise DomainError("mesh must span [0, 1] exactly")
        if np.any(np.diff(nodes) <= 0.0):
            raise DomainError("mesh nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, n_elements: int) -> "Mesh1D":
        if n_elements < 1:
            raise DomainError("need at least one element")
        nodes = np.linspace(0.0, 1.0, n_elements + 1)
        return cls(nodes)

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def h(self) -> float:
        """Smallest element width."""
        return float(self.widths.min())

    def locate(self, x: float, side: str = "right") -> int:
        """Index of the element containing ``x``.

        A position on an interior node belongs to the element on ``side``;
        the end nodes always resolve to the adjacent element. ``"central"``
        locates like ``"right"``; it only changes :func:`measurement_derivative`.
        """
        if not 0.0 <= x <= 1.0:
            raise DomainError(f"position {x} outside the mesh")
        if side == "central":
            side = "right"
        if side not in ("left", "right"):
            raise ValueError("side must be 'left', 'right' or 'central'")
        e = int(np.searchsorted(self.nodes, x, side=side)) - 1
        return min(max(e, 0), self.n_elements - 1)

    def shape_values(self, x: float, side: str = "right") -> tuple[int, float, float]:
        e = self.locate(x, side)
        xa, xb = self.nodes[e], self.nodes[e + 1]
        h = xb - xa
        return e, (xb - x) / h, (x - xa) / h


def stiffness_matrix(mesh: Mesh1D, coeffs) -> np.ndarray:
    """Assembled stiffness for ``-(c u')'`` with a per-element constant coefficient."""
    c = np.broadcast_to(np.asarray(coeffs, dtype=float), (mesh.n_elements,))
    n = mesh.n_nodes
    K = np.zeros((n, n))
    for e, (ce, he) in enumerate(zip(c, mesh.widths)):
        ke = ce / he
        K[e, e] += ke
        K[e + 1, e + 1] += ke
        K[e, e + 1] -= ke
        K[e + 1, e] -= ke
    return K


def distributed_load(mesh: Mesh1D, values) -> np.ndarray:
    """Consistent nodal load of a per-element constant source."""
    f = np.broadcast_to(np.asarray(values, dtype=float), (mesh.n_elements,))
    F = np.zeros(mesh.n_nodes)
    half = 0.5 * f * mesh.widths
    F[:-1] += half
    F[1:] += half
    return F


def point_load(mesh: Mesh1D, node: int, value: float = 1.0) -> np.ndarray:
    F = np.zeros(mesh.n_nodes)
    F[node] = value
    return F


@dataclass(frozen=True)
class AffineParameterizedSystem:
    """K(eps) = K0 + sum_a eps_a K_terms[a]; F(eps) = F0 + sum_a eps_a F_terms[a].

    ``K_terms`` and ``F_terms`` map a parameter index to its coefficient; an
    absent index contributes nothing.
    """

    mesh: Mesh1D
    n_params: int
    K0: np.ndarray
    F0: np.ndarray
    K_terms: dict = field(default_factory=dict)
    F_terms: dict = field(default_factory=dict)
    dirichlet: dict = field(default_factory=lambda: {0: 0.0})

    def __post_init__(self):
        n = self.mesh.n_nodes
        if self.K0.shape != (n, n) or self.F0.shape != (n,):
            raise DomainError("K0/F0 do not match the mesh")
        for a, Ka in self.K_terms.items():
            if not 0 <= a < self.n_params or Ka.shape != (n, n):
                raise DomainError(f"bad stiffness term {a}")
            if not np.allclose(Ka, Ka.T, rtol=0, atol=1e-14 * max(1.0, np.abs(Ka).max())):
                raise AssemblyError(f"stiffness term {a} is not symmetric")
        for a, Fa in self.F_terms.items():
            if not 0 <= a < self.n_params or Fa.shape != (n,):
                raise DomainError(f"bad load term {a}")
        if not self.dirichlet:
            raise DomainError("at least one Dirichlet node is required")
        free = np.array([i for i in range(n) if i not in self.dirichlet], dtype=int)
        fixed = np.array(sorted(self.dirichlet), dtype=int)
        object.__setattr__(self, "free", free)
        object.__setattr__(self, "fixed", fixed)
        object.__setattr__(self, "fixed_values", np.array([self.dirichlet[i] for i in fixed], dtype=float))

    def _eps(self, eps) -> np.ndarray:
        eps = np.atleast_1d(np.asarray(eps, dtype=float))
        if eps.shape != (self.n_params,):
            raise DomainError(f"expected {self.n_params} model parameters, got {eps.shape}")
        return eps

    def stiffness(self, eps) -> np.ndarray:
        eps = self._eps(eps)
        K = self.K0.copy()
        for a, Ka in self.K_terms.items():
            K += eps[a] * Ka
        return K

    def load(self, eps) -> np.ndarray:
        eps = self._eps(eps)
        F = self.F0.copy()
        for a, Fa in self.F_terms.items():
            F += eps[a] * Fa
        return F

    def reduce(self, K: np.ndarray, F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        f, d = self.free, self.fixed
        return K[np.ix_(f, f)], F[f] - K[np.ix_(f, d)] @ self.fixed_values

    def reduced_terms(self) -> list[tuple[np.ndarray | None, np.ndarray | None]]:
        """Per-parameter derivatives (dK/deps_a, dF/deps_a) on the free DOFs, None where zero."""
        out = []
        f, d = self.free, self.fixed
        for a in range(self.n_params):
            Ka = self.K_terms.get(a)
            Fa = self.F_terms.get(a)
            dK = None if Ka is None else Ka[np.ix_(f, f)]
            dF = None if Fa is None else Fa[f].copy()
            if Ka is not None and np.any(self.fixed_values):
                lift = Ka[np.ix_(f, d)] @ self.fixed_values
                dF = -lift if dF is None else dF - lift
            out.append((dK, dF))
        return out

    def expand(self, theta_free: np.ndarray) -> np.ndarray:
        """Full nodal vector with Dirichlet values re-inserted."""
        theta = np.empty(self.mesh.n_nodes)
        theta[self.free] = theta_free
        theta[self.fixed] = self.fixed_values
        return theta


def build_case_system(case, spec: ModelProblemSpec, mesh: Mesh1D) -> AffineParameterizedSystem:
    """Affine system for one of the four single-parameter model-problem cases."""
    case = CaseKind(case)
    K1 = stiffness_matrix(mesh, 1.0)
    source = distributed_load(mesh, 1.0)
    end = point_load(mesh, mesh.n_nodes - 1)
    if case is CaseKind.PARAMETERIZED_BC:
        return AffineParameterizedSystem(mesh, 1, spec.k * K1, spec.b * source, F_terms={0: end})
    if case is CaseKind.PARAMETERIZED_SOURCE:
        return AffineParameterizedSystem(mesh, 1, spec.k * K1, spec.p * end, F_terms={0: source})
    if case is CaseKind.PARAMETERIZED_MATERIAL:
        return AffineParameterizedSystem(
            mesh, 1, np.zeros_like(K1), spec.b * source + spec.p * end, K_terms={0: K1}
        )
    return AffineParameterizedSystem(mesh, 1, spec.k * K1, np.zeros(mesh.n_nodes), F_terms={0: source})


def true_model_system(spec: ModelProblemSpec, mesh: Mesh1D) -> tuple[AffineParameterizedSystem, float]:
    """The data-generating model as a system plus the parameter value that realizes it."""
    return build_case_system(CaseKind.PARAMETERIZED_BC, spec, mesh), spec.p


def assemble(system: AffineParameterizedSystem, eps) -> tuple[np.ndarray, np.ndarray]:
    """Reduced (K, F) on the free DOFs; raises AssemblyError unless K is symmetric positive definite."""
    K, F = system.reduce(system.stiffness(eps), system.load(eps))
    _cholesky(K)
    return K, F


def _cholesky(K: np.ndarray):
    scale = max(1.0, float(np.abs(K).max(initial=0.0)))
    if not np.allclose(K, K.T, rtol=0.0, atol=1e-12 * scale):
        raise AssemblyError("reduced stiffness is not symmetric")
    try:
        return linalg.cho_factor(K, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise AssemblyError("reduced stiffness is not positive definite; eps outside the valid range") from exc


class ReducedOperator:
    """Cholesky-factored reduced operator at one parameter value."""

    def __init__(self, system: AffineParameterizedSystem, eps):
        self.system = system
        self.eps = np.atleast_1d(np.asarray(eps, dtype=float))
        self.K, self.F = system.reduce(system.stiffness(self.eps), system.load(self.eps))
        self._chol = _cholesky(self.K)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return linalg.cho_solve(self._chol, rhs)

    def state(self) -> np.ndarray:
        """Free-DOF solution of K theta = F."""
        return self.solve(self.F)

    def state_sensitivity(self, theta_free: np.ndarray) -> np.ndarray:
        """d theta_free / d eps as an (N_free, P) matrix."""
        S = np.zeros((theta_free.size, self.system.n_params))
        for a, (dK, dF) in enumerate(self.system.reduced_terms()):
            rhs = np.zeros(theta_free.size)
            if dF is not None:
                rhs += dF
            if dK is not None:
                rhs -= dK @ theta_free
            S[:, a] = self.solve(rhs)
        return S


def forward_solve(system: AffineParameterizedSystem, eps) -> np.ndarray:
    """Nodal solution of K(eps) theta = F(eps) including Dirichlet nodes."""
    op = ReducedOperator(system, eps)
    theta = op.state()
    if not np.all(np.isfinite(theta)):
        raise SolverError("forward solve produced non-finite values")
    return system.expand(theta)


@dataclass(frozen=True)
class ExperimentDesign:
    """Measurement positions with a box ``bounds[i] = (lo, hi)`` per position.

    ``min_separation`` of None means one element width of whatever mesh the
    design is used with.
    """

    positions: np.ndarray
    bounds: np.ndarray
    min_separation: float | None = None

    def __post_init__(self):
        pos = np.atleast_1d(np.asarray(self.positions, dtype=float)).ravel()
        bounds = np.asarray(self.bounds, dtype=float).reshape(-1, 2) if pos.size else np.zeros((0, 2))
        if bounds.shape[0] == 1 and pos.size > 1:
            bounds = np.repeat(bounds, pos.size, axis=0)
        if bounds.shape != (pos.size, 2):
            raise DomainError("need one (lo, hi) bound per position")
        if np.any(bounds[:, 0] > bounds[:, 1]) or np.any(bounds < 0.0) or np.any(bounds > 1.0):
            raise DomainError("bounds must satisfy 0 <= lo <= hi <= 1")
        if np.any(pos < bounds[:, 0]) or np.any(pos > bounds[:, 1]):
            raise DomainError(f"positions {pos} outside their bounds")
        if self.min_separation is not None and self.min_separation < 0.0:
            raise DomainError("min_separation must be non-negative")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def on_mesh(cls, mesh: Mesh1D, positions, bounds=None, min_separation=None) -> "ExperimentDesign":
        """Design with the default FEM box [h, 1] unless ``bounds`` is given."""
        pos = np.atleast_1d(np.asarray(positions, dtype=float))
        if bounds is None:
            bounds = np.tile([mesh.h, 1.0], (pos.size, 1))
        return cls(pos, bounds, min_separation)

    @property
    def size(self) -> int:
        return self.positions.size

    def with_positions(self, positions) -> "ExperimentDesign":
        return ExperimentDesign(positions, self.bounds, self.min_separation)

    def check_separation(self, mesh: Mesh1D) -> None:
        sep = mesh.h if self.min_separation is None else self.min_separation
        pos = np.sort(self.positions)
        gaps = np.diff(pos)
        if gaps.size and gaps.min() < sep * (1.0 - 1e-12):
            raise SeparationError(f"measurements closer than the minimum separation {sep:g}")


@dataclass(frozen=True)
class MeasurementOperator:
    """``matrix[i, j]`` is nodal shape function j evaluated at position i (all nodes)."""

    matrix: np.ndarray


@dataclass(frozen=True)
class ConstraintForceColumns:
    """``matrix[:, i]`` is the consistent nodal load of a unit impulse at position i."""

    matrix: np.ndarray


def measurement_operator(design: ExperimentDesign, mesh: Mesh1D, side: str = "right") -> MeasurementOperator:
    design.check_separation(mesh)
    M = np.zeros((design.size, mesh.n_nodes))
    for i, x in enumerate(design.positions):
        e, na, nb = mesh.shape_values(x, side)
        M[i, e] = na
        M[i, e + 1] = nb
    return MeasurementOperator(M)


def measurement_derivative(design: ExperimentDesign, mesh: Mesh1D, side: str = "right") -> np.ndarray:
    """Row i holds d(row i of M)/d beta_i.

    The slope is piecewise constant; on an interior node it is taken from the
    element on ``side`` (the last node always uses the left element), or
    averaged over both elements for ``side="central"``.
    """
    if side == "central":
        return 0.5 * (measurement_derivative(design, mesh, "left") + measurement_derivative(design, mesh, "right"))
    dM = np.zeros((design.size, mesh.n_nodes))
    for i, x in enumerate(design.positions):
        e = mesh.locate(x, side)
        h = mesh.widths[e]
        dM[i, e] = -1.0 / h
        dM[i, e + 1] = 1.0 / h
    return dM


def constraint_columns(design: ExperimentDesign, mesh: Mesh1D, side: str = "right") -> ConstraintForceColumns:
    """Impulse constraint forces; the Galerkin load of an impulse is the shape-function value."""
    return ConstraintForceColumns(measurement_operator(design, mesh, side).matrix.T.copy())
