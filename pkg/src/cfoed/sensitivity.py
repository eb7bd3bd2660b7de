"""Derivatives of the solution of ``D(eps, beta) y = Q(eps, beta)`` up to third order,
the smallest-eigenvalue gradient, and a central-difference checking harness.

Index convention: model parameters ``a, g`` (eps), controls ``K`` (beta).
A ``None`` entry in :class:`SystemDerivatives` stands for an identically zero
partial, which is the common situation for affine systems.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .errors import ContractError, DegenerateEigenvalueError, SolverError

RCOND_MIN = 1e-14


class Factorization:
    """LU factorization of a square matrix, reused across many right-hand sides."""

    def __init__(self, D: np.ndarray, error=SolverError, rcond_min: float = RCOND_MIN):
        D = np.asarray(D, dtype=float)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise ContractError(f"expected a square matrix, got {D.shape}")
        self.D = D
        self.n = D.shape[0]
        if self.n == 0:
            self._lu = None
            self.rcond = 1.0
            return
        if not np.all(np.isfinite(D)):
            raise error("matrix has non-finite entries")
        anorm = np.abs(D).sum(axis=0).max()
        with warnings.catch_warnings():
            # singularity is reported through rcond below
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            self._lu = linalg.lu_factor(D, check_finite=False)
        if anorm == 0.0:
            self.rcond = 0.0
        else:
            rcond, info = lapack.dgecon(self._lu[0], anorm, norm="1")
            self.rcond = float(rcond) if info == 0 else 0.0
        if not self.rcond > rcond_min:
            raise error(f"matrix is numerically singular (rcond={self.rcond:.3e})")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.n:
            raise ContractError(f"right-hand side has {rhs.shape[0]} rows, expected {self.n}")
        if self.n == 0:
            return rhs.copy()
        return linalg.lu_solve(self._lu, rhs, check_finite=False)


def _nested(shape):
    if len(shape) == 1:
        return [None] * shape[0]
    return [_nested(shape[1:]) for _ in range(shape[0])]


@dataclass
class SystemDerivatives:
    """Partials of ``D`` (n x n) and ``Q`` (n) with respect to eps (P) and beta (C).

    Nested lists are indexed ``[a]``, ``[a][g]``, ``[a][K]`` and ``[a][g][K]``.
    """

    n: int
    n_eps: int
    n_beta: int
    dD_deps: list = field(default=None)
    dD_dbeta: list = field(default=None)
    d2D_deps2: list = field(default=None)
    d2D_depsdbeta: list = field(default=None)
    d3D_depsdepsdbeta: list = field(default=None)
    dQ_deps: list = field(default=None)
    dQ_dbeta: list = field(default=None)
    d2Q_deps2: list = field(default=None)
    d2Q_depsdbeta: list = field(default=None)
    d3Q_depsdepsdbeta: list = field(default=None)

    def __post_init__(self):
        P, C = self.n_eps, self.n_beta
        shapes = {
            "dD_deps": (P,), "dD_dbeta": (C,), "d2D_deps2": (P, P), "d2D_depsdbeta": (P, C),
            "d3D_depsdepsdbeta": (P, P, C), "dQ_deps": (P,), "dQ_dbeta": (C,), "d2Q_deps2": (P, P),
            "d2Q_depsdbeta": (P, C), "d3Q_depsdepsdbeta": (P, P, C),
        }
        for name, shape in shapes.items():
            value = getattr(self, name)
            if value is None:
                setattr(self, name, _nested(shape))
            else:
                self._check(name, value, shape)

    def _check(self, name, value, shape):
        def walk(v, depth):
            if depth == len(shape):
                if v is None:
                    return
                want = (self.n, self.n) if name.startswith("d") and "D" in name.split("_")[0] else (self.n,)
                if np.shape(v) != want:
                    raise ContractError(f"{name} entry has shape {np.shape(v)}, expected {want}")
                return
            if len(v) != shape[depth]:
                raise ContractError(f"{name} has length {len(v)} at depth {depth}, expected {shape[depth]}")
            for item in v:
                walk(item, depth + 1)

        walk(value, 0)


@dataclass(frozen=True)
class SolutionDerivatives:
    """Solution partials, leading axis over the n unknowns.

    ``dy_deps`` (n, P), ``dy_dbeta`` (n, C), ``d2y_deps2`` (n, P, P),
    ``d2y_depsdbeta`` (n, P, C), ``d3y_depsdepsdbeta`` (n, P, P, C).
    """

    dy_deps: np.ndarray
    dy_dbeta: np.ndarray
    d2y_deps2: np.ndarray
    d2y_depsdbeta: np.ndarray
    d3y_depsdepsdbeta: np.ndarray

    def take(self, index) -> "SolutionDerivatives":
        """Restrict every block to a subset of unknowns (e.g. the constraint forces)."""
        return SolutionDerivatives(
            self.dy_deps[index], self.dy_dbeta[index], self.d2y_deps2[index],
            self.d2y_depsdbeta[index], self.d3y_depsdepsdbeta[index],
        )


def _mv(A, x):
    return None if A is None else A @ x


def _acc(*terms):
    """Sum the non-None terms."""
    out = None
    for t in terms:
        if t is not None:
            out = t.copy() if out is None else out + t
    return out


def _rhs(n, Q_term, *D_terms):
    """Q_term minus the sum of D-terms, as a dense vector."""
    r = np.zeros(n) if Q_term is None else np.array(Q_term, dtype=float)
    s = _acc(*D_terms)
    return r if s is None else r - s


def solve_sensitivity_cascade(derivs: SystemDerivatives, D, y: np.ndarray) -> SolutionDerivatives:
    """First to third solution derivatives from one factorization of ``D``.

    Solved in dependency order: dy/deps and dy/dbeta, then the second
    derivatives, then d3y/deps deps dbeta. ``D`` may be a matrix or a
    :class:`Factorization`.
    """
    fac = D if isinstance(D, Factorization) else Factorization(D)
    n, P, C = derivs.n, derivs.n_eps, derivs.n_beta
    y = np.asarray(y, dtype=float)
    if fac.n != n or y.shape != (n,):
        raise ContractError("D, y and the derivative container disagree on the system size")

    dD_e, dD_b = derivs.dD_deps, derivs.dD_dbeta
    d2D_ee, d2D_eb, d3D = derivs.d2D_deps2, derivs.d2D_depsdbeta, derivs.d3D_depsdepsdbeta

    def solve_columns(cols):
        if not cols:
            return np.zeros((n, 0))
        return fac.solve(np.column_stack(cols))

    dy_e = solve_columns([_rhs(n, derivs.dQ_deps[a], _mv(dD_e[a], y)) for a in range(P)])
    dy_b = solve_columns([_rhs(n, derivs.dQ_dbeta[K], _mv(dD_b[K], y)) for K in range(C)])

    d2y_ee = np.zeros((n, P, P))
    for a in range(P):
        for g in range(a, P):
            r = _rhs(n, derivs.d2Q_deps2[a][g], _mv(d2D_ee[a][g], y),
                     _mv(dD_e[a], dy_e[:, g]), _mv(dD_e[g], dy_e[:, a]))
            d2y_ee[:, a, g] = d2y_ee[:, g, a] = fac.solve(r)

    d2y_eb = np.zeros((n, P, C))
    cols, idx = [], []
    for a in range(P):
        for K in range(C):
            cols.append(_rhs(n, derivs.d2Q_depsdbeta[a][K], _mv(d2D_eb[a][K], y),
                             _mv(dD_b[K], dy_e[:, a]), _mv(dD_e[a], dy_b[:, K])))
            idx.append((a, K))
    if cols:
        sol = solve_columns(cols)
        for j, (a, K) in enumerate(idx):
            d2y_eb[:, a, K] = sol[:, j]

    d3y = np.zeros((n, P, P, C))
    for a in range(P):
        for g in range(a, P):
            for K in range(C):
                r = _rhs(
                    n, derivs.d3Q_depsdepsdbeta[a][g][K],
                    _mv(d3D[a][g][K], y),
                    _mv(d2D_ee[a][g], dy_b[:, K]),
                    _mv(d2D_eb[a][K], dy_e[:, g]),
                    _mv(dD_e[a], d2y_eb[:, g, K]),
                    _mv(d2D_eb[g][K], dy_e[:, a]),
                    _mv(dD_e[g], d2y_eb[:, a, K]),
                    _mv(dD_b[K], d2y_ee[:, a, g]),
                )
                d3y[:, a, g, K] = d3y[:, g, a, K] = fac.solve(r)

    return SolutionDerivatives(dy_e, dy_b, d2y_ee, d2y_eb, d3y)


def cascade_residuals(derivs: SystemDerivatives, D: np.ndarray, y: np.ndarray,
                      sol: SolutionDerivatives) -> dict[str, float]:
    """Largest relative residual of each defining linear relation after substitution."""
    D = np.asarray(D, dtype=float)
    P, C = derivs.n_eps, derivs.n_beta
    dD_e, dD_b = derivs.dD_deps, derivs.dD_dbeta
    d2D_ee, d2D_eb, d3D = derivs.d2D_deps2, derivs.d2D_depsdbeta, derivs.d3D_depsdepsdbeta
    out = {}

    def rel(unknown, *terms):
        lhs = D @ unknown
        parts = [lhs] + [t for t in terms if t is not None]
        total = np.sum(parts, axis=0)
        scale = max(np.linalg.norm(D) * np.linalg.norm(unknown), *(np.linalg.norm(t) for t in parts), 1e-300)
        return float(np.linalg.norm(total) / scale)

    def neg(v):
        return None if v is None else -np.asarray(v)

    out["dy_deps"] = max([rel(sol.dy_deps[:, a], _mv(dD_e[a], y), neg(derivs.dQ_deps[a])) for a in range(P)],
                         default=0.0)
    out["dy_dbeta"] = max([rel(sol.dy_dbeta[:, K], _mv(dD_b[K], y), neg(derivs.dQ_dbeta[K])) for K in range(C)],
                          default=0.0)
    out["d2y_deps2"] = max(
        [rel(sol.d2y_deps2[:, a, g], _mv(d2D_ee[a][g], y), _mv(dD_e[a], sol.dy_deps[:, g]),
             _mv(dD_e[g], sol.dy_deps[:, a]), neg(derivs.d2Q_deps2[a][g]))
         for a in range(P) for g in range(P)], default=0.0)
    out["d2y_depsdbeta"] = max(
        [rel(sol.d2y_depsdbeta[:, a, K], _mv(d2D_eb[a][K], y), _mv(dD_b[K], sol.dy_deps[:, a]),
             _mv(dD_e[a], sol.dy_dbeta[:, K]), neg(derivs.d2Q_depsdbeta[a][K]))
         for a in range(P) for K in range(C)], default=0.0)
    out["d3y_depsdepsdbeta"] = max(
        [rel(sol.d3y_depsdepsdbeta[:, a, g, K], _mv(d3D[a][g][K], y), _mv(d2D_ee[a][g], sol.dy_dbeta[:, K]),
             _mv(d2D_eb[a][K], sol.dy_deps[:, g]), _mv(dD_e[a], sol.d2y_depsdbeta[:, g, K]),
             _mv(d2D_eb[g][K], sol.dy_deps[:, a]), _mv(dD_e[g], sol.d2y_depsdbeta[:, a, K]),
             _mv(dD_b[K], sol.d2y_deps2[:, a, g]), neg(derivs.d3Q_depsdepsdbeta[a][g][K]))
         for a in range(P) for g in range(P) for K in range(C)], default=0.0)
    return out


@dataclass(frozen=True)
class EigenPair:
    mu: float
    q: np.ndarray
    gap: float


def min_eigenpair(J: np.ndarray, gap_tol: float | None = 1e-8) -> EigenPair:
    """Smallest eigenpair of a symmetric matrix.

    Raises DegenerateEigenvalueError when the gap to the next eigenvalue is
    below ``gap_tol`` times the spectral scale; pass ``gap_tol=None`` to skip
    the check (the value of the smallest eigenvalue is still well defined).
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    if J.shape[0] != J.shape[1] or J.shape[0] == 0:
        raise ContractError(f"expected a non-empty square matrix, got {J.shape}")
    scale = max(1.0, float(np.abs(J).max()))
    if not np.allclose(J, J.T, rtol=0.0, atol=1e-10 * scale):
        raise ContractError("matrix is not symmetric")
    w, V = np.linalg.eigh(0.5 * (J + J.T))
    gap = float(w[1] - w[0]) if w.size > 1 else np.inf
    if gap_tol is not None and w.size > 1:
        spectral = float(np.abs(w).max())
        if gap <= gap_tol * (spectral if spectral > 0.0 else 1.0):
            raise DegenerateEigenvalueError(f"smallest eigenvalue is repeated (gap={gap:.3e})", gap)
    return EigenPair(float(w[0]), V[:, 0].copy(), gap)


def min_eigenvalue_gradient(J: np.ndarray, dJ_dbeta, gap_tol: float = 1e-8) -> np.ndarray:
    """Gradient of the smallest eigenvalue: q^T (dJ/dbeta_K) q for each control K."""
    pair = min_eigenpair(J, gap_tol)
    dJ = np.asarray(dJ_dbeta, dtype=float)
    if dJ.size == 0:
        return np.zeros(0)
    dJ = dJ.reshape(-1, *np.shape(np.atleast_2d(J)))
    return np.einsum("i,kij,j->k", pair.q, dJ, pair.q)


@dataclass(frozen=True)
class FDReport:
    """Central-difference comparison; arrays have shape (outputs, inputs)."""

    analytic: np.ndarray
    numeric: np.ndarray
    abs_error: np.ndarray
    rel_error: np.ndarray

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_error.max(initial=0.0))


def central_difference(f, point, step: float = 1e-5) -> np.ndarray:
    """Jacobian of ``f`` by central differences with step ``step * max(1, |x_j|)``."""
    x0 = np.atleast_1d(np.asarray(point, dtype=float))
    cols = []
    for j in range(x0.size):
        h = step * max(1.0, abs(x0[j]))
        xp, xm = x0.copy(), x0.copy()
        xp[j] += h
        xm[j] -= h
        fp = np.atleast_1d(np.asarray(f(xp), dtype=float)).ravel()
        fm = np.atleast_1d(np.asarray(f(xm), dtype=float)).ravel()
        cols.append((fp - fm) / (xp[j] - xm[j]))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def finite_difference_check(f, analytic, point, step: float = 1e-5, floor: float = 1e-10) -> FDReport:
    """Compare an analytic Jacobian against central differences of ``f`` at ``point``.

    Relative errors are taken per component against the larger of the two
    values, never against less than ``floor`` times the largest entry.
    """
    numeric = central_difference(f, point, step)
    analytic = np.asarray(analytic, dtype=float).reshape(numeric.shape)
    err = np.abs(analytic - numeric)
    scale = max(float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor * scale)
    rel = np.divide(err, denom, out=np.zeros_like(err), where=denom > 0)
    return FDReport(analytic, numeric, err, rel)
