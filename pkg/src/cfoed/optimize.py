"""Maximization of a design criterion over box-bounded measurement positions."""

from __future__ import annotations

import itertools
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CfoedError, DegenerateEigenvalueError, DomainError

log = logging.getLogger(__name__)

MAX_GRID_POINTS = 10**6


@dataclass
class SweepResult:
    points: np.ndarray          # (n_points, C)
    values: np.ndarray          # nan where the evaluator failed
    argmax: np.ndarray          # indices into points
    failures: list = field(default_factory=list)

    @property
    def argmax_points(self) -> np.ndarray:
        return self.points[self.argmax]

    @property
    def best_value(self) -> float:
        return float(self.values[self.argmax[0]])

    @property
    def is_plateau(self) -> bool:
        return self.argmax.size > 1


def grid_sweep(evaluate, bounds, resolution, tol: float = 1e-10, threads: int = 1) -> SweepResult:
    """Evaluate on a tensor grid spanning ``bounds`` (one (lo, hi) row per position).

    The argmax set holds every point within ``tol * max(1, |best|)`` of the
    best value, so plateaus come back whole. Failing points are skipped with
    a warning.
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (bounds.shape[0],))
    if np.any(res < 2):
        raise DomainError("grid resolution must be at least 2 per dimension")
    if np.prod(res.astype(float)) > MAX_GRID_POINTS:
        raise DomainError(f"grid has more than {MAX_GRID_POINTS} points")
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(bounds, res)]
    points = np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, bounds.shape[0])

    def one(x):
        try:
            return float(evaluate(x)), None
        except (CfoedError, np.linalg.LinAlgError) as exc:
            return np.nan, exc

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, points))
    else:
        results = [one(x) for x in points]
    values = np.array([v for v, _ in results])
    failures = [(points[i], exc) for i, (_, exc) in enumerate(results) if exc is not None]
    for x, exc in failures:
        warnings.warn(f"criterion failed at {x.tolist()}: {exc}", RuntimeWarning, stacklevel=2)
    if np.all(np.isnan(values)):
        raise DomainError("criterion failed at every grid point")
    best = np.nanmax(values)
    argmax = np.flatnonzero(values >= best - tol * max(1.0, abs(best)))
    return SweepResult(points, values, argmax, failures)


@dataclass
class OptimizationReport:
    best_design: np.ndarray
    best_value: float
    trace: list            # (beta, value, projected-gradient norm) per accepted iterate
    termination: str
    iterations: int = 0
    fallback: bool = False
    one_of_many: bool = False


def _project(x, bounds):
    return np.clip(x, bounds[:, 0], bounds[:, 1])


def _local_sweep(value, center, bounds, rounds: int = 6, resolution: int = 11):
    """Grid search on a neighbourhood of ``center`` that halves each round."""
    width = 0.25 * (bounds[:, 1] - bounds[:, 0])
    best_x, best_v = center.copy(), -np.inf
    for _ in range(rounds):
        box = np.column_stack([np.maximum(bounds[:, 0], best_x - width), np.minimum(bounds[:, 1], best_x + width)])
        box[:, 1] = np.maximum(box[:, 1], box[:, 0])
        res = [resolution if hi > lo else 2 for lo, hi in box]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sweep = grid_sweep(value, box, res)
        if sweep.best_value >= best_v:
            best_v = sweep.best_value
            best_x = sweep.argmax_points[0].copy()
        width = 0.5 * width
    return best_x, best_v


def projected_gradient_ascent(value_and_grad, design0, bounds, value=None, gtol: float = 1e-8,
                              max_iter: int = 200) -> OptimizationReport:
    """Projected gradient ascent with Barzilai-Borwein steps and Armijo backtracking.

    Stops when the projected gradient norm drops below ``gtol`` or after
    ``max_iter`` iterations. If the smallest eigenvalue becomes repeated at
    an iterate, a shrinking grid search around that iterate takes over.
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    value = value or (lambda x: value_and_grad(x)[0])
    x = _project(np.atleast_1d(np.asarray(design0, dtype=float)), bounds)
    trace = []
    try:
        f, g = value_and_grad(x)
        pg = np.linalg.norm(x - _project(x + g, bounds))
        trace.append((x.copy(), float(f), float(pg)))
        for it in range(1, max_iter + 1):
            if pg < gtol:
                return OptimizationReport(x, float(f), trace, "gradient", it - 1)
            t = 1.0 / max(1.0, float(np.abs(g).max()))
            if it > 1:
                # Barzilai-Borwein step from the last move, for ascent
                s, y = x - x_prev, g_prev - g
                sy = float(s @ y)
                if sy > 0.0:
                    t = float(s @ s) / sy
            accepted = False
            while t > 1e-14:
                trial = _project(x + t * g, bounds)
                if np.array_equal(trial, x):
                    break
                ft, gt = value_and_grad(trial)
                if ft >= f + 1e-4 * (g @ (trial - x)) and ft >= f:
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                return OptimizationReport(x, float(f), trace, "line_search", it)
            x_prev, g_prev = x, g
            x, f, g = trial, ft, gt
            pg = np.linalg.norm(x - _project(x + g, bounds))
            trace.append((x.copy(), float(f), float(pg)))
        return OptimizationReport(x, float(f), trace, "max_iter", max_iter)
    except DegenerateEigenvalueError as exc:
        log.info("degenerate eigenvalue at %s (%s); switching to local grid search", x, exc)
        bx, bv = _local_sweep(value, x, bounds)
        best_trace = max((v for _, v, _ in trace), default=-np.inf)
        if trace and best_trace > bv:
            bx, bv = trace[-1][0], trace[-1][1]
        trace.append((bx.copy(), float(bv), float("nan")))
        return OptimizationReport(bx, float(bv), trace, "fallback_sweep", len(trace), fallback=True)


def uniform_starts(bounds, n: int) -> np.ndarray:
    """``n`` starts spread evenly along the box diagonal, strictly inside it."""
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    s = (np.arange(n) + 0.5) / n
    return bounds[:, 0] + s[:, None] * (bounds[:, 1] - bounds[:, 0])


def multistart(value_and_grad, bounds, starts=None, n_starts: int = 8, value=None,
               threads: int = 1, **kwargs) -> OptimizationReport:
    """Best report over several starts; ties go to the lexicographically smallest design,
    so the result does not depend on the order of ``starts``."""
    starts = uniform_starts(bounds, n_starts) if starts is None else np.atleast_2d(starts)

    def run(x0):
        return projected_gradient_ascent(value_and_grad, x0, bounds, value=value, **kwargs)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            reports = list(pool.map(run, starts))
    else:
        reports = [run(x0) for x0 in starts]
    best = max(reports, key=lambda r: (r.best_value, tuple(-r.best_design)))
    top = [r for r in reports if r.best_value >= best.best_value - 1e-10 * max(1.0, abs(best.best_value))]
    distinct = {tuple(np.round(r.best_design, 12)) for r in top}
    best.one_of_many = len(distinct) > 1
    return best
