"""Design sweeps and the Monte Carlo noise study behind the CLI."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import CfoedError, ConfigError
from .objectives import DesignCriterion
from .optimize import SweepResult, grid_sweep
from .oracle import Criterion, data_at
from .saddle import standard_inverse

log = logging.getLogger(__name__)


@dataclass
class DesignSweep:
    beta: np.ndarray
    fisher: np.ndarray
    ecfm: np.ndarray
    fisher_sweep: SweepResult
    ecfm_sweep: SweepResult


def sweep_designs(cfg, threads: int = 1) -> DesignSweep:
    """Both criteria on an evenly spaced grid over the (single) position's bounds."""
    template = cfg.design()
    if template.size != 1:
        raise ConfigError("design sweeps take exactly one measurement position")
    res = cfg.sweep_resolution if cfg.sweep_resolution is not None else cfg.elements
    system, quad = cfg.system(), cfg.quadrature()
    out = {}
    for crit in Criterion:
        dc = DesignCriterion(system, cfg.prior, crit, template, quad)
        out[crit] = grid_sweep(dc.value, template.bounds, res, threads=threads)
    f, e = out[Criterion.FISHER], out[Criterion.ECFM]
    return DesignSweep(f.points[:, 0], f.values, e.values, f, e)


def design_choices(cfg, sweep: DesignSweep | None = None) -> list[tuple[str, float]]:
    """The three designs compared by the noise study.

    On a plateau the smallest position in the argmax set is used.
    """
    sweep = sweep or sweep_designs(cfg)
    return [
        ("ecfm_optimal", float(sweep.ecfm_sweep.argmax_points[:, 0].min())),
        ("fisher_optimal", float(sweep.fisher_sweep.argmax_points[:, 0].min())),
        ("midpoint", 0.5),
    ]


@dataclass
class NoiseSummary:
    label: str
    beta: float
    mean: float
    stddev: float          # nan when fewer than two trials succeeded
    failures: int


@dataclass
class NoiseStudy:
    rows: list             # (label, trial, eps_hat or nan)
    summary: list


def trial_rng(seed: int, design_idx: int, trial: int) -> np.random.Generator:
    """Independent stream per (design, trial), so results do not depend on scheduling."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(design_idx, trial)))


def noise_study(cfg, designs=None, threads: int = 1) -> NoiseStudy:
    """Standard inverse estimates from noisy true-model data at each design."""
    if cfg.design().size != 1:
        raise ConfigError("the noise study takes exactly one measurement position")
    designs = designs if designs is not None else design_choices(cfg, sweep_designs(cfg, threads))
    system = cfg.system()
    template = cfg.design()
    sigma = cfg.noise.sigma
    eps0 = cfg.initial_eps()
    support = cfg.inverse_support()

    def run(job):
        d, t = job
        beta = designs[d][1]
        z = trial_rng(cfg.seed, d, t).standard_normal()
        value = data_at(cfg.spec, beta) + sigma * z
        try:
            res = standard_inverse(system, template.with_positions([beta]), [value], eps0, support)
            return float(res.eps[0])
        except (CfoedError, np.linalg.LinAlgError) as exc:
            log.warning("trial %d at %s failed: %s", t, designs[d][0], exc)
            return math.nan

    jobs = [(d, t) for d in range(len(designs)) for t in range(cfg.trials)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            est = list(pool.map(run, jobs))
    else:
        est = [run(j) for j in jobs]

    rows = [(designs[d][0], t, e) for (d, t), e in zip(jobs, est)]
    summary = []
    for d, (label, beta) in enumerate(designs):
        vals = np.array([e for (dd, _), e in zip(jobs, est) if dd == d])
        ok = vals[np.isfinite(vals)]
        mean = float(ok.mean()) if ok.size else math.nan
        std = float(ok.std(ddof=1)) if ok.size > 1 else math.nan
        summary.append(NoiseSummary(label, beta, mean, std, int(vals.size - ok.size)))
    return NoiseStudy(rows, summary)
