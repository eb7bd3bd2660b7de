"""Command-line entry point: ``cfoed {forward,inverse,design,noise-study,verify}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import CfoedError, ConfigError
from .fem import ExperimentDesign, build_case_system, forward_solve, true_model_system
from .objectives import fisher_matrix
from .optimize import multistart
from .oracle import (
    CaseKind,
    Criterion,
    OracleCriterion,
    constraint_force,
    data_at,
    fisher_design_objective,
    optimal_beta_analytic,
    true_solution,
)
from .saddle import ecfm_inverse, solve_constrained, standard_inverse
from .study import design_choices, noise_study, sweep_designs

log = logging.getLogger("cfoed")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class NumericalFailure(Exception):
    """Raised by a command whose checks ran but did not pass."""


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "NA" if np.isnan(x) else format(float(x), ".17g")
    return str(x)


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def _argmax_label(s) -> str:
    return "all" if s.whole_interval else ";".join(fmt(float(x)) for x in s.points)


# ---- commands -------------------------------------------------------------

def cmd_forward(cfg: RunConfig, out: Path, args) -> dict:
    mesh = cfg.mesh()
    system, p = true_model_system(cfg.spec, mesh)
    u = forward_solve(system, [p])
    x = mesh.nodes
    exact = np.array([true_solution(cfg.spec, xi) for xi in x])
    mid = 0.5 * (x[:-1] + x[1:])
    mid_fem = 0.5 * (u[:-1] + u[1:])
    mid_exact = np.array([true_solution(cfg.spec, xi) for xi in mid])
    write_csv(out / "forward.csv", ["x", "u_true", "u_fem"], zip(x, exact, u))
    return {
        "elements": mesh.n_elements,
        "max_nodal_error": float(np.abs(u - exact).max()),
        "max_midpoint_error": float(np.abs(mid_fem - mid_exact).max()),
    }


def _inverse_data(cfg: RunConfig, design) -> np.ndarray:
    if cfg.data_source == "analytic":
        return np.array([data_at(cfg.spec, b) for b in design.positions])
    try:
        with open(cfg.data_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        values = np.array([float(r["value"]) for r in rows])
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot read data file {cfg.data_path}: {exc}") from exc
    if values.size != design.size:
        raise ConfigError(f"data file has {values.size} values for {design.size} measurements")
    return values


def cmd_inverse(cfg: RunConfig, out: Path, args) -> dict:
    system, design = cfg.system(), cfg.design()
    data = _inverse_data(cfg, design)
    methods = ["standard", "ecfm"] if args.method == "both" else [args.method]
    solvers = {"standard": standard_inverse, "ecfm": ecfm_inverse}
    rows, summary = [], {}
    for m in methods:
        res = solvers[m](system, design, data, cfg.initial_eps(), cfg.inverse_support())
        rows.append((m, float(res.eps[0]), res.objective, res.iterations))
        summary[m] = {"eps_star": res.eps.tolist(), "objective_star": res.objective,
                      "termination": res.termination}
    write_csv(out / "inverse.csv", ["method", "eps_star", "objective_star", "iterations"], rows)
    return summary


def cmd_design(cfg: RunConfig, out: Path, args) -> dict:
    sweep = sweep_designs(cfg, threads=args.threads)
    write_csv(out / "design_sweep.csv", ["beta", "fisher_value", "ecfm_value"],
              zip(sweep.beta, sweep.fisher, sweep.ecfm))
    template = cfg.design()
    rows, summary = [], {}
    for crit, sw in ((Criterion.FISHER, sweep.fisher_sweep), (Criterion.ECFM, sweep.ecfm_sweep)):
        analytic = _argmax_label(optimal_beta_analytic(cfg.case, cfg.spec, crit))
        rows.append((crit.value, "sweep", float(sw.argmax_points[:, 0].min()), sw.best_value, sw.points.shape[0],
                     "plateau" if sw.is_plateau else "grid", sw.argmax.size, analytic))
        try:
            oc = OracleCriterion(cfg.case, cfg.spec, cfg.prior, crit)
            rep = multistart(oc.value_and_grad, template.bounds, value=oc.value, threads=args.threads)
        except CfoedError as exc:
            log.info("no closed-form ascent for %s: %s", crit.value, exc)
        else:
            rows.append((crit.value, "ascent_closed_form", float(rep.best_design[0]), rep.best_value,
                         rep.iterations, rep.termination, 1, analytic))
        summary[crit.value] = {"sweep_argmax": sw.argmax_points[:, 0].tolist(), "analytic_argmax": analytic}
    write_csv(out / "design_optimization.csv",
              ["criterion", "method", "best_beta", "best_value", "iterations", "termination",
               "argmax_count", "analytic_argmax"], rows)
    return summary


def cmd_noise_study(cfg: RunConfig, out: Path, args) -> dict:
    designs = design_choices(cfg, sweep_designs(cfg, threads=args.threads))
    study = noise_study(cfg, designs, threads=args.threads)
    write_csv(out / "noise.csv", ["design_label", "trial", "eps_hat"], study.rows)
    write_csv(out / "noise_summary.csv", ["design_label", "mean", "stddev", "failures"],
              [(s.label, s.mean, s.stddev, s.failures) for s in study.summary])
    return {s.label: {"beta": s.beta, "mean": s.mean, "stddev": None if np.isnan(s.stddev) else s.stddev,
                      "failures": s.failures} for s in study.summary}


def verify_checks(cfg: RunConfig, tol: float = 1e-8):
    """Oracle-vs-FEM comparisons at nodal positions for all four cases."""
    mesh = cfg.mesh()
    betas = mesh.nodes[1:][:: max(1, mesh.n_elements // 8)]
    checks = []
    system, p = true_model_system(cfg.spec, mesh)
    u = forward_solve(system, [p])
    err = max(abs(u[i] - true_solution(cfg.spec, x)) for i, x in enumerate(mesh.nodes))
    checks.append(("forward_nodal_error", err, tol))
    prior = cfg.prior
    for case in CaseKind:
        sys_c = build_case_system(case, cfg.spec, mesh)
        eps = float(prior.mean()[0])
        if case is CaseKind.PARAMETERIZED_MATERIAL and eps <= 0.0:
            eps = cfg.spec.k
        lam_err = fish_err = 0.0
        for beta in betas:
            design = ExperimentDesign.on_mesh(mesh, [beta])
            sol = solve_constrained(sys_c, [eps], design, [data_at(cfg.spec, beta)])
            ref = constraint_force(case, cfg.spec, eps, beta).lam
            lam_err = max(lam_err, abs(sol.lam[0] - ref) / max(1.0, abs(ref)))
            if prior.kind != "gaussian" or case is not CaseKind.PARAMETERIZED_MATERIAL:
                fm = fisher_matrix(sys_c, design, prior, cfg.quadrature(), gradient=False).min_eig
                fo = fisher_design_objective(case, cfg.spec, prior, beta)
                fish_err = max(fish_err, abs(fm - fo) / max(1.0, abs(fo)))
        checks.append((f"lambda_{case.value}", lam_err, tol))
        checks.append((f"fisher_{case.value}", fish_err, 1e-6))
    return [(name, val, t, bool(val <= t)) for name, val, t in checks]


def cmd_verify(cfg: RunConfig, out: Path, args) -> dict:
    rows = verify_checks(cfg)
    write_csv(out / "verify.csv", ["check", "value", "tolerance", "passed"], rows)
    failed = [r[0] for r in rows if not r[3]]
    if failed:
        raise NumericalFailure(f"verify failed: {', '.join(failed)}")
    return {"checks": len(rows), "failed": 0}


COMMANDS = {
    "forward": cmd_forward,
    "inverse": cmd_inverse,
    "design": cmd_design,
    "noise-study": cmd_noise_study,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfoed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="RNG seed (overrides config)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "inverse":
            p.add_argument("--method", choices=["standard", "ecfm", "both"], default="both")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be >= 0")
            cfg.seed = args.seed
        out = args.out if args.out is not None else Path(cfg.output)
        summary = COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CfoedError, NumericalFailure, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(summary, indent=2, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
