"""Command-line interface.

Exit codes: 0 success, 2 configuration or catalog error, 3 numerical failure
(solver failure, non-converged sweep, Green check above tolerance),
4 weak-duality violation found.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .catalog import get_problem, list_problems
from .config import KEYS, OUTPUT_DIR_ENV, RunConfig, load_config
from .duality import (
    IterationConfig,
    certify_upper_bound,
    make_dual_feasible,
    random_piecewise_controls,
    solve_strong,
    solve_strong_partial,
)
from .dynamics import ControlField, SchemeConfig, solve_adjoint, solve_forward
from .errors import CatalogError, ConfigError, SolverError, SpdeDualError
from .functionals import payoff_J, payoff_samples
from .mesh import OperatorCoefficients, assemble_operators, build_grid, green_residual
from .stochastic import sample_ensemble

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VIOLATION = 0, 2, 3, 4

# convenience flags -> dotted keys
_FLAGS = {
    "problem": "problem.name",
    "nx": "grid.nx",
    "nt": "time.nt",
    "paths": "mc.paths",
    "seed": "mc.seed",
    "threads": "mc.threads",
    "theta": "scheme.theta",
    "resolution": "control.resolution",
    "relaxation": "iter.relaxation",
    "mode": "iter.mode",
    "output_dir": "output.dir",
}


def _keys_help() -> str:
    lines = ["config keys (file lines 'key = value'; later sources override earlier ones):"]
    lines += [f"  {k:<22} {desc}" for k, (_, _, desc) in KEYS.items()]
    lines.append("  problem.<param>        catalog parameter override, e.g. problem.q = 2")
    lines.append(f"the default output directory comes from ${OUTPUT_DIR_ENV} when set")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="flat key=value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    for flag, key in _FLAGS.items():
        common.add_argument("--" + flag.replace("_", "-"), dest=flag, default=None, help=f"same as {key}")

    parser = argparse.ArgumentParser(
        prog="spdedual",
        description="Primal and dual bounds for optimal control of the stochastic heat equation.",
        epilog=_keys_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"spdedual {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub_kw = {"epilog": _keys_help(), "formatter_class": argparse.RawDescriptionHelpFormatter}
    sub.add_parser("list", help="list catalog problems and parameters")
    g = sub.add_parser("green-check", parents=[common], **sub_kw, help="discrete Green identity on random fields")
    g.add_argument("--trials", type=int, default=100)
    s = sub.add_parser("simulate", parents=[common], **sub_kw, help="state and adjoint along one path, payoff estimate")
    s.add_argument("--control", type=float, default=None, help="constant control value (default: catalog default)")
    s.add_argument("--path-index", type=int, default=0)
    b = sub.add_parser("bound", parents=[common], **sub_kw, help="weak-duality certificate over random controls")
    b.add_argument("--samples", type=int, default=None, help="same as bound.samples")
    sub.add_parser("gap", parents=[common], **sub_kw, help="strong-duality sweep and duality gap")
    w = sub.add_parser("sweep", parents=[common], **sub_kw, help="gap under simultaneous refinement")
    w.add_argument("--levels", type=int, default=None, help="same as sweep.levels")
    return parser


def _config_from_args(args) -> RunConfig:
    sets = list(args.set)
    for flag, key in _FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            sets.append(f"{key}={v}")
    for flag, key in (("samples", "bound.samples"), ("levels", "sweep.levels")):
        v = getattr(args, flag, None)
        if v is not None:
            sets.append(f"{key}={v}")
    return load_config(args.config, sets)


def _problem(cfg: RunConfig):
    return get_problem(cfg.problem, cfg.problem_overrides())


def _scheme(cfg: RunConfig) -> SchemeConfig:
    return SchemeConfig(theta=cfg.theta)


def _ensemble(problem, cfg: RunConfig, paths: int | None = None):
    return sample_ensemble(problem.T, problem.num_steps, paths or cfg.paths, cfg.seed)


def _out_path(cfg: RunConfig, name: str) -> str:
    d = cfg.resolved_output_dir
    os.makedirs(d, exist_ok=True)
    return os.path.join(d, name)


def _write_json(cfg: RunConfig, name: str, report: dict) -> str | None:
    if "json" not in cfg.output_formats:
        return None
    path = _out_path(cfg, name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return path


def _envelope(cfg: RunConfig, report_type: str, **body) -> dict:
    return {"report_type": report_type, "version": __version__, "config": cfg.to_dict(), **body}


def cmd_list(out=None) -> int:
    out = out or sys.stdout
    for name, info in list_problems().items():
        out.write(f"{name}: {info['description']}\n")
        for pname, p in info["parameters"].items():
            out.write(f"    {pname} = {p['default']}  {p['description']}\n")
    return EXIT_OK


def cmd_green_check(cfg: RunConfig, trials: int = 100, out=None) -> int:
    out = out or sys.stdout
    """Green identity on random interior-supported fields with random admissible coefficients."""
    problem = _problem(cfg)
    grid = build_grid(problem.grid.dimension, problem.grid.extents, problem.grid.nodes_per_axis)
    rng = np.random.default_rng(cfg.seed)
    d = grid.dimension
    worst = 0.0
    for _ in range(trials):
        m = rng.normal(size=(grid.num_nodes, d, d))
        a = m @ np.swapaxes(m, 1, 2)
        coeffs = OperatorCoefficients(a, rng.normal(size=(grid.num_nodes, d)))
        pair = assemble_operators(grid, coeffs)
        X = np.where(grid.interior_mask, rng.normal(size=grid.num_nodes), 0.0)
        p = np.where(grid.interior_mask, rng.normal(size=grid.num_nodes), 0.0)
        r = abs(green_residual(pair, X, p)) / (np.linalg.norm(X) * np.linalg.norm(p))
        worst = max(worst, r)
    worst = float(worst)
    ok = bool(worst <= 1e-12)
    report = _envelope(cfg, "green-check", trials=trials, max_normalized_residual=worst, passed=ok)
    path = _write_json(cfg, "green_check.json", report)
    out.write(f"green-check: {trials} trials, max normalized residual {worst:.3e} ({'ok' if ok else 'FAIL'})\n")
    if path:
        out.write(f"report: {path}\n")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_simulate(cfg: RunConfig, control_value=None, path_index: int = 0, out=None) -> int:
    out = out or sys.stdout
    problem = _problem(cfg)
    ensemble = _ensemble(problem, cfg)
    u0 = problem.default_control if control_value is None else (control_value,)
    control = ControlField.constant(problem, u0)
    scheme = _scheme(cfg)
    X = solve_forward(problem, control, ensemble, path_index, scheme)
    p = solve_adjoint(problem, X, scheme)
    J = payoff_J(problem, control, ensemble, scheme, cfg.threads)
    files = {}
    if "csv" in cfg.output_formats:
        files["state_csv"] = _out_path(cfg, "state.csv")
        files["adjoint_csv"] = _out_path(cfg, "adjoint.csv")
        X.to_csv(files["state_csv"])
        p.to_csv(files["adjoint_csv"])
    report = _envelope(cfg, "simulate", control=list(map(float, u0)), path_index=path_index,
                       estimates={"J": J.to_dict()}, files=sorted(files.values()))
    path = _write_json(cfg, "simulate.json", report)
    out.write(f"J = {J.mean:.10g} +/- {J.std_error:.3g} ({J.num_paths} paths)\n")
    if path:
        out.write(f"report: {path}\n")
    return EXIT_OK


def cmd_bound(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    """Dual pair from the mean forward state under the default control, then random controls."""
    problem = _problem(cfg)
    ensemble = _ensemble(problem, cfg)
    scheme = _scheme(cfg)
    u0 = ControlField.constant(problem, problem.default_control)
    _, X_mean = payoff_samples(problem, u0, ensemble, scheme, cfg.threads, keep_mean=True)
    pair = make_dual_feasible(problem, X_mean, scheme)
    controls = random_piecewise_controls(problem, cfg.samples, cfg.seed + 1)
    averaged = problem.space_constant_controls
    rep = certify_upper_bound(problem, pair, controls, ensemble, scheme, cfg.threads, averaged=averaged)
    body = rep.to_dict()
    report = _envelope(cfg, "bound", estimates={"J_best": body.pop("primal_estimate"), "L": body.pop("dual_estimate")},
                       gap=body.pop("gap"), samples=cfg.samples, averaged=averaged, **body)
    path = _write_json(cfg, "bound.json", report)
    out.write(f"bound: L = {rep.dual_estimate.mean:.10g}, best J = {rep.primal_estimate.mean:.10g}, "
              f"{len(rep.violations)} violations over {cfg.samples} controls\n")
    if path:
        out.write(f"report: {path}\n")
    return EXIT_VIOLATION if rep.violations else EXIT_OK


def _run_gap(problem, cfg: RunConfig, ensemble):
    partial = cfg.mode == "partial" or (cfg.mode == "auto" and problem.space_constant_controls)
    mode = "mean-field" if cfg.mode in ("auto", "partial") else cfg.mode
    it = IterationConfig(cfg.max_iterations, cfg.tolerance, cfg.relaxation, mode)
    driver = solve_strong_partial if partial else solve_strong
    return driver(problem, ensemble, it, _scheme(cfg), cfg.threads)


def cmd_gap(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    problem = _problem(cfg)
    ensemble = _ensemble(problem, cfg)
    rep = _run_gap(problem, cfg, ensemble)
    trace_path = None
    if "csv" in cfg.output_formats:
        trace_path = _out_path(cfg, "gap_trace.csv")
        with open(trace_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(rep.trace_csv())
    body = rep.to_dict()
    report = _envelope(cfg, "gap", estimates={"J": body.pop("primal_estimate"), "L": body.pop("dual_estimate")},
                       gap=body.pop("gap"), trace_path=os.path.basename(trace_path) if trace_path else None, **body)
    path = _write_json(cfg, "gap.json", report)
    out.write(f"gap: J = {rep.primal_estimate.mean:.10g}, L = {rep.dual_estimate.mean:.10g}, "
              f"relative gap {rep.relative_gap:.3e}, residual {rep.max_condition_residual:.3e}, "
              f"{rep.iterations} iterations, {'converged' if rep.converged else 'NOT converged'}\n")
    if path:
        out.write(f"report: {path}\n")
    return EXIT_OK if rep.converged else EXIT_NUMERIC


SWEEP_COLUMNS = ("level", "nx", "nt", "paths", "J", "L", "gap", "relative_gap")


def cmd_sweep(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    """Gap at refinement levels: nodes per axis x2 (intervals doubled), steps x4, paths x4."""
    base = _problem(cfg)
    nx0 = base.grid.nodes_per_axis[0]
    nt0 = base.num_steps
    rows = []
    converged = True
    for level in range(cfg.levels):
        nx = (nx0 - 1) * 2 ** level + 1
        nt = nt0 * 4 ** level
        paths = cfg.paths * 4 ** level
        lcfg = cfg.with_values(nx=nx, nt=nt, paths=paths)
        problem = _problem(lcfg)
        rep = _run_gap(problem, lcfg, _ensemble(problem, lcfg))
        converged &= rep.converged
        rows.append((level, nx, nt, paths, rep.primal_estimate.mean, rep.dual_estimate.mean, rep.gap,
                     rep.relative_gap))
        out.write(f"level {level}: nx={nx} nt={nt} paths={paths} relative gap {rep.relative_gap:.3e}\n")
    if "csv" in cfg.output_formats:
        path = _out_path(cfg, "sweep.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for r in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    report = _envelope(cfg, "sweep", rows=[dict(zip(SWEEP_COLUMNS, r)) for r in rows], converged=converged)
    _write_json(cfg, "sweep.json", report)
    return EXIT_OK if converged else EXIT_NUMERIC


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "list":
            return cmd_list()
        cfg = _config_from_args(args)
        if args.command == "green-check":
            return cmd_green_check(cfg, args.trials)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.control, args.path_index)
        if args.command == "bound":
            return cmd_bound(cfg)
        if args.command == "gap":
            return cmd_gap(cfg)
        return cmd_sweep(cfg)
    except (ConfigError, CatalogError) as exc:
        print(f"spdedual: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SpdeDualError, FloatingPointError) as exc:
        print(f"spdedual: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
