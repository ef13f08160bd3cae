"""Dual feasible pairs, weak-duality certificates and the strong-duality sweep.

The sweep alternates a forward ensemble solve, a backward adjoint solve and a
pointwise (or space-averaged) maximization of the Hamiltonian, mixing each new
maximizer into the current control with a relaxation weight.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlField, SchemeConfig, adjoint_residual, adjoint_values, solve_forward_paths
from .errors import ConfigError, FeasibilityError, GridError
from .functionals import (
    DualPair,
    Estimate,
    difference_estimate,
    dual_L,
    dual_L1,
    payoff_J,
    payoff_samples,
)
from .hamiltonian import (
    averaged_condition_residual,
    max_condition_residual,
    maximize_averaged,
    maximize_pointwise,
)
from .stochastic import BrownianEnsemble, FieldPath

__all__ = [
    "IterationConfig",
    "DualityReport",
    "make_dual_feasible",
    "interpolant_state",
    "certify_upper_bound",
    "solve_strong",
    "solve_strong_partial",
    "random_piecewise_controls",
    "TRACE_COLUMNS",
]

TRACE_COLUMNS = ("iteration", "J_mean", "J_se", "L_mean", "L_se", "gap", "control_change", "residual")

_EXACT_TOL = 1e-12


@dataclass(frozen=True)
class IterationConfig:
    max_iterations: int = 200
    control_change_tolerance: float = 1e-7
    relaxation: float = 0.5
    mode: str = "mean-field"

    def __post_init__(self):
        if not 0.0 < self.relaxation <= 1.0:
            raise ConfigError(f"relaxation must lie in (0, 1], got {self.relaxation}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if not self.control_change_tolerance > 0:
            raise ConfigError("control_change_tolerance must be positive")
        if self.mode not in ("mean-field", "per-path"):
            raise ConfigError(f"mode must be 'mean-field' or 'per-path', got {self.mode!r}")


@dataclass(frozen=True, eq=False)
class DualityReport:
    """Outcome of a weak-duality certificate or a strong-duality sweep.

    ``gap`` is ``dual_estimate.mean - primal_estimate.mean``; ``gap_std_error``
    is the standard error of the path-wise difference under common random
    numbers.
    """

    primal_estimate: Estimate
    dual_estimate: Estimate
    gap: float
    relative_gap: float
    max_condition_residual: float
    iterations: int
    converged: bool
    per_iteration_trace: list = field(default_factory=list)
    gap_std_error: float = 0.0
    mode: str = "mean-field"
    admissible: bool = True
    violations: list = field(default_factory=list)
    control: ControlField | None = field(default=None, repr=False)
    pair: DualPair | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "primal_estimate": self.primal_estimate.to_dict(),
            "dual_estimate": self.dual_estimate.to_dict(),
            "gap": self.gap,
            "gap_std_error": self.gap_std_error,
            "relative_gap": self.relative_gap,
            "max_condition_residual": self.max_condition_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "mode": self.mode,
            "admissible": self.admissible,
            "violations": list(self.violations),
            "per_iteration_trace": [dict(r) for r in self.per_iteration_trace],
        }

    def trace_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in self.per_iteration_trace:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in TRACE_COLUMNS])
        return buf.getvalue()


def _report(J: Estimate, L: Estimate, **kw) -> DualityReport:
    gap = L.mean - J.mean
    try:
        se = difference_estimate(L, J).std_error
    except ValueError:
        se = math.hypot(L.std_error, J.std_error)
    return DualityReport(J, L, gap, gap / (1.0 + abs(J.mean)), gap_std_error=se, **kw)


def interpolant_state(problem) -> np.ndarray:
    """Deterministic state field equal to ``xi`` inside and to ``eta`` on the boundary."""
    K = problem.num_steps + 1
    X = np.broadcast_to(problem.xi_values, (K, problem.grid.num_nodes)).copy()
    b = problem.grid.boundary_mask
    X[:, b] = problem.boundary_table[:, b]
    return X


def make_dual_feasible(problem, X_candidate, scheme: SchemeConfig | None = None) -> DualPair:
    """Certify ``X_candidate`` against the initial and boundary data and attach its adjoint.

    Values within ``1e-12`` (relative) of the data are snapped to it exactly,
    which absorbs the rounding of ensemble averages.

    An ensemble candidate (P, K, N) is accepted as long as it meets the data,
    but its adjoint then anticipates the noise and the upper-bound property
    is only guaranteed for deterministic candidates.  The drivers pass
    forward-solution ensembles only.
    """
    if isinstance(X_candidate, FieldPath):
        if not X_candidate.grid.same_as(problem.grid):
            raise GridError("candidate state lives on a different grid")
        X = X_candidate.values
    else:
        X = X_candidate
    X = np.array(X, dtype=float)
    K, N = problem.num_steps + 1, problem.grid.num_nodes
    if X.shape[-2:] != (K, N) or X.ndim not in (2, 3):
        raise GridError(f"candidate state has shape {X.shape}, expected (.., {K}, {N})")
    if not np.all(np.isfinite(X)):
        raise FeasibilityError("candidate state is not finite")

    xi = problem.xi_values
    eta = problem.boundary_table
    bmask = problem.grid.boundary_mask
    scale = max(1.0, float(np.max(np.abs(xi))), float(np.max(np.abs(eta[:, bmask]), initial=0.0)))
    tol = _EXACT_TOL * scale

    init_err = np.abs(X[..., 0, :] - xi)
    if np.max(init_err) > tol:
        node = int(np.unravel_index(np.argmax(init_err), init_err.shape)[-1])
        raise FeasibilityError(
            f"initial condition violated at time level 0, node {node} (error {np.max(init_err):.3e})"
        )
    bnd_err = np.abs(X[..., :, bmask] - eta[:, bmask])
    if bnd_err.size and np.max(bnd_err) > tol:
        where = np.unravel_index(np.argmax(bnd_err), bnd_err.shape)
        node = int(np.flatnonzero(bmask)[where[-1]])
        raise FeasibilityError(
            f"boundary condition violated at time level {int(where[-2])}, node {node} (error {np.max(bnd_err):.3e})"
        )
    X[..., 0, :] = xi
    X[..., :, bmask] = eta[:, bmask]

    p = adjoint_values(problem, X, scheme)
    certificate = {
        "initial_residual": float(np.max(init_err)),
        "boundary_residual": float(np.max(bnd_err, initial=0.0)),
        "terminal_residual": float(np.max(np.abs(p[..., -1, :]))),
        "adjoint_boundary_residual": float(np.max(np.abs(p[..., :, bmask]), initial=0.0)),
        "adjoint_residual": adjoint_residual(problem, X, p, scheme),
        "feasible": True,
    }
    return DualPair(FieldPath(problem.grid, X, "state"), FieldPath(problem.grid, p, "adjoint"), certificate)


def certify_upper_bound(problem, dual_pair: DualPair, control_samples, ensemble: BrownianEnsemble,
                        scheme: SchemeConfig | None = None, threads: int = 1,
                        averaged: bool = False) -> DualityReport:
    """Check ``J(u) <= dual_L + 3 SE`` for every sampled control on common noise.

    SE is the standard error of the path-wise difference ``L - J``.  The
    reported primal estimate is the best sampled payoff.  With ``averaged``
    the bound uses the space-averaged Hamiltonian, which is valid for
    space-constant controls only.
    """
    if averaged:
        for i, u in enumerate(control_samples):
            if not u.is_space_constant:
                raise ConfigError(f"control sample {i} depends on space; the averaged bound needs space-constant controls")
    L = (dual_L1 if averaged else dual_L)(problem, dual_pair, ensemble, threads)
    best = None
    violations = []
    for i, u in enumerate(control_samples):
        J = payoff_J(problem, u, ensemble, scheme, threads)
        diff = difference_estimate(L, J)
        if J.mean > L.mean + 3.0 * diff.std_error:
            violations.append({"index": i, "J": J.mean, "L": L.mean, "std_error": diff.std_error})
        if best is None or J.mean > best.mean:
            best = J
    if best is None:
        raise ConfigError("no control samples given")
    return _report(best, L, max_condition_residual=float("nan"), iterations=0, converged=True,
                   mode="certificate", violations=violations, pair=dual_pair)


def random_piecewise_controls(problem, count: int, seed: int, blocks=(4, 4)) -> list:
    """Random admissible controls, constant on a (time blocks, space blocks) partition.

    Space-constant problems get one space block.  Block values are drawn
    uniformly from the control set with a generator seeded by ``seed``.
    """
    rng = np.random.default_rng(seed)
    nt_blk, nx_blk = blocks
    if problem.space_constant_controls:
        nx_blk = 1
    return [ControlField.piecewise_constant(problem, problem.control_set.sample(rng, (nt_blk, nx_blk)))
            for _ in range(count)]


def _initial_control(problem, partial: bool) -> ControlField:
    u0 = np.asarray(problem.default_control, dtype=float)
    cs = problem.control_set
    if not cs.contains(u0):
        u0 = cs.candidates()[0]
    return ControlField.constant(problem, u0)


def _check_concave(problem) -> None:
    if not problem.concave_in_X:
        raise FeasibilityError(f"problem {problem.name!r} is not certified concave in X; duality drivers refuse it")


def _sweep(problem, ensemble, config, scheme, threads, partial: bool) -> DualityReport:
    _check_concave(problem)
    config = config or IterationConfig()
    scheme = scheme or SchemeConfig()
    per_path = config.mode == "per-path"
    if partial and per_path:
        raise ConfigError("the space-averaged sweep supports mean-field mode only")
    omega = config.relaxation
    t_all = problem.times
    x = problem.grid.coordinates
    u = _initial_control(problem, partial)
    trace = []
    converged = False
    J = L = pair = None
    residual = float("nan")

    for m in range(config.max_iterations):
        if per_path:
            X_all = solve_forward_paths(problem, u, ensemble, scheme=scheme)
            samples, _ = payoff_samples(problem, u, ensemble, scheme, threads)
            pair = make_dual_feasible(problem, X_all, scheme)
        else:
            samples, X_mean = payoff_samples(problem, u, ensemble, scheme, threads, keep_mean=True)
            pair = make_dual_feasible(problem, X_mean, scheme)
        J = Estimate.from_samples(samples, ensemble.master_seed)
        p = pair.p.values
        if partial:
            L = dual_L1(problem, pair, ensemble, threads)
            _, u_star, _ = maximize_averaged(problem, t_all, p)
            u_star = ControlField.space_constant(problem, u_star).values
            residual = averaged_condition_residual(problem, u.values, p)
        else:
            L = dual_L(problem, pair, ensemble, threads)
            _, u_star, _ = maximize_pointwise(problem, t_all[:, None], x, p)
            residual = max_condition_residual(problem, u.values, p)
        u_new = (1.0 - omega) * u.values + omega * u_star
        change = float(np.max(np.abs(u_new - u.values)))
        trace.append({
            "iteration": m,
            "J_mean": J.mean,
            "J_se": J.std_error,
            "L_mean": L.mean,
            "L_se": L.std_error,
            "gap": L.mean - J.mean,
            "control_change": change,
            "residual": residual,
        })
        if change < config.control_change_tolerance:
            converged = True
            break
        u = ControlField(u_new, adapted=not per_path)

    return _report(J, L, max_condition_residual=residual, iterations=len(trace), converged=converged,
                   per_iteration_trace=trace, mode=("partial-" if partial else "") + config.mode,
                   admissible=not per_path, control=u, pair=pair)


def solve_strong(problem, ensemble: BrownianEnsemble, iteration_config: IterationConfig | None = None,
                 scheme: SchemeConfig | None = None, threads: int = 1) -> DualityReport:
    """Forward-backward sweep towards a control satisfying the pointwise maximum condition.

    In mean-field mode the adjoint is driven by the ensemble-mean state, so
    the adjoint and the control are deterministic.  Per-path mode solves one
    adjoint per Brownian path; the resulting controls anticipate the noise and
    the report marks them as not admissible.
    """
    return _sweep(problem, ensemble, iteration_config, scheme, threads, partial=False)


def solve_strong_partial(problem, ensemble: BrownianEnsemble, iteration_config: IterationConfig | None = None,
                         scheme: SchemeConfig | None = None, threads: int = 1) -> DualityReport:
    """Sweep over space-constant controls using the averaged maximum condition."""
    return _sweep(problem, ensemble, iteration_config, scheme, threads, partial=True)
