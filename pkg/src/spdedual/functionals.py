"""Monte Carlo estimates of the payoff, the Lagrangian and the dual functionals.

All functionals are evaluated on a shared ``BrownianEnsemble`` (common random
numbers).  Discrete conventions, with ``w`` the trapezoidal weights and sums
over time levels ``k = 0 .. nt - 1``::

    J    = dt sum_k <w, F(X_k) + G(u_k)>
    L    = dt sum_k <w, F(X°_k) + G(u_k) + p_k C(u_k) - X°_k F_X(X°_k)>
           - dt sum_k (<X°_k, A* p_k> - <p_k, A X°_k>)_interior
           + <w, p_0 xi> + sum_j w_j sum_k p_kj sigma_kj dB_k
    dual_L   replaces G + p C by the pointwise Hamiltonian H(p)
    dual_L1  replaces <w, G + p C> by the averaged Hamiltonian calH(p)

Paths are processed in fixed-size chunks; results are assembled in path order,
so estimates do not depend on the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlField, SchemeConfig, _check_ensemble, check_control, solve_forward_paths
from .errors import FeasibilityError, GridError
from .hamiltonian import maximize_averaged, maximize_pointwise
from .mesh import apply_adjoint, apply_forward
from .stochastic import BrownianEnsemble, FieldPath

__all__ = [
    "Estimate",
    "DualPair",
    "payoff_J",
    "payoff_samples",
    "lagrangian_L",
    "dual_L",
    "dual_L1",
    "difference_estimate",
    "CHUNK_PATHS",
]

CHUNK_PATHS = 64


@dataclass(frozen=True)
class Estimate:
    """Sample mean with standard error ``std / sqrt(num_paths)``."""

    mean: float
    std_error: float
    num_paths: int
    seed: int
    samples: np.ndarray = field(default=None, repr=False, compare=False)

    @classmethod
    def from_samples(cls, values, seed: int) -> "Estimate":
        v = np.asarray(values, dtype=float).ravel()
        n = v.size
        mean = math.fsum(v) / n
        if n > 1:
            var = math.fsum((v - mean) ** 2) / (n - 1)
            se = math.sqrt(var / n)
        else:
            se = 0.0
        return cls(mean, se, n, int(seed), v)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "num_paths": self.num_paths, "seed": self.seed}


def difference_estimate(a: Estimate, b: Estimate) -> Estimate:
    """Path-wise difference ``a - b`` of two estimates on the same ensemble."""
    if a.samples is None or b.samples is None or a.samples.shape != b.samples.shape:
        raise ValueError("difference needs per-path samples from the same ensemble")
    return Estimate.from_samples(a.samples - b.samples, a.seed)


@dataclass(frozen=True, eq=False)
class DualPair:
    """Element of the dual feasible set: a state field and its adjoint.

    ``X`` and ``p`` are single deterministic paths (K, N) or ensembles
    (P, K, N) aligned with the Brownian paths.  Build through
    ``duality.make_dual_feasible``, which fills ``certificate``.
    """

    X: FieldPath
    p: FieldPath
    certificate: dict

    @property
    def is_ensemble(self) -> bool:
        return self.X.is_ensemble

    @property
    def feasible(self) -> bool:
        return bool(self.certificate.get("feasible", False))


def _chunks(num_paths: int):
    return [np.arange(s, min(s + CHUNK_PATHS, num_paths)) for s in range(0, num_paths, CHUNK_PATHS)]


def _map_chunks(fn, num_paths: int, threads: int = 1) -> np.ndarray:
    chunks = _chunks(num_paths)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return parts


def _time_space_sum(problem, values) -> np.ndarray:
    """``dt sum_k <w, values_k>`` over the leading path axis; values (S, nt, N)."""
    return problem.dt * np.sum(values @ problem.grid.quadrature_weight, axis=-1)


def _control_term(problem, u, p=None) -> np.ndarray:
    nt = problem.num_steps
    t = problem.times[:nt, None]
    x = problem.grid.coordinates
    val = problem.G(t, x, u[:, :nt])
    if p is not None:
        val = val + p[:, :nt] * problem.C(t, x, u[:, :nt])
    return _time_space_sum(problem, np.broadcast_to(val, (max(u.shape[0], 1 if p is None else p.shape[0]), nt, x.shape[0])))


def payoff_samples(problem, control: ControlField, ensemble: BrownianEnsemble, scheme: SchemeConfig | None = None,
                   threads: int = 1, keep_mean: bool = False):
    """Per-path payoff values, and optionally the ensemble-mean state path."""
    _check_ensemble(problem, ensemble)
    check_control(problem, control)
    nt = problem.num_steps
    t = problem.times[:nt, None]
    x = problem.grid.coordinates
    u = control.values if control.is_ensemble else control.values[None]
    g_det = None if control.is_ensemble else _control_term(problem, u)[0]

    def run(idx):
        X = solve_forward_paths(problem, control, ensemble, idx, scheme, _checked=True)
        vals = _time_space_sum(problem, problem.F(t, x, X[:, :nt]))
        vals = vals + (g_det if g_det is not None else _control_term(problem, u[idx]))
        return vals, (X.sum(axis=0) if keep_mean else None)

    parts = _map_chunks(run, ensemble.num_paths, threads)
    samples = np.concatenate([v for v, _ in parts])
    mean_X = None
    if keep_mean:
        # chunk sums added in a fixed order
        total = np.zeros_like(parts[0][1])
        for _, s in parts:
            total += s
        mean_X = total / ensemble.num_paths
    return samples, mean_X


def payoff_J(problem, control: ControlField, ensemble: BrownianEnsemble, scheme: SchemeConfig | None = None,
             threads: int = 1) -> Estimate:
    """Monte Carlo estimate of the expected payoff under ``control``."""
    samples, _ = payoff_samples(problem, control, ensemble, scheme, threads)
    return Estimate.from_samples(samples, ensemble.master_seed)


def _check_pair(problem, pair: DualPair, ensemble: BrownianEnsemble) -> None:
    if not isinstance(pair, DualPair) or not pair.feasible:
        raise FeasibilityError("dual pair is not certified feasible; build it with make_dual_feasible")
    if not pair.X.grid.same_as(problem.grid):
        raise GridError("dual pair lives on a different grid than the problem")
    _check_ensemble(problem, ensemble)
    if pair.is_ensemble and pair.X.values.shape[0] != ensemble.num_paths:
        raise FeasibilityError(
            f"ensemble-valued pair has {pair.X.values.shape[0]} paths, ensemble has {ensemble.num_paths}"
        )


def _static_terms(problem, X, p) -> np.ndarray:
    """Control-free, noise-free part of the Lagrangian for (S, K, N) fields."""
    nt = problem.num_steps
    t = problem.times[:nt, None]
    x = problem.grid.coordinates
    Xk, pk = X[:, :nt], p[:, :nt]
    state = _time_space_sum(problem, problem.F(t, x, Xk) - Xk * problem.F_X(t, x, Xk))
    w_int = np.where(problem.grid.interior_mask, problem.grid.quadrature_weight, 0.0)
    pair = problem.operators
    comm = (Xk * apply_adjoint(pair, pk) - pk * apply_forward(pair, Xk)) @ w_int
    initial = (p[:, 0] * problem.xi_values) @ problem.grid.quadrature_weight
    return state - problem.dt * comm.sum(axis=-1) + initial


def _ito_terms(problem, p, dB) -> np.ndarray:
    """``sum_j w_j sum_k p_kj sigma_kj dB_k`` per path; p is (S, K, N), S in {1, P}."""
    nt = problem.num_steps
    ps = p[:, :nt] * problem.sigma_table[:nt]
    if ps.shape[0] == 1:
        inner = dB @ ps[0]
    else:
        inner = np.einsum("pk,pkj->pj", dB, ps)
    return inner @ problem.grid.quadrature_weight


def _pair_samples(problem, pair: DualPair, ensemble: BrownianEnsemble, control_term, threads: int) -> np.ndarray:
    """Per-path Lagrangian-type values; ``control_term(p, idx)`` returns (S,) values."""
    X, p = pair.X.values, pair.p.values
    if not pair.is_ensemble:
        X3, p3 = X[None], p[None]
        fixed = _static_terms(problem, X3, p3)[0] + control_term(p3, None)[0]

        def run(idx):
            return fixed + _ito_terms(problem, p3, ensemble.increments[idx])
    else:
        def run(idx):
            Xc, pc = X[idx], p[idx]
            return (_static_terms(problem, Xc, pc) + control_term(pc, idx)
                    + _ito_terms(problem, pc, ensemble.increments[idx]))

    return np.concatenate(_map_chunks(run, ensemble.num_paths, threads))


def lagrangian_L(problem, control: ControlField, dual_pair: DualPair, ensemble: BrownianEnsemble,
                 threads: int = 1) -> Estimate:
    """Monte Carlo estimate of the Lagrangian of ``control`` at a feasible dual pair."""
    _check_pair(problem, dual_pair, ensemble)
    check_control(problem, control)
    u = control.values if control.is_ensemble else control.values[None]

    def term(p, idx):
        return _control_term(problem, u[idx] if control.is_ensemble else u, p)

    if control.is_ensemble and not dual_pair.is_ensemble:
        # deterministic pair, random control: evaluate per chunk
        X3, p3 = dual_pair.X.values[None], dual_pair.p.values[None]
        fixed = _static_terms(problem, X3, p3)[0]

        def run(idx):
            return (fixed + _control_term(problem, u[idx], p3)
                    + _ito_terms(problem, p3, ensemble.increments[idx]))

        samples = np.concatenate(_map_chunks(run, ensemble.num_paths, threads))
    else:
        samples = _pair_samples(problem, dual_pair, ensemble, term, threads)
    return Estimate.from_samples(samples, ensemble.master_seed)


def _H_term(problem, p) -> np.ndarray:
    nt = problem.num_steps
    H, _, _ = maximize_pointwise(problem, problem.times[:nt, None], problem.grid.coordinates, p[:, :nt])
    return _time_space_sum(problem, H)


def _H1_term(problem, p) -> np.ndarray:
    nt = problem.num_steps
    out = np.empty(p.shape[0])
    for i, pp in enumerate(p):
        H, _, _ = maximize_averaged(problem, problem.times[:nt], pp[:nt])
        out[i] = problem.dt * math.fsum(H)
    return out


def dual_L(problem, dual_pair: DualPair, ensemble: BrownianEnsemble, threads: int = 1) -> Estimate:
    """Monte Carlo estimate of the dual functional with the pointwise Hamiltonian."""
    _check_pair(problem, dual_pair, ensemble)
    samples = _pair_samples(problem, dual_pair, ensemble, lambda p, idx: _H_term(problem, p), threads)
    return Estimate.from_samples(samples, ensemble.master_seed)


def dual_L1(problem, dual_pair: DualPair, ensemble: BrownianEnsemble, threads: int = 1) -> Estimate:
    """Monte Carlo estimate of the dual functional with the space-averaged Hamiltonian."""
    _check_pair(problem, dual_pair, ensemble)
    samples = _pair_samples(problem, dual_pair, ensemble, lambda p, idx: _H1_term(problem, p), threads)
    return Estimate.from_samples(samples, ensemble.master_seed)
