"""Forward controlled stochastic heat equation and backward adjoint equation.

Forward, on interior nodes::

    X_{k+1} = X_k + dt [theta A X_{k+1} + (1 - theta) A X_k + C(t_k, x, u_k)] + sigma(t_k, x) dB_k

with ``X_0 = xi`` and boundary values ``eta(t_k)``.  Backward, with
``p_N = 0`` and ``p = 0`` on the boundary::

    p_k = p_{k+1} + dt [theta A* p_k + (1 - theta) A* p_{k+1} + F_X(t_{k+1}, x, X_{k+1})]
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ControlError, GridError, SpdeDualError
from .stochastic import BrownianEnsemble, FieldPath

__all__ = [
    "SchemeConfig",
    "ControlField",
    "solve_forward",
    "solve_forward_paths",
    "solve_adjoint",
    "adjoint_values",
    "step_operator",
    "adjoint_residual",
    "summation_by_parts_residual",
]


@dataclass(frozen=True)
class SchemeConfig:
    """``theta`` weights the implicit part of the drift; noise and ``C`` stay explicit.

    ``max_linear_iterations`` caps the iterative-refinement sweeps applied when
    a direct solve misses ``linear_solver_tolerance``.
    """

    theta: float = 1.0
    linear_solver_tolerance: float = 1e-10
    max_linear_iterations: int = 3

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise SpdeDualError(f"theta must lie in [0, 1], got {self.theta}")
        if not self.linear_solver_tolerance > 0:
            raise SpdeDualError("linear_solver_tolerance must be positive")
        if self.max_linear_iterations < 0:
            raise SpdeDualError("max_linear_iterations must be nonnegative")


@dataclass(frozen=True, eq=False)
class ControlField:
    """Control values on every (time level, node).

    ``values`` has shape (K, N, k) for a deterministic control, or
    (P, K, N, k) for one control path per Brownian path, with K = num_steps + 1.
    ``adapted`` is False for controls built from future noise (per-path
    adjoint diagnostics); such controls are not admissible.
    """

    values: np.ndarray
    adapted: bool = True

    @property
    def is_ensemble(self) -> bool:
        return self.values.ndim == 4

    @property
    def is_space_constant(self) -> bool:
        v = self.values
        return bool(np.all(v == v[..., :1, :]))

    @classmethod
    def constant(cls, problem, value) -> "ControlField":
        k = problem.control_dim
        v = np.broadcast_to(np.asarray(value, dtype=float).reshape(-1),
                            (problem.num_steps + 1, problem.grid.num_nodes, k))
        return cls(np.ascontiguousarray(v))

    @classmethod
    def space_constant(cls, problem, values) -> "ControlField":
        """From a time series of shape (K,) or (K, k): one control for the whole domain."""
        v = np.asarray(values, dtype=float)
        v = v.reshape(v.shape[0], -1)
        return cls(np.ascontiguousarray(np.broadcast_to(v[:, None, :], (v.shape[0], problem.grid.num_nodes, v.shape[1]))))

    @classmethod
    def piecewise_constant(cls, problem, block_values) -> "ControlField":
        """Piecewise-constant control from a (time blocks, space blocks[, k]) table.

        Space blocks split the first coordinate axis into equal pieces.
        """
        b = np.asarray(block_values, dtype=float)
        if b.ndim == 2:
            b = b[..., None]
        nt_blk, nx_blk = b.shape[:2]
        t = problem.times / problem.T
        x = problem.grid.coordinates[:, 0]
        lo, hi = problem.grid.extents[0]
        ti = np.minimum((t * nt_blk).astype(int), nt_blk - 1)
        xi = np.minimum(((x - lo) / (hi - lo) * nx_blk).astype(int), nx_blk - 1)
        return cls(np.ascontiguousarray(b[ti[:, None], xi[None, :]]))


def check_control(problem, control: ControlField, strict: bool = False) -> None:
    K, N, k = problem.num_steps + 1, problem.grid.num_nodes, problem.control_dim
    if control.values.shape[-3:] != (K, N, k):
        raise ControlError(f"control shape {control.values.shape} does not match (.., {K}, {N}, {k})")
    if not control.adapted and strict:
        raise ControlError("control is not adapted to the Brownian filtration")
    if not problem.control_set.contains(control.values):
        raise ControlError("control takes values outside the control set")


def step_operator(problem, scheme: SchemeConfig, adjoint: bool = False) -> kernels.StepOperator:
    key = ("step", scheme.theta, adjoint, scheme.linear_solver_tolerance, scheme.max_linear_iterations)
    op = problem._cache.get(key)
    if op is None:
        op = kernels.make_step_operator(problem.operators, problem.dt, scheme.theta, adjoint,
                                        scheme.linear_solver_tolerance, scheme.max_linear_iterations)
        problem._cache[key] = op
    return op


def _check_ensemble(problem, ensemble: BrownianEnsemble) -> None:
    if ensemble.num_steps != problem.num_steps or not math.isclose(ensemble.T, problem.T, rel_tol=1e-12):
        raise SpdeDualError(
            f"ensemble has T={ensemble.T}, {ensemble.num_steps} steps; problem has T={problem.T}, {problem.num_steps} steps"
        )


def control_source(problem, control: ControlField, paths=None) -> np.ndarray:
    """``dt * C(t_k, x, u_k)`` on interior nodes, shape (S, num_steps, N)."""
    u = control.values
    if control.is_ensemble:
        u = u[paths] if paths is not None else u
    else:
        u = u[None]
    nt = problem.num_steps
    t = problem.times[:nt, None]
    c = problem.C(t, problem.grid.coordinates, u[:, :nt])
    return np.where(problem.grid.interior_mask, problem.dt * c, 0.0)


def solve_forward_paths(problem, control: ControlField, ensemble: BrownianEnsemble, paths=None,
                        scheme: SchemeConfig | None = None, strict: bool = False,
                        backend: str | None = None, _checked: bool = False) -> np.ndarray:
    """State trajectories for the selected paths, shape (P, num_steps + 1, N)."""
    scheme = scheme or SchemeConfig()
    if not _checked:
        _check_ensemble(problem, ensemble)
        check_control(problem, control, strict)
    idx = np.arange(ensemble.num_paths)[paths if paths is not None else slice(None)]
    idx = np.atleast_1d(idx)
    dB = ensemble.increments[idx]
    src = control_source(problem, control, idx if control.is_ensemble else None)
    start = np.broadcast_to(problem.xi_values, (len(idx), problem.grid.num_nodes))
    return kernels.march(step_operator(problem, scheme), start, problem.num_steps, src,
                         problem.sigma_table[:-1], dB, problem.boundary_table, backend=backend)


def solve_forward(problem, control_path: ControlField, ensemble: BrownianEnsemble, path_index: int,
                  scheme: SchemeConfig | None = None, strict: bool = False) -> FieldPath:
    """State ``X`` along one Brownian path."""
    X = solve_forward_paths(problem, control_path, ensemble, [path_index], scheme, strict)
    return FieldPath(problem.grid, X[0], "state")


def adjoint_values(problem, X, scheme: SchemeConfig | None = None, backend: str | None = None) -> np.ndarray:
    """Adjoint trajectories for state values (K, N) or (P, K, N)."""
    scheme = scheme or SchemeConfig()
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    X3 = X[None] if single else X
    nt, N = problem.num_steps, problem.grid.num_nodes
    if X3.shape[1:] != (nt + 1, N):
        raise GridError(f"state shape {X.shape} does not match ({nt + 1}, {N})")
    fx = problem.F_X(problem.times[1:, None], problem.grid.coordinates, X3[:, 1:])
    src = np.where(problem.grid.interior_mask, problem.dt * fx, 0.0)[:, ::-1]
    q = kernels.march(step_operator(problem, scheme, adjoint=True), np.zeros((X3.shape[0], N)), nt,
                      np.ascontiguousarray(src), backend=backend)
    p = np.ascontiguousarray(q[:, ::-1])
    return p[0] if single else p


def solve_adjoint(problem, state_path, scheme: SchemeConfig | None = None) -> FieldPath:
    """Adjoint ``p`` driven by ``F_X`` along ``state_path`` (single path or ensemble)."""
    if isinstance(state_path, FieldPath):
        if not state_path.grid.same_as(problem.grid):
            raise GridError("state path lives on a different grid")
        X = state_path.values
    else:
        X = state_path
    return FieldPath(problem.grid, adjoint_values(problem, X, scheme), "adjoint")


def adjoint_residual(problem, X, p, scheme: SchemeConfig | None = None) -> float:
    """Max violation of the backward recurrence on interior nodes, scaled by dt."""
    scheme = scheme or SchemeConfig()
    X = np.asarray(X, dtype=float)
    p = np.asarray(p, dtype=float)
    op = step_operator(problem, scheme, adjoint=True)
    fx = problem.F_X(problem.times[1:, None], problem.grid.coordinates, X[..., 1:, :])
    pk = p[..., :-1, :].reshape(-1, problem.grid.num_nodes)
    pk1 = p[..., 1:, :].reshape(-1, problem.grid.num_nodes)
    lhs = (op.implicit @ pk.T).T
    rhs = (op.explicit @ pk1.T).T + problem.dt * fx.reshape(pk.shape)
    diff = (lhs - rhs)[:, problem.grid.interior_mask]
    return float(np.max(np.abs(diff), initial=0.0))


def summation_by_parts_residual(X, p) -> np.ndarray:
    """Node-wise residual of the discrete integration-by-parts identity.

    For state levels ``X_k`` and adjoint levels ``p_k`` with ``p_N = 0``::

        sum_k (p_{k+1} - p_k) X_k + sum_k p_{k+1} (X_{k+1} - X_k) + p_0 X_0 = 0

    Returns the left-hand side, shape (..., N).
    """
    X = np.asarray(X, dtype=float)
    p = np.asarray(p, dtype=float)
    dp = p[..., 1:, :] - p[..., :-1, :]
    dX = X[..., 1:, :] - X[..., :-1, :]
    return (dp * X[..., :-1, :]).sum(axis=-2) + (p[..., 1:, :] * dX).sum(axis=-2) + p[..., 0, :] * X[..., 0, :]
