"""Pointwise and space-averaged Hamiltonians and their maximizers.

The supremum over the control set is taken by exhaustive grid search, with an
optional golden-section polish around the best grid point for scalar
interval control sets.  No smoothness of ``G`` or ``C`` in ``u`` is assumed,
so the polish is only accepted where it strictly improves the grid value.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import product

import numpy as np

from .errors import ControlError

__all__ = [
    "ControlSet",
    "HamiltonianValue",
    "maximize_pointwise",
    "maximize_averaged",
    "pointwise_H",
    "averaged_H",
    "max_condition_residual",
    "averaged_condition_residual",
]

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ControlSet:
    """Bounded control set: a box of intervals or a finite list of points.

    Ties between equally good candidates go to the one of smallest Euclidean
    norm, then to the lexicographically smallest.
    """

    kind: str
    lower: tuple = ()
    upper: tuple = ()
    points: tuple = ()
    resolution: int = 65
    refine: bool = True

    def __post_init__(self):
        if self.kind == "interval":
            if len(self.lower) != len(self.upper) or not self.lower:
                raise ControlError("interval control set needs one (lower, upper) pair per dimension")
            if not all(np.isfinite(self.lower)) or not all(np.isfinite(self.upper)):
                raise ControlError("control set must be bounded")
            if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
                raise ControlError(f"empty control interval {list(zip(self.lower, self.upper))}")
            if self.resolution < 2:
                raise ControlError("interval resolution must be at least 2")
            if len(self.lower) > 3:
                raise ControlError("grid search supports at most 3 control dimensions")
        elif self.kind == "finite":
            if len(self.points) == 0:
                raise ControlError("empty control set")
            if not np.all(np.isfinite(np.asarray(self.points, dtype=float))):
                raise ControlError("control set must be bounded")
        else:
            raise ControlError(f"unknown control set kind {self.kind!r}")

    @classmethod
    def interval(cls, lower, upper, resolution=65, refine=True) -> "ControlSet":
        lo = tuple(float(v) for v in np.atleast_1d(lower))
        hi = tuple(float(v) for v in np.atleast_1d(upper))
        return cls("interval", lo, hi, (), int(resolution), bool(refine))

    @classmethod
    def finite(cls, points) -> "ControlSet":
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        pts = pts.reshape(len(pts), -1)
        return cls("finite", points=tuple(map(tuple, pts.tolist())), refine=False)

    @property
    def dim(self) -> int:
        return len(self.lower) if self.kind == "interval" else len(self.points[0])

    def with_resolution(self, resolution: int) -> "ControlSet":
        return replace(self, resolution=int(resolution))

    def doubled(self) -> "ControlSet":
        """Nested refinement: every old grid point is kept."""
        return self.with_resolution(2 * self.resolution - 1)

    def candidates(self) -> np.ndarray:
        if self.kind == "finite":
            pts = np.asarray(self.points, dtype=float)
        else:
            axes = [np.linspace(lo, hi, self.resolution) if hi > lo else np.array([lo])
                    for lo, hi in zip(self.lower, self.upper)]
            pts = np.array(list(product(*axes)), dtype=float)
        order = np.lexsort(tuple(pts[:, i] for i in reversed(range(pts.shape[1]))) + (np.linalg.norm(pts, axis=1),))
        return pts[order]

    def contains(self, u, tol: float = 1e-12) -> bool:
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.dim:
            return False
        if self.kind == "interval":
            lo, hi = np.asarray(self.lower), np.asarray(self.upper)
            return bool(np.all((u >= lo - tol) & (u <= hi + tol)))
        pts = np.asarray(self.points)
        flat = u.reshape(-1, self.dim)
        d = np.min(np.max(np.abs(flat[:, None, :] - pts[None]), axis=2), axis=1)
        return bool(np.all(d <= tol))

    def clip(self, u) -> np.ndarray:
        if self.kind != "interval":
            raise ControlError("clip is only defined for interval control sets")
        return np.clip(u, self.lower, self.upper)

    def sample(self, rng, size) -> np.ndarray:
        """Uniform draws of shape ``size + (dim,)``."""
        size = tuple(np.atleast_1d(size))
        if self.kind == "interval":
            return rng.uniform(self.lower, self.upper, size=size + (self.dim,))
        pts = np.asarray(self.points)
        return pts[rng.integers(0, len(pts), size=size)]


@dataclass(frozen=True)
class HamiltonianValue:
    value: float
    maximizer: np.ndarray
    attained_gap: float


def _maximize(objective, cset: ControlSet, shape):
    """Maximize ``objective(u)`` elementwise over the control set.

    ``objective`` accepts ``u`` of shape ``lead + shape + (k,)`` and returns
    ``lead + shape``.  Returns (values, maximizers, grid_values).
    """
    shape = tuple(shape)
    U = cset.candidates()
    m, k = U.shape
    # running maximum over candidates in tie-break order keeps memory at O(shape)
    grid_best = np.full(shape, -np.inf)
    idx = np.zeros(shape, dtype=np.intp)
    for i in range(m):
        v = np.broadcast_to(objective(U[i]), shape)
        better = v > grid_best
        grid_best = np.where(better, v, grid_best)
        idx = np.where(better, i, idx)
    if not np.all(np.isfinite(grid_best)):
        raise ControlError("Hamiltonian objective is not finite on the control set")
    u_best = U[idx]
    best = grid_best.copy()

    if cset.refine and cset.kind == "interval" and k == 1 and cset.upper[0] > cset.lower[0]:
        lo, hi = cset.lower[0], cset.upper[0]
        step = (hi - lo) / (cset.resolution - 1)
        a = np.maximum(u_best[..., 0] - step, lo)
        b = np.minimum(u_best[..., 0] + step, hi)

        def f(v):
            return np.broadcast_to(objective(v[..., None]), shape)

        c = b - _GOLDEN * (b - a)
        d = a + _GOLDEN * (b - a)
        fc, fd = f(c), f(d)
        for _ in range(200):
            if np.max(b - a) <= 1e-13 * max(1.0, hi - lo):
                break
            left = fc >= fd
            b = np.where(left, d, b)
            a = np.where(left, a, c)
            nc = np.where(left, b - _GOLDEN * (b - a), d)
            nd = np.where(left, c, a + _GOLDEN * (b - a))
            fnew = f(np.where(left, nc, nd))
            fc, fd = np.where(left, fnew, fd), np.where(left, fc, fnew)
            c, d = nc, nd
        u_ref = 0.5 * (a + b)
        f_ref = f(u_ref)
        better = f_ref > best
        best = np.where(better, f_ref, best)
        u_best = np.where(better[..., None], u_ref[..., None], u_best)
    return best, u_best, grid_best


def maximize_pointwise(problem, t, x, p):
    """Vectorized ``sup_u G(t, x, u) + p C(t, x, u)``.

    ``t`` broadcasts against ``p``; ``x`` has shape ``p.shape + (d,)`` (or
    broadcasts to it).  Returns (values, maximizers, grid_values).
    """
    p = np.asarray(p, dtype=float)
    t = np.asarray(t, dtype=float)

    def objective(u):
        return problem.G(t, x, u) + p * problem.C(t, x, u)

    return _maximize(objective, problem.control_set, p.shape)


def maximize_averaged(problem, times, p):
    """Vectorized ``sup_u sum_j w_j (G + p C)(t_k, x_j, u)`` for each time level.

    ``p`` has shape (K, N) and ``times`` shape (K,).  Returns
    (values (K,), maximizers (K, k), grid_values (K,)).
    """
    grid = problem.grid
    p = np.atleast_2d(np.asarray(p, dtype=float))
    t = np.asarray(times, dtype=float).reshape(-1, 1)
    x = grid.coordinates
    w = grid.quadrature_weight

    def objective(u):
        u = u[..., None, :]
        return (problem.G(t, x, u) + p * problem.C(t, x, u)) @ w

    return _maximize(objective, problem.control_set, (p.shape[0],))


def pointwise_H(problem, t, x, p_value) -> HamiltonianValue:
    if not np.isfinite(p_value):
        raise ControlError("p must be finite")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    val, u, grid_val = maximize_pointwise(problem, np.asarray(t), x, np.asarray(float(p_value)))
    return HamiltonianValue(float(val), np.asarray(u, dtype=float), float(val - grid_val))


def averaged_H(problem, t, p_field, grid=None) -> HamiltonianValue:
    if grid is not None and not grid.same_as(problem.grid):
        raise ControlError("p field lives on a different grid than the problem")
    p = np.asarray(p_field, dtype=float).reshape(1, -1)
    val, u, grid_val = maximize_averaged(problem, np.array([t]), p)
    return HamiltonianValue(float(val[0]), u[0], float(val[0] - grid_val[0]))


def _split(u_path, p_path):
    u = getattr(u_path, "values", u_path)
    p = getattr(p_path, "values", p_path)
    return np.asarray(u, dtype=float), np.asarray(p, dtype=float)


def max_condition_residual(problem, u_path, p_path, grid=None) -> float:
    """Largest ``H(t, x, p) - (G + p C)(t, x, u)`` over payoff time levels and interior nodes.

    ``u_path`` has shape (..., K, N, k) and ``p_path`` (..., K, N), with K the
    number of time levels; the final level never enters the payoff and is
    skipped.
    """
    grid = grid or problem.grid
    u, p = _split(u_path, p_path)
    K = p.shape[-2] - 1
    u, p = u[..., :K, :, :], p[..., :K, :]
    t = problem.times[:K, None]
    x = grid.coordinates
    H, _, _ = maximize_pointwise(problem, t, x, p)
    attained = problem.G(t, x, u) + p * problem.C(t, x, u)
    return float(np.max((H - attained)[..., grid.interior_mask]))


def averaged_condition_residual(problem, u_path, p_path) -> float:
    """Largest ``calH(t, p) - sum_j w_j (G + p C)(t, x_j, u(t))`` over payoff time levels."""
    u, p = _split(u_path, p_path)
    K = p.shape[-2] - 1
    grid = problem.grid
    t = problem.times[:K]
    u_t = u[..., :K, 0, :] if u.ndim >= 3 and u.shape[-2] == grid.num_nodes else u[..., :K, :]
    p = p[..., :K, :]
    flat_p = p.reshape(-1, K, grid.num_nodes)
    flat_u = np.broadcast_to(u_t, p.shape[:-1] + (u_t.shape[-1],)).reshape(-1, K, u_t.shape[-1])
    worst = -np.inf
    for pp, uu in zip(flat_p, flat_u):
        H, _, _ = maximize_averaged(problem, t, pp)
        attained = (problem.G(t[:, None], grid.coordinates, uu[:, None, :])
                    + pp * problem.C(t[:, None], grid.coordinates, uu[:, None, :])) @ grid.quadrature_weight
        worst = max(worst, float(np.max(H - attained)))
    return worst
