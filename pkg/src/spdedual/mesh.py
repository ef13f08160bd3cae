"""Uniform tensor grids and the discrete elliptic operator pair.

The forward operator is the usual second-order central-difference
discretization of ``sum a_ij d2/dx_i dx_j + sum b_i d/dx_i``.  The adjoint
operator is built as the transpose of the same stencil, so that on interior
nodes it is exactly the matrix transpose of the forward operator (interior
quadrature weights are all equal on a uniform grid).  Boundary rows of both
maps are identity rows.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CoefficientError, GridError

__all__ = [
    "Grid",
    "OperatorCoefficients",
    "DiscreteOperatorPair",
    "build_grid",
    "assemble_operators",
    "apply_forward",
    "apply_adjoint",
    "green_residual",
]


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform tensor grid on an interval or an axis-aligned rectangle.

    Nodes are ordered C-style over ``nodes_per_axis`` (last axis fastest).
    """

    dimension: int
    extents: tuple[tuple[float, float], ...]
    nodes_per_axis: tuple[int, ...]
    coordinates: np.ndarray
    interior_mask: np.ndarray
    quadrature_weight: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.coordinates.shape[0]

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(self.extents, self.nodes_per_axis))

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.extents]))

    @property
    def boundary_mask(self) -> np.ndarray:
        return ~self.interior_mask

    @property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.linspace(lo, hi, n) for (lo, hi), n in zip(self.extents, self.nodes_per_axis))

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Trapezoidal integral over the domain along the last axis."""
        return np.asarray(values) @ self.quadrature_weight

    def same_as(self, other: "Grid") -> bool:
        return (
            self is other
            or (
                self.dimension == other.dimension
                and self.nodes_per_axis == other.nodes_per_axis
                and np.allclose(self.extents, other.extents, rtol=0, atol=0)
            )
        )


def _normalize_extents(dimension, extents):
    ext = np.asarray(extents, dtype=float)
    if dimension == 1 and ext.shape == (2,):
        ext = ext.reshape(1, 2)
    if ext.shape != (dimension, 2):
        raise GridError(f"expected {dimension} (lower, upper) pairs, got shape {ext.shape}")
    return ext


def build_grid(dimension: int, extents, nodes_per_axis: int | Sequence[int]) -> Grid:
    """Build a uniform tensor grid with trapezoidal quadrature weights.

    Parameters
    ----------
    dimension : int
        1 or 2.
    extents : sequence
        ``[lo, hi]`` for 1-D, or one ``(lo, hi)`` pair per axis.
    nodes_per_axis : int or sequence of int
        Number of nodes per axis, at least 3 so that an interior exists.
    """
    if dimension not in (1, 2):
        raise GridError(f"dimension must be 1 or 2, got {dimension}")
    ext = _normalize_extents(dimension, extents)
    if np.any(~np.isfinite(ext)) or np.any(ext[:, 1] <= ext[:, 0]):
        raise GridError(f"degenerate extent {ext.tolist()}: need lower < upper on every axis")
    counts = np.atleast_1d(np.asarray(nodes_per_axis))
    if counts.size == 1 and dimension > 1:
        counts = np.repeat(counts, dimension)
    if counts.size != dimension or np.any(counts != np.floor(counts)):
        raise GridError(f"nodes_per_axis must give one integer per axis, got {nodes_per_axis!r}")
    counts = counts.astype(int)
    if np.any(counts < 3):
        raise GridError(f"need at least 3 nodes per axis, got {counts.tolist()}")

    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(ext, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=-1)

    index = np.indices(counts).reshape(dimension, -1)
    interior = np.all((index > 0) & (index < counts[:, None] - 1), axis=0)

    weights = np.ones(1)
    for (lo, hi), n in zip(ext, counts):
        w = np.full(n, (hi - lo) / (n - 1))
        w[[0, -1]] *= 0.5
        weights = np.multiply.outer(weights, w).ravel()

    for arr in (coords, interior, weights):
        arr.setflags(write=False)
    return Grid(
        dimension=dimension,
        extents=tuple((float(lo), float(hi)) for lo, hi in ext),
        nodes_per_axis=tuple(int(n) for n in counts),
        coordinates=coords,
        interior_mask=interior,
        quadrature_weight=weights,
    )


@dataclass(frozen=True, eq=False)
class OperatorCoefficients:
    """Per-node diffusion matrix ``a`` (N, d, d) and drift vector ``b`` (N, d)."""

    a: np.ndarray
    b: np.ndarray

    @classmethod
    def constant(cls, grid: Grid, a, b=None) -> "OperatorCoefficients":
        d = grid.dimension
        a = np.broadcast_to(np.asarray(a, dtype=float).reshape(d, d) if np.ndim(a) else np.eye(d) * a, (d, d))
        b = np.zeros(d) if b is None else np.broadcast_to(np.asarray(b, dtype=float), (d,))
        n = grid.num_nodes
        return cls(np.broadcast_to(a, (n, d, d)).copy(), np.broadcast_to(b, (n, d)).copy())

    @classmethod
    def from_functions(cls, grid: Grid, a_fn, b_fn=None) -> "OperatorCoefficients":
        """``a_fn(x)`` returns (N, d, d) for coordinates (N, d); ``b_fn`` likewise (N, d)."""
        x = grid.coordinates
        a = np.asarray(a_fn(x), dtype=float).reshape(grid.num_nodes, grid.dimension, grid.dimension)
        b = np.zeros_like(x) if b_fn is None else np.asarray(b_fn(x), dtype=float).reshape(x.shape)
        return cls(a, b)

    def validate(self, grid: Grid, atol: float = 1e-12) -> None:
        n, d = grid.num_nodes, grid.dimension
        if self.a.shape != (n, d, d):
            raise CoefficientError(f"a has shape {self.a.shape}, expected {(n, d, d)}")
        if self.b.shape != (n, d):
            raise CoefficientError(f"b has shape {self.b.shape}, expected {(n, d)}")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise CoefficientError("coefficients must be finite")
        scale = max(1.0, float(np.max(np.abs(self.a))))
        if np.max(np.abs(self.a - np.swapaxes(self.a, 1, 2))) > atol * scale:
            raise CoefficientError("a(x) is not symmetric")
        lam_min = np.linalg.eigvalsh(self.a).min(axis=1)
        bad = np.flatnonzero(lam_min < -atol * scale)
        if bad.size:
            raise CoefficientError(
                f"a(x) is indefinite at node {bad[0]} (smallest eigenvalue {lam_min[bad[0]]:.3e})"
            )


@dataclass(frozen=True, eq=False)
class DiscreteOperatorPair:
    forward: sp.csr_matrix
    adjoint: sp.csr_matrix
    grid: Grid


def _stencil_matrix(grid: Grid, coeffs: OperatorCoefficients) -> sp.csr_matrix:
    """Central-difference stencil applied at every node, dropping out-of-grid neighbours."""
    d = grid.dimension
    shape = np.array(grid.nodes_per_axis)
    multi = np.indices(shape).reshape(d, -1).T
    h = np.array(grid.spacing)
    node = np.arange(grid.num_nodes)
    a, b = coeffs.a, coeffs.b

    rows, cols, vals = [], [], []

    def add(offset, coef):
        nb = multi + np.asarray(offset)
        ok = np.all((nb >= 0) & (nb < shape), axis=1)
        rows.append(node[ok])
        cols.append(np.ravel_multi_index(nb[ok].T, shape))
        vals.append(np.broadcast_to(coef, node.shape)[ok])

    for i in range(d):
        e = np.zeros(d, dtype=int)
        e[i] = 1
        add(np.zeros(d, dtype=int), -2.0 * a[:, i, i] / h[i] ** 2)
        add(e, a[:, i, i] / h[i] ** 2 + b[:, i] / (2 * h[i]))
        add(-e, a[:, i, i] / h[i] ** 2 - b[:, i] / (2 * h[i]))
    for i, j in combinations(range(d), 2):
        ei = np.zeros(d, dtype=int)
        ej = np.zeros(d, dtype=int)
        ei[i] = ej[j] = 1
        # a_ij and a_ji both multiply the same mixed derivative
        c = 2.0 * a[:, i, j] / (4.0 * h[i] * h[j])
        add(ei + ej, c)
        add(-ei - ej, c)
        add(ei - ej, -c)
        add(-ei + ej, -c)

    n = grid.num_nodes
    m = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    m.eliminate_zeros()
    return m


def assemble_operators(grid: Grid, coefficients: OperatorCoefficients) -> DiscreteOperatorPair:
    """Assemble the forward operator and its interior-transpose adjoint."""
    coefficients.validate(grid)
    stencil = _stencil_matrix(grid, coefficients)
    inner = sp.diags(grid.interior_mask.astype(float))
    outer = sp.diags(grid.boundary_mask.astype(float))
    forward = (inner @ stencil + outer).tocsr()
    adjoint = (inner @ stencil.T.tocsr() + outer).tocsr()
    forward.sort_indices()
    adjoint.sort_indices()
    return DiscreteOperatorPair(forward=forward, adjoint=adjoint, grid=grid)


def _apply(matrix, grid, field):
    field = np.asarray(field, dtype=float)
    if field.shape[-1] != grid.num_nodes:
        raise GridError(f"field has {field.shape[-1]} nodes, grid has {grid.num_nodes}")
    if field.ndim == 1:
        return matrix @ field
    flat = field.reshape(-1, grid.num_nodes)
    return (matrix @ flat.T).T.reshape(field.shape)


def apply_forward(pair: DiscreteOperatorPair, field) -> np.ndarray:
    """Apply the forward operator along the last (node) axis."""
    return _apply(pair.forward, pair.grid, field)


def apply_adjoint(pair: DiscreteOperatorPair, field) -> np.ndarray:
    """Apply the adjoint operator along the last (node) axis."""
    return _apply(pair.adjoint, pair.grid, field)


def green_residual(pair: DiscreteOperatorPair, X_field, p_field) -> float:
    """Weighted interior residual ``<A X, p> - <X, A* p>``.

    Vanishes to rounding when both fields are supported on interior nodes.  When
    ``X`` carries boundary values the residual is the discrete boundary term.
    """
    X = np.asarray(X_field, dtype=float)
    p = np.asarray(p_field, dtype=float)
    w = np.where(pair.grid.interior_mask, pair.grid.quadrature_weight, 0.0)
    lhs = np.sum(w * apply_forward(pair, X) * p)
    rhs = np.sum(w * X * apply_adjoint(pair, p))
    return float(lhs - rhs)
