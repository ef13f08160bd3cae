"""Backend selection for the time-marching kernel.

The compiled tridiagonal kernel is used for 1-D grids when the extension was
built and the implicit matrix is diagonally dominant (no pivoting needed).
Everything else goes through the SciPy sparse-LU kernel in ``_march``.
Set ``SPDEDUAL_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _march
from .errors import SolverError
from .mesh import DiscreteOperatorPair

try:
    if os.environ.get("SPDEDUAL_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("disabled by SPDEDUAL_PURE_PYTHON")
    from . import _cmarch
except ImportError:
    _cmarch = None

HAVE_COMPILED = _cmarch is not None

__all__ = ["HAVE_COMPILED", "StepOperator", "make_step_operator", "march", "default_backend"]


def default_backend() -> str:
    return "compiled" if HAVE_COMPILED else "python"


@dataclass(eq=False)
class StepOperator:
    """One theta-scheme step ``implicit x_{k+1} = explicit x_k + ...``."""

    implicit: sp.csr_matrix
    explicit: sp.csr_matrix
    boundary_mask: np.ndarray
    tol: float = 1e-10
    max_refine: int = 3
    _factor: object = field(default=None, repr=False)

    @property
    def factor(self):
        if self._factor is None:
            self._factor = spla.splu(self.implicit.tocsc())
        return self._factor

    def bands(self):
        """Tridiagonal bands of both matrices, or None when the compiled path does not apply."""
        n = self.implicit.shape[0]
        if not (self.boundary_mask[0] and self.boundary_mask[-1] and self.boundary_mask.sum() == 2):
            return None
        out = []
        for m in (self.implicit, self.explicit):
            coo = m.tocoo()
            if np.any(np.abs(coo.row - coo.col) > 1):
                return None
            lower = np.r_[0.0, m.diagonal(-1)]
            upper = np.r_[m.diagonal(1), 0.0]
            out.extend([lower[:n], m.diagonal(0).copy(), upper[:n]])
        ml, md, mu = out[:3]
        if np.any(np.abs(md) < np.abs(ml) + np.abs(mu)):
            return None
        return out


def make_step_operator(pair: DiscreteOperatorPair, dt: float, theta: float, adjoint: bool = False,
                       tol: float = 1e-10, max_refine: int = 3) -> StepOperator:
    grid = pair.grid
    op = pair.adjoint if adjoint else pair.forward
    inner = sp.diags(grid.interior_mask.astype(float))
    eye = sp.identity(grid.num_nodes, format="csr")
    drift = (inner @ op).tocsr()
    implicit = (eye - theta * dt * drift).tocsr()
    explicit = (eye + (1.0 - theta) * dt * drift).tocsr()
    return StepOperator(implicit, explicit, grid.boundary_mask.copy(), tol, max_refine)


def march(op: StepOperator, start, steps: int, source=None, sigma=None, increments=None,
          boundary=None, backend: str | None = None) -> np.ndarray:
    """Run ``steps`` theta-scheme steps for a batch of paths.

    Parameters
    ----------
    start : (P, n) array
    source : (S, steps, n) array, S in {1, P}, optional
        Deterministic per-step forcing (already multiplied by dt).
    sigma, increments : (steps, n) and (P, steps) arrays, optional
        Noise forcing ``sigma[k] * increments[:, k]``.
    boundary : (steps + 1, n) array, optional
        Values imposed on boundary nodes at each level (zero when omitted).
    backend : {"compiled", "python", None}
    """
    start = np.ascontiguousarray(np.atleast_2d(start), dtype=float)
    P, n = start.shape
    source = np.zeros((1, steps, n)) if source is None else np.ascontiguousarray(source, dtype=float)
    if increments is None:
        increments = np.zeros((P, steps))
        sigma = np.zeros((steps, n))
    sigma = np.ascontiguousarray(np.broadcast_to(sigma, (steps, n)), dtype=float)
    increments = np.ascontiguousarray(increments, dtype=float)
    boundary = np.zeros((steps + 1, n)) if boundary is None else np.ascontiguousarray(boundary, dtype=float)
    if source.shape[1:] != (steps, n) or source.shape[0] not in (1, P):
        raise ValueError(f"source shape {source.shape} incompatible with {P} paths x {steps} steps x {n} nodes")
    if increments.shape != (P, steps):
        raise ValueError(f"increments shape {increments.shape}, expected {(P, steps)}")

    backend = backend or default_backend()
    bands = op.bands() if backend == "compiled" and HAVE_COMPILED else None
    if bands is None:
        return _march.march(op.implicit, op.explicit, op.boundary_mask, start, source, sigma,
                            increments, boundary, factor=None if _is_eye(op) else op.factor,
                            tol=op.tol, max_refine=op.max_refine)
    out = np.empty((P, steps + 1, n))
    status = _cmarch.march_tridiag(*bands, start, source, sigma, increments, boundary, out)
    if status:
        raise SolverError(f"non-finite values at time level {status}")
    return out


def _is_eye(op: StepOperator) -> bool:
    return _march._is_identity(op.implicit)
