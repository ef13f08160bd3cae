"""Pure NumPy/SciPy time-marching kernel (reference and fallback)."""
from __future__ import annotations

import numpy as np
import scipy.sparse.linalg as spla

from .errors import SolverError


def march(implicit, explicit, boundary_mask, start, source, sigma, increments, boundary,
          factor=None, tol=1e-10, max_refine=3):
    """Advance ``implicit @ x_{k+1} = explicit @ x_k + source_k + sigma_k dB_k``.

    Shapes: start (P, n); source (S, steps, n) with S in {1, P}; sigma
    (steps, n); increments (P, steps); boundary (steps + 1, n).  Rows flagged
    in ``boundary_mask`` take ``boundary[k + 1]`` instead of the right-hand side.
    Returns the trajectory, shape (P, steps + 1, n).
    """
    P, n = start.shape
    steps = increments.shape[1]
    out = np.empty((P, steps + 1, n))
    out[:, 0] = start
    identity = factor is None and _is_identity(implicit)
    if not identity and factor is None:
        factor = spla.splu(implicit.tocsc())
    cur = np.ascontiguousarray(start.T)
    bidx = np.flatnonzero(boundary_mask)
    shared = source.shape[0] == 1
    for k in range(steps):
        rhs = explicit @ cur
        rhs += source[0, k][:, None] if shared else source[:, k].T
        rhs += sigma[k][:, None] * increments[:, k][None, :]
        rhs[bidx] = boundary[k + 1, bidx][:, None]
        if identity:
            cur = rhs
        else:
            cur = factor.solve(rhs)
            res = implicit @ cur - rhs
            scale = max(1.0, float(np.max(np.abs(rhs))))
            it = 0
            while np.max(np.abs(res)) > tol * scale:
                if it >= max_refine:
                    raise SolverError(
                        f"linear solve residual {np.max(np.abs(res)):.3e} above tolerance at step {k}"
                    )
                cur -= factor.solve(res)
                res = implicit @ cur - rhs
                it += 1
            # identity rows: pin boundary values exactly, LU round-off included
            cur[bidx] = rhs[bidx]
        if not np.all(np.isfinite(cur)):
            raise SolverError(f"non-finite values at step {k + 1}")
        out[:, k + 1] = cur.T
    return out


def _is_identity(m) -> bool:
    coo = m.tocoo()
    off = coo.row != coo.col
    return not np.any(coo.data[off]) and np.all(m.diagonal() == 1.0)
