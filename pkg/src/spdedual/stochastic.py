"""Brownian increment ensembles, space-time field paths and Ito sums.

Each path draws its increments from its own Philox stream keyed by
``(master_seed, path_index)``, so a path never depends on how many other
paths were requested or in which order they are evaluated.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GridError, SpdeDualError
from .mesh import Grid

__all__ = [
    "BrownianEnsemble",
    "FieldPath",
    "sample_ensemble",
    "path_increments",
    "ito_integral",
]

_MAGIC = b"SPDBM001"
_HEADER = struct.Struct("<8sQQdQ")


def path_increments(master_seed: int, path_index: int, T: float, num_steps: int) -> np.ndarray:
    """Increments of a single path; a pure function of its arguments."""
    ss = np.random.SeedSequence(int(master_seed) & (2**64 - 1), spawn_key=(int(path_index),))
    gen = np.random.Generator(np.random.Philox(ss))
    return gen.standard_normal(num_steps) * np.sqrt(T / num_steps)


@dataclass(frozen=True, eq=False)
class BrownianEnsemble:
    """Seeded collection of one-dimensional Brownian increment paths.

    ``increments[i, k]`` is ``B(t_{k+1}) - B(t_k)`` on path ``i``.
    """

    T: float
    num_steps: int
    num_paths: int
    master_seed: int
    increments: np.ndarray

    @property
    def dt(self) -> float:
        return self.T / self.num_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.num_steps + 1)

    def brownian_paths(self) -> np.ndarray:
        """B(t_k) for k = 0..num_steps, shape (num_paths, num_steps + 1)."""
        out = np.zeros((self.num_paths, self.num_steps + 1))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out

    def subset(self, paths) -> "BrownianEnsemble":
        inc = self.increments[paths]
        return BrownianEnsemble(self.T, self.num_steps, inc.shape[0], self.master_seed, inc)

    def same_noise(self, other: "BrownianEnsemble") -> bool:
        return (
            self.num_steps == other.num_steps
            and self.num_paths == other.num_paths
            and self.T == other.T
            and np.array_equal(self.increments, other.increments)
        )

    # -- interchange formats -------------------------------------------------

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_index", "step_index", "increment"])
            for i in range(self.num_paths):
                for k in range(self.num_steps):
                    w.writerow([i, k, repr(float(self.increments[i, k]))])

    @classmethod
    def from_csv(cls, path, T: float, master_seed: int = 0) -> "BrownianEnsemble":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        pi = rows[:, 0].astype(int)
        ki = rows[:, 1].astype(int)
        inc = np.zeros((pi.max() + 1, ki.max() + 1))
        inc[pi, ki] = rows[:, 2]
        return cls(float(T), inc.shape[1], inc.shape[0], int(master_seed), inc)

    def to_binary(self, path) -> None:
        """Header ``<8sQQdQ`` (magic, paths, steps, T, seed) then little-endian float64 data."""
        with open(path, "wb") as fh:
            fh.write(
                _HEADER.pack(
                    _MAGIC, self.num_paths, self.num_steps, self.T, int(self.master_seed) & (2**64 - 1)
                )
            )
            fh.write(np.ascontiguousarray(self.increments, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "BrownianEnsemble":
        raw = Path(path).read_bytes()
        magic, n_paths, n_steps, T, seed = _HEADER.unpack_from(raw)
        if magic != _MAGIC:
            raise SpdeDualError(f"{path}: not a Brownian ensemble dump")
        data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        if data.size != n_paths * n_steps:
            raise SpdeDualError(f"{path}: truncated ensemble dump")
        return cls(T, n_steps, n_paths, seed, data.reshape(n_paths, n_steps).astype(float))


def sample_ensemble(T: float, num_steps: int, num_paths: int, master_seed: int) -> BrownianEnsemble:
    if not T > 0:
        raise SpdeDualError(f"horizon must be positive, got {T}")
    if num_steps < 1 or num_paths < 1:
        raise SpdeDualError(f"need at least one step and one path, got {num_steps} steps, {num_paths} paths")
    inc = np.empty((num_paths, num_steps))
    for i in range(num_paths):
        inc[i] = path_increments(master_seed, i, T, num_steps)
    inc.setflags(write=False)
    return BrownianEnsemble(float(T), int(num_steps), int(num_paths), int(master_seed), inc)


@dataclass(frozen=True, eq=False)
class FieldPath:
    """Space-time values on a grid.

    ``values`` has shape (num_steps + 1, N) for one realization, or
    (num_paths, num_steps + 1, N) for an ensemble.  ``kind`` is one of
    ``"state"``, ``"adjoint"`` or ``"control"``.
    """

    grid: Grid
    values: np.ndarray
    kind: str = "state"

    def __post_init__(self):
        if self.values.ndim not in (2, 3) or self.values.shape[-1] != self.grid.num_nodes:
            raise GridError(f"field values of shape {self.values.shape} do not fit a {self.grid.num_nodes}-node grid")

    @property
    def num_steps(self) -> int:
        return self.values.shape[-2] - 1

    @property
    def is_ensemble(self) -> bool:
        return self.values.ndim == 3

    def path(self, index: int) -> "FieldPath":
        if not self.is_ensemble:
            return self
        return FieldPath(self.grid, self.values[index], self.kind)

    def to_csv(self, path, path_index: int | None = None) -> None:
        """Write ``step,node,value`` rows for one realization."""
        vals = self.values if not self.is_ensemble else self.values[path_index or 0]
        steps, nodes = np.indices(vals.shape)
        table = np.column_stack([steps.ravel(), nodes.ravel(), vals.ravel()])
        np.savetxt(path, table, delimiter=",", header="step,node,value", comments="", fmt=["%d", "%d", "%.17g"])


def _as_values(field) -> np.ndarray:
    return field.values if isinstance(field, FieldPath) else np.asarray(field, dtype=float)


def ito_integral(p_path, sigma_field, ensemble: BrownianEnsemble, path_index: int, grid: Grid) -> np.ndarray:
    """Left-point sum ``sum_k p(t_k, x) sigma(t_k, x) dB_k`` at every node.

    The final time level of ``p_path`` is never read.
    """
    p = _as_values(p_path)
    sig = np.asarray(sigma_field, dtype=float)
    n = ensemble.num_steps
    if p.ndim != 2 or p.shape[0] not in (n, n + 1):
        raise SpdeDualError(f"p has {p.shape[0] - 1 if p.ndim == 2 else '?'} steps, ensemble has {n}")
    if p.shape[-1] != grid.num_nodes:
        raise GridError("p does not live on this grid")
    sig = np.broadcast_to(sig, (sig.shape[0] if sig.ndim == 2 else n, grid.num_nodes))
    if sig.shape[0] < n:
        raise SpdeDualError(f"sigma has {sig.shape[0]} time levels, need at least {n}")
    dB = ensemble.increments[path_index]
    return dB @ (p[:n] * sig[:n])
