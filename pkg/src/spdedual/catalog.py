"""Named problem instances with known structure.

Every evaluator takes ``(t, x, v)`` where ``t`` broadcasts against the
value array, ``x`` carries coordinates on its last axis and ``v`` is the
state (for ``F``/``F_X``) or a control with its components on the last axis
(for ``G``/``C``).  All evaluators are pure NumPy functions.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import CatalogError
from .hamiltonian import ControlSet
from .mesh import Grid, OperatorCoefficients, assemble_operators, build_grid

__all__ = ["ProblemSpec", "get_problem", "list_problems", "PARAMETER_SCHEMAS"]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    name: str
    params: dict
    grid: Grid
    T: float
    num_steps: int
    coefficients: OperatorCoefficients
    F: Callable
    F_X: Callable
    G: Callable
    C: Callable
    sigma: Callable
    xi: Callable
    eta: Callable
    control_set: ControlSet
    concave_in_X: bool = True
    space_constant_controls: bool = False
    default_control: tuple = (0.0,)
    closed_form_H: Callable | None = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dt(self) -> float:
        return self.T / self.num_steps

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.num_steps + 1)

    @cached_property
    def operators(self):
        return assemble_operators(self.grid, self.coefficients)

    @cached_property
    def xi_values(self) -> np.ndarray:
        return np.broadcast_to(self.xi(self.grid.coordinates), (self.grid.num_nodes,)).astype(float)

    @cached_property
    def sigma_table(self) -> np.ndarray:
        """sigma(t_k, x_j), shape (num_steps + 1, N), zero on boundary nodes."""
        t = self.times[:, None]
        s = np.broadcast_to(self.sigma(t, self.grid.coordinates), (t.shape[0], self.grid.num_nodes))
        return np.where(self.grid.interior_mask, s, 0.0)

    @cached_property
    def boundary_table(self) -> np.ndarray:
        """Boundary data per level: xi at level 0, eta(t_k) afterwards; interior entries zero."""
        t = self.times[:, None]
        eta = np.broadcast_to(self.eta(t, self.grid.coordinates), (t.shape[0], self.grid.num_nodes)).copy()
        eta[0] = self.xi_values
        return np.where(self.grid.boundary_mask, eta, 0.0)

    @property
    def control_dim(self) -> int:
        return self.control_set.dim

    def variant(self, **changes) -> "ProblemSpec":
        """Copy with some fields replaced and a fresh solver cache."""
        return replace(self, _cache={}, **changes)

    def with_control_set(self, control_set: ControlSet) -> "ProblemSpec":
        return self.variant(control_set=control_set)

    # -- assumption checks ---------------------------------------------------

    def check_concavity(self, samples: int = 1000, seed: int = 0, scale: float = 10.0) -> bool:
        """Midpoint concavity of F in X on random (t, x, X1, X2)."""
        rng = np.random.default_rng(seed)
        t = rng.uniform(0, self.T, samples)
        x = self.grid.coordinates[rng.integers(0, self.grid.num_nodes, samples)]
        X1 = rng.uniform(-scale, scale, samples)
        X2 = rng.uniform(-scale, scale, samples)
        mid = self.F(t, x, 0.5 * (X1 + X2))
        chord = 0.5 * (self.F(t, x, X1) + self.F(t, x, X2))
        tol = 1e-12 * np.maximum(1.0, np.abs(mid))
        return bool(np.all(mid >= chord - tol))

    def check_G_bounded(self, samples: int = 1000, seed: int = 0) -> bool:
        rng = np.random.default_rng(seed)
        t = rng.uniform(0, self.T, samples)
        x = self.grid.coordinates[rng.integers(0, self.grid.num_nodes, samples)]
        u = self.control_set.sample(rng, samples)
        return bool(np.all(np.isfinite(self.G(t, x, u))))

    def corner_mismatch(self) -> float:
        """max |eta(0, x) - xi(x)| over boundary nodes."""
        xb = self.grid.coordinates[self.grid.boundary_mask]
        return float(np.max(np.abs(self.eta(np.zeros(len(xb)), xb) - self.xi(xb)), initial=0.0))


# -- parameter schemas ------------------------------------------------------

def _p(default, kind="real", doc=""):
    return {"default": default, "constraint": kind, "description": doc}


_COMMON = {
    "T": _p(0.25, "positive", "time horizon"),
    "nx": _p(33, "int>=3", "nodes per axis"),
    "nt": _p(256, "int>=1", "time steps"),
    "kappa": _p(1.0, "nonnegative", "diffusion coefficient a"),
    "beta": _p(0.0, "real", "drift coefficient b"),
}

_LQ = {
    "q": _p(1.0, "positive", "state penalty, F = -q X^2"),
    "r": _p(1.0, "positive", "control penalty, G = -r u^2"),
    "c": _p(1.0, "real", "control gain in C"),
    "s": _p(0.1, "real", "noise intensity sigma"),
    "u_max": _p(1.0, "positive", "control bound"),
    "A": _p(1.0, "real", "initial amplitude, xi = A sin(pi x)"),
}

PARAMETER_SCHEMAS = {
    "zero": {**_COMMON, "T": _p(1.0, "positive", "time horizon"), "nx": _p(9, "int>=3", "nodes per axis"),
             "nt": _p(16, "int>=1", "time steps")},
    "heat-decay": {**_COMMON, "T": _p(0.1, "positive", "time horizon"), "nx": _p(64, "int>=3", "nodes per axis"),
                   "nt": _p(1024, "int>=1", "time steps"), "A": _p(1.0, "real", "initial amplitude")},
    "lq1d": {**_COMMON, **_LQ},
    "bangbang": {**_COMMON, "T": _p(0.1, "positive", "time horizon"),
                 "s": _p(0.1, "real", "noise intensity sigma"),
                 "A": _p(1.0, "real", "initial amplitude, xi = A sin(pi x)")},
    "lq1d-po": {**_COMMON, **_LQ},
    "lq2d": {**_COMMON, **_LQ, "nx": _p(17, "int>=3", "nodes per axis"), "nt": _p(128, "int>=1", "time steps"),
             "a12": _p(0.0, "real", "off-diagonal diffusion, |a12| <= kappa")},
}

_DESCRIPTIONS = {
    "zero": "all data zero; J* = 0",
    "heat-decay": "uncontrolled deterministic heat equation, xi = A sin(pi x)",
    "lq1d": "F = -q X^2, G = -r u^2, C = c u, constant noise, |u| <= u_max",
    "bangbang": "F = -X^2, G = 0, C = u, U = [-1, 1]",
    "lq1d-po": "lq1d with C = c (1 + x) u and space-independent controls",
    "lq2d": "lq1d on the unit square",
}


def list_problems() -> dict:
    """Catalog names with descriptions and parameter schemas."""
    return {name: {"description": _DESCRIPTIONS[name], "parameters": PARAMETER_SCHEMAS[name]}
            for name in PARAMETER_SCHEMAS}


def _resolve(name, overrides):
    if name not in PARAMETER_SCHEMAS:
        raise CatalogError(f"unknown problem {name!r}; choose from {sorted(PARAMETER_SCHEMAS)}")
    schema = PARAMETER_SCHEMAS[name]
    params = {k: v["default"] for k, v in schema.items()}
    extra = {k: v for k, v in overrides.items() if k not in ("resolution", "refine")}
    unknown = set(extra) - set(schema)
    if unknown:
        raise CatalogError(f"unknown parameter(s) {sorted(unknown)} for {name!r}")
    params.update(extra)
    for key, value in params.items():
        kind = schema[key]["constraint"]
        ok = {
            "positive": lambda v: v > 0,
            "nonnegative": lambda v: v >= 0,
            "real": lambda v: np.isfinite(v),
            "int>=3": lambda v: float(v).is_integer() and v >= 3,
            "int>=1": lambda v: float(v).is_integer() and v >= 1,
        }[kind]
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise CatalogError(f"parameter {key}={value!r} is not numeric") from None
        if not (np.isfinite(value) and ok(value)):
            raise CatalogError(f"parameter {key}={value} out of range ({kind})")
        params[key] = int(value) if kind.startswith("int") else value
    return params


def _full(v, t, x):
    v = np.asarray(v, dtype=float)
    return np.broadcast_to(v, np.broadcast_shapes(v.shape, np.shape(t), np.shape(x)[:-1]))


def _zero(t, x, v):
    return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1], np.shape(v)))


def _zero_u(t, x, u):
    return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1], np.shape(u)[:-1]))


def _lq_H(q, r, c, u_max):
    def closed_form(p):
        u = np.clip(c * np.asarray(p) / (2 * r), -u_max, u_max)
        return -r * u**2 + c * p * u, u
    return closed_form


def get_problem(name: str, parameter_overrides: dict | None = None) -> ProblemSpec:
    """Instantiate a catalog problem.

    ``parameter_overrides`` may also carry ``resolution`` and ``refine`` for
    the control-set search grid.
    """
    overrides = dict(parameter_overrides or {})
    params = _resolve(name, overrides)
    resolution = int(overrides.get("resolution", 65))
    refine = bool(overrides.get("refine", True))

    dim = 2 if name == "lq2d" else 1
    extents = [(0.0, 1.0)] * dim
    grid = build_grid(dim, extents, params["nx"])
    kappa, beta = params["kappa"], params["beta"]
    if dim == 1:
        coeffs = OperatorCoefficients.constant(grid, kappa, beta)
    else:
        a12 = params["a12"]
        if abs(a12) > kappa:
            raise CatalogError(f"parameter a12={a12} makes the diffusion matrix indefinite (|a12| > kappa={kappa})")
        coeffs = OperatorCoefficients.constant(grid, np.array([[kappa, a12], [a12, kappa]]), [beta, beta])

    def sine(A):
        return lambda x: A * np.prod(np.sin(np.pi * np.asarray(x)), axis=-1)

    def eta_zero(t, x):
        return _zero(t, x, 0.0)

    common = dict(grid=grid, T=float(params["T"]), num_steps=int(params["nt"]), coefficients=coeffs, eta=eta_zero)

    if name in ("zero", "heat-decay"):
        A = params.get("A", 0.0)
        spec = ProblemSpec(
            name=name, params=params,
            F=_zero, F_X=_zero, G=_zero_u, C=_zero_u,
            sigma=lambda t, x: _zero(t, x, 0.0),
            xi=sine(A) if name == "heat-decay" else (lambda x: np.zeros(np.shape(x)[:-1])),
            control_set=ControlSet.interval(-1.0, 1.0, resolution, refine),
            closed_form_H=lambda p: (np.zeros_like(np.asarray(p, dtype=float)), np.zeros_like(np.asarray(p, dtype=float))),
            **common,
        )
    elif name in ("lq1d", "lq1d-po", "lq2d"):
        q, r, c, s, u_max, A = (params[k] for k in ("q", "r", "c", "s", "u_max", "A"))
        if name == "lq1d-po":
            def gain(x):
                return c * (1.0 + x[..., 0])
        else:
            def gain(x):
                return np.full(np.shape(x)[:-1], c)
        spec = ProblemSpec(
            name=name, params=params,
            F=lambda t, x, X: _full(-q * np.square(X), t, x),
            F_X=lambda t, x, X: _full(-2.0 * q * np.asarray(X), t, x),
            G=lambda t, x, u: _full(-r * np.square(u[..., 0]), t, x),
            C=lambda t, x, u: _full(gain(x) * u[..., 0], t, x),
            sigma=lambda t, x: _full(s, t, x),
            xi=sine(A),
            control_set=ControlSet.interval(-u_max, u_max, resolution, refine),
            space_constant_controls=(name == "lq1d-po"),
            closed_form_H=None if name == "lq1d-po" else _lq_H(q, r, c, u_max),
            **common,
        )
    elif name == "bangbang":
        s, A = params["s"], params["A"]
        spec = ProblemSpec(
            name=name, params=params,
            F=lambda t, x, X: _full(-np.square(X), t, x),
            F_X=lambda t, x, X: _full(-2.0 * np.asarray(X), t, x),
            G=_zero_u,
            C=lambda t, x, u: _full(u[..., 0], t, x),
            sigma=lambda t, x: _full(s, t, x),
            xi=sine(A),
            control_set=ControlSet.interval(-1.0, 1.0, resolution, refine),
            closed_form_H=lambda p: (np.abs(p), np.sign(p)),
            **common,
        )
    else:  # pragma: no cover - _resolve guards the name
        raise CatalogError(name)

    if not spec.check_concavity():
        raise CatalogError(f"{name}: F failed the midpoint concavity check")
    if not spec.check_G_bounded():
        raise CatalogError(f"{name}: G is not finite on the control set")
    if spec.corner_mismatch() > 1e-12:
        raise CatalogError(f"{name}: eta(0, .) and xi disagree on the boundary")
    return spec
