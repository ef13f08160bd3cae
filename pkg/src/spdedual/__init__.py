"""Primal and dual Monte Carlo toolkit for optimal control of the stochastic heat equation."""

__version__ = "0.1.0"

from .catalog import ProblemSpec, get_problem, list_problems
from .duality import (
    DualityReport,
    IterationConfig,
    certify_upper_bound,
    make_dual_feasible,
    solve_strong,
    solve_strong_partial,
)
from .dynamics import ControlField, SchemeConfig, solve_adjoint, solve_forward
from .functionals import DualPair, Estimate, dual_L, dual_L1, lagrangian_L, payoff_J
from .hamiltonian import ControlSet, averaged_H, pointwise_H
from .mesh import OperatorCoefficients, assemble_operators, build_grid, green_residual
from .stochastic import BrownianEnsemble, FieldPath, sample_ensemble

__all__ = [
    "__version__",
    "BrownianEnsemble",
    "ControlField",
    "ControlSet",
    "DualPair",
    "DualityReport",
    "Estimate",
    "FieldPath",
    "IterationConfig",
    "OperatorCoefficients",
    "ProblemSpec",
    "SchemeConfig",
    "assemble_operators",
    "averaged_H",
    "build_grid",
    "certify_upper_bound",
    "dual_L",
    "dual_L1",
    "get_problem",
    "green_residual",
    "lagrangian_L",
    "list_problems",
    "make_dual_feasible",
    "payoff_J",
    "pointwise_H",
    "sample_ensemble",
    "solve_adjoint",
    "solve_forward",
    "solve_strong",
    "solve_strong_partial",
]
