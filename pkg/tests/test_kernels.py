import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spdedual import kernels
from spdedual.catalog import get_problem
from spdedual.dynamics import ControlField, SchemeConfig, adjoint_values, solve_forward_paths
from spdedual.errors import SolverError
from spdedual.stochastic import sample_ensemble

needs_compiled = pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="compiled extension not built")


@needs_compiled
@given(seed=st.integers(0, 1000), theta=st.sampled_from([0.5, 1.0]), beta=st.floats(-2, 2))
def test_backends_agree(seed, theta, beta):
    problem = get_problem("lq1d", {"nx": 17, "nt": 32, "beta": beta})
    ens = sample_ensemble(problem.T, 32, 5, seed)
    rng = np.random.default_rng(seed)
    u = ControlField(rng.uniform(-1, 1, size=(33, 17, 1)))
    scheme = SchemeConfig(theta=theta)
    a = solve_forward_paths(problem, u, ens, scheme=scheme, backend="compiled")
    b = solve_forward_paths(problem, u, ens, scheme=scheme, backend="python")
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12 * max(1.0, np.abs(b).max()))
    pa = adjoint_values(problem, a, scheme, backend="compiled")
    pb = adjoint_values(problem, a, scheme, backend="python")
    np.testing.assert_allclose(pa, pb, rtol=0, atol=1e-12 * max(1.0, np.abs(pb).max()))


def test_two_dimensional_grid_uses_fallback():
    problem = get_problem("lq2d", {"nx": 5, "nt": 4})
    op = kernels.make_step_operator(problem.operators, problem.dt, 1.0)
    assert op.bands() is None


def test_explicit_scheme_is_identity_solve():
    problem = get_problem("heat-decay", {"nx": 9, "nt": 400})
    op = kernels.make_step_operator(problem.operators, problem.dt, 0.0)
    assert kernels._is_eye(op)


@pytest.mark.parametrize("backend", ["python", pytest.param("compiled", marks=needs_compiled)])
def test_non_finite_values_raise(backend):
    problem = get_problem("heat-decay", {"nx": 65, "nt": 4, "T": 10.0})
    # explicit Euler far beyond its stability limit overflows from a huge start
    op = kernels.make_step_operator(problem.operators, problem.dt, 0.0)
    start = np.where(problem.grid.interior_mask, 1e300, 0.0)[None] * (-1.0) ** np.arange(65)
    with pytest.raises(SolverError):
        kernels.march(op, start, 4, backend=backend)


def test_pure_python_switch():
    code = "import spdedual.kernels as k; print(k.HAVE_COMPILED, k.default_backend())"
    env = dict(os.environ, SPDEDUAL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "python"]
