import csv
import io
import json
import math

import numpy as np
import pytest

from spdedual.catalog import get_problem
from spdedual.duality import (
    TRACE_COLUMNS,
    IterationConfig,
    certify_upper_bound,
    interpolant_state,
    make_dual_feasible,
    random_piecewise_controls,
    solve_strong,
    solve_strong_partial,
)
from spdedual.dynamics import ControlField, solve_forward_paths
from spdedual.errors import ConfigError, FeasibilityError, GridError
from spdedual.functionals import payoff_J
from spdedual.stochastic import FieldPath, sample_ensemble


def ens_for(problem, paths, seed=0):
    return sample_ensemble(problem.T, problem.num_steps, paths, seed)


class TestMakeDualFeasible:
    p = get_problem("lq1d", {"nx": 9, "nt": 16})

    def test_initial_condition_violation_names_level_zero(self):
        X = interpolant_state(self.p)
        X[0, 4] += 1e-3
        with pytest.raises(FeasibilityError, match="time level 0, node 4"):
            make_dual_feasible(self.p, X)

    def test_boundary_violation_names_level(self):
        X = interpolant_state(self.p)
        X[5, 0] = 0.5
        with pytest.raises(FeasibilityError, match="boundary condition violated at time level 5, node 0"):
            make_dual_feasible(self.p, X)

    def test_non_finite_rejected(self):
        X = interpolant_state(self.p)
        X[3, 3] = np.nan
        with pytest.raises(FeasibilityError):
            make_dual_feasible(self.p, X)

    def test_shape_and_grid_checked(self):
        with pytest.raises(GridError):
            make_dual_feasible(self.p, np.zeros((16, 9)))
        other = get_problem("lq1d", {"nx": 11, "nt": 16})
        with pytest.raises(GridError):
            make_dual_feasible(self.p, FieldPath(other.grid, interpolant_state(other)))

    def test_interpolant_pair_certificate(self):
        pair = make_dual_feasible(self.p, interpolant_state(self.p))
        c = pair.certificate
        assert pair.feasible and not pair.is_ensemble
        assert c["initial_residual"] == 0.0 and c["boundary_residual"] == 0.0
        assert c["terminal_residual"] == 0.0 and c["adjoint_boundary_residual"] == 0.0
        assert c["adjoint_residual"] <= 1e-12

    def test_rounding_is_snapped(self):
        X = interpolant_state(self.p)
        X[0, 3] += 1e-14
        pair = make_dual_feasible(self.p, X)
        np.testing.assert_array_equal(pair.X.values[0], self.p.xi_values)

    def test_ensemble_candidate(self):
        ens = ens_for(self.p, 3)
        X = solve_forward_paths(self.p, ControlField.constant(self.p, 0.2), ens)
        pair = make_dual_feasible(self.p, X)
        assert pair.is_ensemble and pair.p.values.shape == X.shape


def test_zero_problem_has_no_gap():
    p = get_problem("zero")
    rep = solve_strong(p, ens_for(p, 20))
    assert rep.converged and rep.iterations == 1
    assert rep.gap == 0.0 and rep.primal_estimate.mean == 0.0


def test_zero_problem_certificate():
    p = get_problem("zero")
    pair = make_dual_feasible(p, interpolant_state(p))
    rep = certify_upper_bound(p, pair, random_piecewise_controls(p, 5, 1), ens_for(p, 10))
    assert rep.violations == [] and rep.gap == 0.0


def test_control_free_dynamics_converge_in_one_sweep():
    p = get_problem("lq1d", {"nx": 9, "nt": 16, "c": 0.0})
    rep = solve_strong(p, ens_for(p, 30))
    assert rep.converged and rep.iterations == 1
    np.testing.assert_array_equal(rep.control.values, 0.0)


def test_bangbang_sign_structure_and_enumeration():
    p = get_problem("bangbang", {"nx": 9, "nt": 16, "s": 0.0})
    ens = ens_for(p, 1)
    rep = solve_strong(p, ens)
    assert rep.converged
    u = rep.control.values[:-1, :, 0]
    pm = rep.pair.p.values[:-1]
    interior = p.grid.interior_mask
    # relaxed mixing reaches the vertices geometrically, within the sweep tolerance
    np.testing.assert_allclose(u[:, interior], np.sign(pm[:, interior]), atol=1e-6)
    np.testing.assert_array_equal(u[:, ~interior], 0.0)

    # every +-1 control constant on a 4 x 4 block partition, solved in one batch
    bits = (np.arange(2**16)[:, None] >> np.arange(16)) & 1
    blocks = (2.0 * bits - 1.0).reshape(-1, 4, 4)
    t_blk = np.minimum((np.arange(17) * 4) // 16, 3)
    x_blk = np.minimum((np.arange(9) * 4) // 9, 3)
    U = blocks[:, t_blk][:, :, x_blk][..., None]
    batch = sample_ensemble(p.T, p.num_steps, len(U), 0)
    values = payoff_J(p, ControlField(U), batch).samples
    best = values.max()
    np.testing.assert_array_equal(blocks[np.argmax(values)], -1.0)
    # the reported control sits within the sweep tolerance of the vertex
    assert rep.primal_estimate.mean >= best - 1e-7 * p.T


def test_sandwich_along_trace():
    p = get_problem("lq1d", {"nx": 9, "nt": 32})
    rep = solve_strong(p, ens_for(p, 200, 3))
    assert rep.converged
    for row in rep.per_iteration_trace:
        assert row["J_mean"] <= row["L_mean"] + 3 * math.hypot(row["J_se"], row["L_se"])
        assert row["gap"] == pytest.approx(row["L_mean"] - row["J_mean"])
    changes = [r["control_change"] for r in rep.per_iteration_trace]
    assert changes[-1] < 1e-7
    assert rep.max_condition_residual <= 1e-6


def test_partial_observation_value_below_full():
    p = get_problem("lq1d-po", {"nx": 9, "nt": 32})
    ens = ens_for(p, 200, 4)
    full = solve_strong(p, ens)
    part = solve_strong_partial(p, ens)
    assert part.converged and part.control.is_space_constant
    assert part.primal_estimate.mean <= full.primal_estimate.mean + 3 * full.primal_estimate.std_error
    assert part.mode == "partial-mean-field"


def test_averaged_certificate_needs_space_constant_controls():
    p = get_problem("lq1d-po", {"nx": 9, "nt": 16})
    pair = make_dual_feasible(p, interpolant_state(p))
    ens = ens_for(p, 20)
    u = [ControlField.constant(p, 0.1), ControlField.piecewise_constant(p, [[0.1, 0.2]])]
    with pytest.raises(ConfigError, match="space-constant"):
        certify_upper_bound(p, pair, u, ens, averaged=True)
    rep = certify_upper_bound(p, pair, random_piecewise_controls(p, 10, 2), ens, averaged=True)
    assert rep.violations == []


def test_non_concave_problem_refused():
    p = get_problem("lq1d", {"nx": 9, "nt": 8}).variant(concave_in_X=False)
    with pytest.raises(FeasibilityError, match="concave"):
        solve_strong(p, ens_for(p, 5))


def test_per_path_mode_is_not_admissible():
    p = get_problem("lq1d", {"nx": 9, "nt": 16})
    rep = solve_strong(p, ens_for(p, 20), IterationConfig(mode="per-path", max_iterations=30))
    assert not rep.admissible and rep.mode == "per-path"
    assert rep.pair.is_ensemble
    with pytest.raises(ConfigError):
        solve_strong_partial(p, ens_for(p, 20), IterationConfig(mode="per-path"))


@pytest.mark.parametrize("kw", [{"relaxation": 0.0}, {"relaxation": 1.5}, {"max_iterations": 0},
                                {"control_change_tolerance": 0.0}, {"mode": "other"}])
def test_iteration_config_validation(kw):
    with pytest.raises(ConfigError):
        IterationConfig(**kw)


def test_report_serialization():
    p = get_problem("lq1d", {"nx": 9, "nt": 16})
    rep = solve_strong(p, ens_for(p, 20), IterationConfig(max_iterations=3))
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["iterations"] == 3 and not d["converged"]
    assert len(d["per_iteration_trace"]) == 3
    rows = list(csv.reader(io.StringIO(rep.trace_csv())))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == 4
    assert float(rows[1][1]) == rep.per_iteration_trace[0]["J_mean"]


def test_empty_control_list():
    p = get_problem("lq1d", {"nx": 9, "nt": 8})
    pair = make_dual_feasible(p, interpolant_state(p))
    with pytest.raises(ConfigError):
        certify_upper_bound(p, pair, [], ens_for(p, 3))


def test_random_controls_are_reproducible_and_admissible():
    p = get_problem("lq1d", {"nx": 9, "nt": 8})
    a = random_piecewise_controls(p, 3, 5)
    b = random_piecewise_controls(p, 3, 5)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.values, y.values)
        assert p.control_set.contains(x.values)
    po = get_problem("lq1d-po", {"nx": 9, "nt": 8})
    assert all(u.is_space_constant for u in random_piecewise_controls(po, 3, 5))
