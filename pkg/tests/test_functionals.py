import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdedual.catalog import _full, get_problem
from spdedual.duality import interpolant_state, make_dual_feasible, random_piecewise_controls
from spdedual.dynamics import ControlField, solve_forward_paths
from spdedual.errors import FeasibilityError
from spdedual.functionals import (
    DualPair,
    Estimate,
    difference_estimate,
    dual_L,
    dual_L1,
    lagrangian_L,
    payoff_J,
    payoff_samples,
)
from spdedual.stochastic import sample_ensemble


def small_lq(**kw):
    return get_problem("lq1d", {"nx": 9, "nt": 32, **kw})


def ensemble_for(problem, paths, seed):
    return sample_ensemble(problem.T, problem.num_steps, paths, seed)


def dense_oracle(problem, u0, increments):
    """Implicit Euler with a dense interior matrix, independent of the package solvers."""
    P = problem.params
    n = problem.grid.num_nodes
    h = 1.0 / (n - 1)
    m = n - 2
    A = (np.diag(-2.0 * np.ones(m)) + np.diag(np.ones(m - 1), 1) + np.diag(np.ones(m - 1), -1)) * P["kappa"] / h**2
    dt = P["T"] / P["nt"]
    M = np.eye(m) - dt * A
    x = np.linspace(0, 1, n)[1:-1]
    w = np.full(m, h)
    out = []
    for dB in increments:
        X = P["A"] * np.sin(np.pi * x)
        total = 0.0
        for k in range(P["nt"]):
            # G is constant in x, so its trapezoid integral over [0, 1] is exact
            total += dt * (w @ (-P["q"] * X**2) - P["r"] * u0**2)
            X = np.linalg.solve(M, X + dt * P["c"] * u0 + P["s"] * dB[k])
        out.append(total)
    return np.array(out)


def test_unit_payoff():
    p = get_problem("zero", {"nx": 9, "nt": 16}).variant(G=lambda t, x, u: _full(np.ones_like(u[..., 0]), t, x))
    est = payoff_J(p, ControlField.constant(p, 0.0), ensemble_for(p, 5, 0))
    assert est.mean == pytest.approx(1.0, rel=1e-14)
    assert est.std_error == pytest.approx(0.0, abs=1e-15)


def test_zero_problem_gives_zero():
    p = get_problem("zero")
    ens = ensemble_for(p, 10, 1)
    pair = make_dual_feasible(p, interpolant_state(p))
    u = ControlField.constant(p, 0.5)
    for est in (payoff_J(p, u, ens), lagrangian_L(p, u, pair, ens), dual_L(p, pair, ens)):
        assert est.mean == 0.0 and est.std_error == 0.0


def test_payoff_matches_dense_oracle_same_noise():
    p = get_problem("lq1d", {"nx": 17, "nt": 64})
    ens = ensemble_for(p, 2000, 3)
    u0 = 0.3
    est = payoff_J(p, ControlField.constant(p, u0), ens)
    ref = dense_oracle(p, u0, ens.increments)
    np.testing.assert_allclose(est.samples, ref, rtol=1e-10, atol=1e-13)


def test_payoff_matches_dense_oracle_independent_noise():
    p = get_problem("lq1d", {"nx": 17, "nt": 64})
    est = payoff_J(p, ControlField.constant(p, 0.0), ensemble_for(p, 2000, 4))
    ref = dense_oracle(p, 0.0, ensemble_for(p, 2000, 99).increments)
    joint = np.hypot(est.std_error, ref.std(ddof=1) / np.sqrt(len(ref)))
    assert abs(est.mean - ref.mean()) <= 3 * joint


def test_estimate_statistics():
    est = Estimate.from_samples([1.0, 2.0, 3.0, 4.0], seed=7)
    assert est.mean == 2.5
    assert est.std_error == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert est.to_dict() == {"mean": 2.5, "std_error": est.std_error, "num_paths": 4, "seed": 7}
    d = difference_estimate(est, Estimate.from_samples([1.0, 2.0, 3.0, 4.0], 7))
    assert d.mean == 0.0 and d.std_error == 0.0
    with pytest.raises(ValueError):
        difference_estimate(est, Estimate.from_samples([1.0], 7))


@pytest.mark.parametrize("u0", [0.0, 0.5, -0.8])
def test_exact_discrete_identity(u0):
    # with the pair equal to the state itself, L - J is the left-point endpoint term only
    p = small_lq()
    ens = ensemble_for(p, 50, 11)
    u = ControlField.constant(p, u0)
    X = solve_forward_paths(p, u, ens)
    pair = make_dual_feasible(p, X)
    J = payoff_J(p, u, ens)
    L = lagrangian_L(p, u, pair, ens)
    t, x, w = p.times, p.grid.coordinates, p.grid.quadrature_weight
    end = p.dt * ((X[:, -1] * p.F_X(t[-1], x, X[:, -1]) - X[:, 0] * p.F_X(t[0], x, X[:, 0])) @ w)
    np.testing.assert_allclose(L.samples - J.samples, end, atol=1e-12)


@pytest.mark.xfail(strict=True, reason="left-point quadrature leaves an O(dt) endpoint term far above the CRN error; "
                                      "see test_exact_discrete_identity")
def test_matched_pair_gap_within_three_standard_errors():
    p = get_problem("lq1d")
    ens = ensemble_for(p, 1000, 7)
    u = ControlField.constant(p, 0.0)
    pair = make_dual_feasible(p, solve_forward_paths(p, u, ens))
    J = payoff_J(p, u, ens)
    L = lagrangian_L(p, u, pair, ens)
    assert abs(L.mean - J.mean) <= 3 * difference_estimate(L, J).std_error


def test_deterministic_cancellation_is_first_order():
    gaps = []
    for nt in (64, 128, 256, 512):
        p = get_problem("lq1d", {"nx": 17, "nt": nt, "s": 0.0})
        ens = ensemble_for(p, 1, 0)
        u = ControlField.constant(p, 0.2)
        pair = make_dual_feasible(p, solve_forward_paths(p, u, ens)[0])
        gaps.append(lagrangian_L(p, u, pair, ens).mean - payoff_J(p, u, ens).mean)
    ratios = np.array(gaps[:-1]) / np.array(gaps[1:])
    np.testing.assert_allclose(ratios, 2.0, rtol=0.02)


def test_dual_dominates_lagrangian_pathwise():
    p = small_lq()
    ens = ensemble_for(p, 100, 5)
    pair = make_dual_feasible(p, interpolant_state(p))
    D = dual_L(p, pair, ens)
    for u in random_piecewise_controls(p, 10, 3):
        L = lagrangian_L(p, u, pair, ens)
        assert np.all(D.samples >= L.samples - 1e-12)


def test_ensemble_pair_dominance():
    p = small_lq()
    ens = ensemble_for(p, 40, 5)
    u = ControlField.constant(p, 0.1)
    pair = make_dual_feasible(p, solve_forward_paths(p, u, ens))
    assert np.all(dual_L(p, pair, ens).samples >= lagrangian_L(p, u, pair, ens).samples - 1e-12)


def test_averaged_dual_below_pointwise_dual():
    p = get_problem("lq1d-po", {"nx": 9, "nt": 16})
    ens = ensemble_for(p, 20, 2)
    pair = make_dual_feasible(p, interpolant_state(p))
    assert np.all(dual_L1(p, pair, ens).samples <= dual_L(p, pair, ens).samples + 1e-12)


def test_averaged_dual_equals_pointwise_when_hamiltonian_vanishes():
    p = get_problem("zero", {"nx": 9, "nt": 16})
    ens = ensemble_for(p, 5, 2)
    pair = make_dual_feasible(p, interpolant_state(p))
    np.testing.assert_array_equal(dual_L1(p, pair, ens).samples, dual_L(p, pair, ens).samples)


def test_uncertified_pair_rejected():
    p = small_lq()
    ens = ensemble_for(p, 3, 0)
    good = make_dual_feasible(p, interpolant_state(p))
    bad = DualPair(good.X, good.p, {})
    with pytest.raises(FeasibilityError):
        dual_L(p, bad, ens)
    with pytest.raises(FeasibilityError):
        lagrangian_L(p, ControlField.constant(p, 0.0), bad, ens)


def test_ensemble_pair_path_count_checked():
    p = small_lq()
    ens = ensemble_for(p, 4, 0)
    X = solve_forward_paths(p, ControlField.constant(p, 0.0), ens)
    pair = make_dual_feasible(p, X[:3])
    with pytest.raises(FeasibilityError, match="paths"):
        dual_L(p, pair, ens)


@settings(max_examples=10)
@given(seed=st.integers(0, 10_000), q=st.floats(0.2, 3.0), beta=st.floats(-1.0, 1.0))
def test_weak_duality_small_scale(seed, q, beta):
    p = get_problem("lq1d", {"nx": 9, "nt": 16, "q": q, "beta": beta})
    ens = ensemble_for(p, 200, seed)
    # pair from the mean state under a random constant control
    u_pair = ControlField.constant(p, np.random.default_rng(seed).uniform(-1, 1))
    _, X_mean = payoff_samples(p, u_pair, ens, keep_mean=True)
    pair = make_dual_feasible(p, X_mean)
    D = dual_L(p, pair, ens)
    for u in random_piecewise_controls(p, 5, seed):
        J = payoff_J(p, u, ens)
        assert J.mean <= D.mean + 3 * difference_estimate(D, J).std_error


def test_results_independent_of_threads():
    p = small_lq()
    ens = ensemble_for(p, 200, 8)
    u = random_piecewise_controls(p, 1, 0)[0]
    pair = make_dual_feasible(p, interpolant_state(p))
    for fn in (lambda th: payoff_J(p, u, ens, threads=th), lambda th: dual_L(p, pair, ens, threads=th),
               lambda th: lagrangian_L(p, u, pair, ens, threads=th)):
        a, b = fn(1), fn(3)
        np.testing.assert_array_equal(a.samples, b.samples)
        assert a.mean == b.mean and a.std_error == b.std_error


def test_mean_state_independent_of_threads():
    p = small_lq()
    ens = ensemble_for(p, 150, 8)
    u = ControlField.constant(p, 0.3)
    _, m1 = payoff_samples(p, u, ens, threads=1, keep_mean=True)
    _, m3 = payoff_samples(p, u, ens, threads=3, keep_mean=True)
    np.testing.assert_array_equal(m1, m3)
