"""Acceptance criteria 1-8 at the stated desk-scale tolerances.

Each test records one ``criterion N: PASS|FAIL ...`` line (printed in the
pytest terminal summary) and then asserts, so a failure is reported honestly
rather than skipped.  Run directly with ``python tests/test_acceptance.py``
to print the lines without pytest.
"""
import io
import time

import numpy as np

from spdedual import cli
from spdedual.catalog import get_problem
from spdedual.config import RunConfig
from spdedual.duality import (
    IterationConfig,
    certify_upper_bound,
    interpolant_state,
    make_dual_feasible,
    random_piecewise_controls,
    solve_strong,
    solve_strong_partial,
)
from spdedual.dynamics import ControlField, solve_adjoint, solve_forward, solve_forward_paths
from spdedual.dynamics import summation_by_parts_residual
from spdedual.functionals import difference_estimate, dual_L, payoff_J, payoff_samples
from spdedual.hamiltonian import maximize_averaged, maximize_pointwise
from spdedual.mesh import OperatorCoefficients, assemble_operators, build_grid, green_residual
from spdedual.stochastic import sample_ensemble

RESULTS = {}

DESK = {"nx": 33, "nt": 256}
PATHS = 1000
SEED = 7


def record(n, ok, detail):
    RESULTS[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n])
    assert ok, RESULTS[n]


def desk_ensemble(problem, paths=PATHS, seed=SEED):
    return sample_ensemble(problem.T, problem.num_steps, paths, seed)


def test_criterion_1_green_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for grid in (build_grid(1, [0, 1], 65), build_grid(2, [(0, 1), (0, 1)], 33)):
        d = grid.dimension
        for _ in range(100):
            m = rng.normal(size=(grid.num_nodes, d, d))
            pair = assemble_operators(grid, OperatorCoefficients(m @ np.swapaxes(m, 1, 2),
                                                                 rng.normal(size=(grid.num_nodes, d))))
            X = np.where(grid.interior_mask, rng.normal(size=grid.num_nodes), 0.0)
            p = np.where(grid.interior_mask, rng.normal(size=grid.num_nodes), 0.0)
            worst = max(worst, abs(green_residual(pair, X, p)) / (np.linalg.norm(X) * np.linalg.norm(p)))
    elapsed = time.perf_counter() - t0
    record(1, worst <= 1e-12 and elapsed < 5.0,
           f"max |residual|/(|X||p|) = {worst:.2e} (tol 1e-12), {elapsed:.1f} s (limit 5 s)")


def test_criterion_2_heat_decay():
    t0 = time.perf_counter()

    def error(nx, nt):
        p = get_problem("heat-decay", {"nx": nx, "nt": nt, "T": 0.1})
        X = solve_forward(p, ControlField.constant(p, 0.0), desk_ensemble(p, 1), 0).values
        x = p.grid.coordinates[:, 0]
        return np.abs(X - np.exp(-np.pi**2 * p.times[:, None]) * np.sin(np.pi * x)).max()

    e0 = error(64, 1024)
    e1 = error(128, 4096)
    ratio = e0 / e1
    elapsed = time.perf_counter() - t0
    record(2, e0 <= 5e-3 and ratio >= 3.5 and elapsed < 10.0,
           f"error {e0:.2e} (tol 5e-3), refinement ratio {ratio:.2f} (>= 3.5), {elapsed:.1f} s (limit 10 s)")


def test_criterion_3_summation_by_parts():
    p = get_problem("lq1d", {"nx": 17, "nt": 64})
    ens = desk_ensemble(p, 50, 3)
    u = random_piecewise_controls(p, 1, 3)[0]
    X = solve_forward_paths(p, u, ens)
    P = solve_adjoint(p, X).values
    worst = 0.0
    for Xi, Pi in zip(X, P):
        scale = p.num_steps * np.abs(Xi).max() * np.abs(Pi).max()
        worst = max(worst, np.abs(summation_by_parts_residual(Xi, Pi)).max() / scale)
    record(3, worst <= 1e-10, f"max residual/scale over 50 paths = {worst:.2e} (tol 1e-10)")


def test_criterion_4_weak_duality():
    t0 = time.perf_counter()
    p = get_problem("lq1d", DESK)
    ens = desk_ensemble(p)
    pairs = [make_dual_feasible(p, interpolant_state(p))]
    for c in (-1.0, -0.3, 0.4, 1.0):
        _, X_mean = payoff_samples(p, ControlField.constant(p, c), ens, keep_mean=True)
        pairs.append(make_dual_feasible(p, X_mean))
    controls = random_piecewise_controls(p, 100, 11)
    # J on common noise is shared by all pairs, so it is computed once per control
    Js = [payoff_J(p, u, ens) for u in controls]
    violations = 0
    checks = 0
    for pair in pairs:
        L = dual_L(p, pair, ens)
        for J in Js:
            checks += 1
            violations += J.mean > L.mean + 3.0 * difference_estimate(L, J).std_error
    elapsed = time.perf_counter() - t0
    record(4, violations == 0 and elapsed < 120.0,
           f"{violations} violations in {checks} checks (5 pairs x 100 controls), {elapsed:.1f} s (limit 120 s)")


def _refined(params):
    return {**params, "nx": (params["nx"] - 1) * 2 + 1, "nt": params["nt"] * 4}


def test_criterion_5_strong_duality():
    t0 = time.perf_counter()
    lines = []
    ok = True
    # relaxation 1 for the quadratic problem; the bang-bang problem uses 0.5
    for name, omega in (("lq1d", 1.0), ("bangbang", 0.5)):
        it = IterationConfig(relaxation=omega)
        gaps = []
        for level, params in enumerate((DESK, _refined(DESK))):
            p = get_problem(name, params)
            rep = solve_strong(p, desk_ensemble(p, PATHS * 4**level), it)
            gaps.append(rep.relative_gap)
            level_ok = rep.converged and rep.max_condition_residual <= 1e-6 and abs(rep.relative_gap) <= 1e-2
            ok &= level_ok
            lines.append(f"{name} L{level}: rel gap {rep.relative_gap:.2e}, residual {rep.max_condition_residual:.1e}, "
                         f"{rep.iterations} it{'' if rep.converged else ' NOT converged'}")
        ratio = gaps[1] / gaps[0]
        ok &= ratio <= 0.6
        lines.append(f"{name} ratio {ratio:.2f} (<= 0.6)")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300.0
    record(5, ok, "; ".join(lines) + f"; {elapsed:.0f} s (limit 300 s)")


def test_criterion_6_hamiltonian_oracle():
    rng = np.random.default_rng(6)
    worst = 0.0
    for name in ("lq1d", "bangbang"):
        p = get_problem(name, DESK)
        pv = rng.uniform(-5, 5, 1000)
        x = p.grid.coordinates[rng.integers(0, p.grid.num_nodes, 1000)]
        val, _, _ = maximize_pointwise(p, 0.0, x, pv)
        worst = max(worst, np.abs(val - p.closed_form_H(pv)[0]).max())
    p = get_problem("lq1d", DESK)
    n = 10_000
    pv = rng.normal(scale=3, size=n)
    x = p.grid.coordinates[rng.integers(0, p.grid.num_nodes, n)]
    t = rng.uniform(0, p.T, n)
    u = p.control_set.sample(rng, n)
    H, _, _ = maximize_pointwise(p, t, x, pv)
    dominance = int(np.sum(H < p.G(t, x, u) + pv * p.C(t, x, u) - 1e-12))
    record(6, worst <= 1e-6 and dominance == 0,
           f"closed-form error {worst:.1e} (tol 1e-6), {dominance} dominance violations in 1e4")


def test_criterion_7_partial_observation():
    p = get_problem("lq1d-po", DESK)
    ens = desk_ensemble(p)
    _, X_mean = payoff_samples(p, ControlField.constant(p, 0.0), ens, keep_mean=True)
    pair = make_dual_feasible(p, X_mean)
    bound = certify_upper_bound(p, pair, random_piecewise_controls(p, 100, 13), ens, averaged=True)
    rep = solve_strong_partial(p, ens, IterationConfig(relaxation=0.5))
    # averaged vs integrated pointwise Hamiltonian at every time level of the sweep's adjoint
    pm = rep.pair.p.values
    Havg, _, _ = maximize_averaged(p, p.times, pm)
    Hpt, _, _ = maximize_pointwise(p, p.times[:, None], p.grid.coordinates, pm)
    excess = float(np.max(Havg - Hpt @ p.grid.quadrature_weight))
    ok = (not bound.violations and rep.converged and abs(rep.relative_gap) <= 1e-2 and excess <= 1e-12)
    record(7, ok, f"{len(bound.violations)} violations over 100 controls, partial rel gap {rep.relative_gap:.2e} "
                  f"({rep.iterations} it), max(calH - int H) = {excess:.1e}")


def test_criterion_8_reproducibility(tmp_path):
    base = RunConfig(problem="lq1d", nx=33, nt=256, paths=PATHS, seed=SEED, relaxation=1.0)
    outs = []
    for threads in (1, 2):
        d = tmp_path / f"t{threads}"
        code = cli.cmd_gap(base.with_values(threads=threads, output_dir=str(d)), out=io.StringIO())
        outs.append((code, (d / "gap.json").read_bytes()))
    same = outs[0][1] == outs[1][1]
    record(8, same and outs[0][0] == 0, f"gap.json byte-identical for threads 1 and 2: {same}")


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_criterion")):
        try:
            if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            pass
