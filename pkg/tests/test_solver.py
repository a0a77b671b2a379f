import dataclasses
from unittest.mock import patch

import numpy as np
import pytest

from bioconvect.config import build_run, resolve_config
from bioconvect.errors import HypothesisViolation, ParameterError, SolverDivergence
from bioconvect.grid import ScalarField, VectorField
from bioconvect.models import SourceData
from bioconvect.linsolve import SolveOptions, solve_saddle
from bioconvect.operators import assemble_oseen, div, velocity_energy_norm
from bioconvect.solver import (
    FieldState,
    PicardHistory,
    PicardRecord,
    ProblemData,
    discrete_norms,
    enforce_means,
    fixed_point_residuals,
    picard_step,
    solve_stationary,
    sweep,
)


def _make_zero_problem(grid, groups, bump):
    zero = ScalarField.zeros(grid)
    sources = SourceData.create(zero, zero.copy(), VectorField.zeros(grid), 0.0, 0.0)
    return ProblemData(grid=grid, groups=groups, r=bump, sources=sources)


def _make_record(k, increment):
    return PicardRecord(k, increment, 0.0, 0.0, {}, {})


def _checkerboard(grid):
    i, j, k = np.indices(grid.shape)
    return ScalarField(grid, np.where((i + j + k) % 2 == 0, 1.0, -1.0))


def test_certified_problem_converges(small_setup):
    problem = small_setup.problem
    start = problem.initial_state()
    state, history, report = solve_stationary(start, problem, tol=1e-10)
    assert report.converged
    assert report.iterations == len(history) < 50
    assert report.within_certified_region is True
    assert report.pi_value == pytest.approx(small_setup.certificate.pi_value)
    assert all(c.satisfied for c in report.bound_checks)
    assert max(report.max_mean_drift.values()) < 1e-8
    assert report.norms.n_H1 > 0
    assert report.norms.div_u < 1e-9


def test_converged_state_is_a_fixed_point(small_setup):
    problem = small_setup.problem
    state, _, report = solve_stationary(problem.initial_state(), problem, tol=1e-11)
    again = picard_step(state, problem)
    assert again.n_hat.values == pytest.approx(state.n_hat.values, abs=1e-9)
    assert again.c_hat.values == pytest.approx(state.c_hat.values, abs=1e-9)
    assert again.u.flat() == pytest.approx(state.u.flat(), abs=1e-9)
    assert max(report.fixed_point_residuals.values()) < 1e-7


def test_solution_conserves_totals(small_setup):
    problem = small_setup.problem
    state, _, _ = solve_stationary(problem.initial_state(), problem)
    assert state.n_hat.integral() == pytest.approx(0.0, abs=1e-10)
    assert state.c_hat.integral() == pytest.approx(0.0, abs=1e-10)
    assert state.n_total().integral() == pytest.approx(0.5)
    assert state.c_total().integral() == pytest.approx(0.25)
    assert state.u.boundary_max() == 0.0


def test_relaxed_iteration_reaches_same_state(small_setup):
    problem = small_setup.problem
    plain, _, _ = solve_stationary(problem.initial_state(), problem, tol=1e-11)
    relaxed_problem = ProblemData(
        grid=problem.grid,
        groups=problem.groups,
        r=problem.r,
        sources=problem.sources,
        relaxation=0.7,
        certificate=problem.certificate,
    )
    relaxed, history, report = solve_stationary(
        relaxed_problem.initial_state(), relaxed_problem, tol=1e-11, max_outer=200
    )
    assert report.converged
    assert relaxed.n_hat.values == pytest.approx(plain.n_hat.values, abs=1e-8)


def test_zero_data_stays_at_rest(grid4, groups, bump):
    problem = _make_zero_problem(grid4, groups, bump)
    state, history, report = solve_stationary(problem.initial_state(), problem)
    assert report.converged
    assert report.iterations == 1
    assert not np.any(state.u.flat())
    assert not np.any(state.n_hat.values)
    assert report.within_certified_region is None
    assert report.bound_checks == []


def test_strict_mode_refuses_uncertified_data():
    config = resolve_config("trace_violation")
    config.grid.cells = 4
    setup = build_run(config)
    assert not setup.certificate.exists
    with pytest.raises(HypothesisViolation) as excinfo:
        solve_stationary(setup.problem.initial_state(), setup.problem, strict=True)
    assert excinfo.value.check == "trace_poincare"


def test_growing_increments_raise_divergence(grid4, groups, bump):
    problem = _make_zero_problem(grid4, groups, bump)
    bump_field = _checkerboard(grid4)

    def fake_step(state, problem):
        n_hat = state.n_hat * 10.0 + bump_field
        new = dataclasses.replace(state, n_hat=n_hat)
        return new, {"oseen": 0.0}, {"bacteria": 0.0, "oxygen": 0.0}

    with patch("bioconvect.solver._picard_step", side_effect=fake_step):
        with pytest.raises(SolverDivergence) as excinfo:
            solve_stationary(problem.initial_state(), problem, max_outer=20)
    assert len(excinfo.value.history) == 6


def test_iteration_cap_returns_unconverged_report(small_setup):
    problem = small_setup.problem
    _, history, report = solve_stationary(
        problem.initial_state(), problem, tol=1e-14, max_outer=2
    )
    assert not report.converged
    assert report.iterations == 2
    assert len(history.to_dict()["records"]) == 2


def test_problem_data_validation(grid4, groups, bump):
    problem = _make_zero_problem(grid4, groups, bump)
    with pytest.raises(ParameterError):
        ProblemData(
            grid=grid4, groups=groups, r=bump, sources=problem.sources, relaxation=0.0
        )
    with pytest.raises(ParameterError):
        ProblemData(
            grid=grid4,
            groups=groups,
            r=bump,
            sources=problem.sources,
            oxygen_top_bc="robin",
        )


def test_random_state_is_admissible(grid6, rng):
    state = FieldState.random(grid6, rng, alpha1=0.5, alpha2=0.25)
    assert state.n_hat.mean() == pytest.approx(0.0, abs=1e-14)
    assert state.c_hat.mean() == pytest.approx(0.0, abs=1e-14)
    assert div(state.u).values == pytest.approx(0.0, abs=1e-10)
    assert discrete_norms(state).div_u < 1e-10


def test_enforce_means_keeps_totals(grid4, rng):
    state = FieldState.zeros(grid4, 0.5, 0.25)
    state.n_hat = ScalarField(grid4, rng.standard_normal(grid4.shape) + 2.0)
    fixed = enforce_means(state)
    assert fixed.n_hat.mean() == pytest.approx(0.0, abs=1e-14)
    assert fixed.alpha1 == 0.5
    assert fixed.n_total().mean() == pytest.approx(0.5)


def test_fixed_point_residuals_of_rest_state(grid4, groups, bump):
    problem = _make_zero_problem(grid4, groups, bump)
    residuals = fixed_point_residuals(problem.initial_state(), problem)
    assert set(residuals) == {"oseen", "bacteria", "oxygen"}
    assert max(residuals.values()) == 0.0


def test_history_ratios():
    history = PicardHistory()
    for k, inc in enumerate([1.0, 0.1, 0.01, 0.0], start=1):
        history.append(_make_record(k, inc))
    assert history.ratios()[:2] == pytest.approx([0.1, 0.1])
    assert history.contraction_ratio() == pytest.approx(0.1)
    assert history.to_dict()["ratios"][2] == 0.0


def test_sweep_solves_each_problem(small_setup, grid4, groups, bump):
    problems = [small_setup.problem, _make_zero_problem(grid4, groups, bump)]
    results = sweep(problems, jobs=1)
    assert len(results) == 2
    assert all(report.converged for _, _, report in results)


def test_sweep_takes_settings_per_problem(small_setup):
    problems = [small_setup.problem, small_setup.problem]
    results = sweep(problems, settings=[(1e-10, 100), (1e-10, 1)])
    assert [report.converged for _, _, report in results] == [True, False]
    assert len(results[1][1]) == 1
    with pytest.raises(ParameterError):
        sweep(problems, settings=[(1e-10, 100)])


def test_random_starts_reach_the_same_state(small_setup):
    problem = small_setup.problem
    reference, _, _ = solve_stationary(problem.initial_state(), problem, tol=1e-11)
    for seed in (1, 2, 3):
        start = FieldState.random(
            problem.grid,
            np.random.default_rng(seed),
            problem.sources.alpha1,
            problem.sources.alpha2,
        )
        state, _, report = solve_stationary(start, problem, tol=1e-11, max_outer=200)
        assert report.converged
        assert state.n_hat.values == pytest.approx(reference.n_hat.values, abs=1e-7)
        assert state.c_hat.values == pytest.approx(reference.c_hat.values, abs=1e-7)
        assert state.u.flat() == pytest.approx(reference.u.flat(), abs=1e-7)


def test_totals_hold_over_fifty_iterations(small_setup):
    slow = dataclasses.replace(small_setup.problem, relaxation=0.3)
    state, history, report = solve_stationary(
        slow.initial_state(), slow, tol=1e-14, max_outer=50
    )
    assert len(history) == 50
    assert not report.converged
    for record in history.records:
        assert max(record.mean_drift.values()) <= 1e-10
    assert state.n_hat.integral() == pytest.approx(0.0, abs=1e-14)
    assert state.c_hat.integral() == pytest.approx(0.0, abs=1e-14)
    assert state.n_total().integral() == pytest.approx(0.5, abs=1e-12)
    assert state.c_total().integral() == pytest.approx(0.25, abs=1e-12)


def _navier_stokes(grid, groups, F, tol=1e-14):
    """Oseen iteration of the momentum equation alone, without buoyancy."""
    opts = SolveOptions(tolerance=1e-12, method="uzawa", preconditioner="ilu")
    zero = ScalarField.zeros(grid)
    u = VectorField.zeros(grid)
    for _ in range(100):
        system = assemble_oseen(u, zero, groups, F)
        u_vec, _, _ = solve_saddle(system.A, system.B, system.f, system.g, opts)
        new = VectorField.from_flat(grid, u_vec)
        if velocity_energy_norm(new - u) <= tol:
            return new
        u = new
    return u


def test_zero_data_branch_matches_navier_stokes(grid4, groups, bump):
    zero = ScalarField.zeros(grid4)
    F = VectorField.from_functions(
        grid4,
        [
            lambda x, y, z: 0.5 * np.sin(np.pi * z),
            lambda x, y, z: 0.0 * x,
            lambda x, y, z: 0.0 * x,
        ],
    )
    sources = SourceData.create(zero, zero.copy(), F, 0.0, 0.0)
    problem = ProblemData(grid=grid4, groups=groups, r=bump, sources=sources)
    state, _, report = solve_stationary(problem.initial_state(), problem, tol=1e-13)
    assert report.converged
    assert np.abs(state.n_hat.values).max() == pytest.approx(0.0, abs=1e-14)
    assert np.abs(state.c_hat.values).max() == pytest.approx(0.0, abs=1e-14)
    assert velocity_energy_norm(state.u) > 0
    reference = _navier_stokes(grid4, groups, F)
    assert state.u.flat() == pytest.approx(reference.flat(), abs=1e-10)
