"""Tests for the Krylov, saddle-point and bordered solvers."""

import numpy as np
import pytest
import scipy.sparse as sp

from bioconvect.errors import ParameterError, SingularSystemError
from bioconvect.grid import MacGrid, ScalarField, VectorField
from bioconvect.linsolve import (
    SolveOptions,
    dense_direct,
    make_preconditioner,
    saddle_dense_system,
    solve_bordered,
    solve_linear,
    solve_saddle,
    solve_spd,
)
from bioconvect.models import FACE_TAGS, ChamberDomain, DimensionlessGroups
from bioconvect.operators import (
    LinearSystem,
    assemble_oseen,
    divergence_matrix,
    laplacian_scalar_matrix,
    neumann_laplacian_matrix,
    random_solenoidal,
    scalar_advection_stencil,
)


def _dirichlet_operator(grid):
    return (-laplacian_scalar_matrix(grid, frozenset(FACE_TAGS))).tocsr()


def test_solve_options_validation():
    with pytest.raises(ParameterError):
        SolveOptions(tolerance=0.0)
    with pytest.raises(ParameterError):
        SolveOptions(method="jacobi")
    with pytest.raises(ParameterError):
        SolveOptions(preconditioner="amg")
    with pytest.raises(ParameterError):
        SolveOptions(max_iterations=0)


def test_cg_matches_dense(grid6, rng):
    A = _dirichlet_operator(grid6)
    b = rng.standard_normal(grid6.n_cells)
    opts = SolveOptions(tolerance=1e-12, method="cg", preconditioner="jacobi")
    x, stats = solve_spd(A, b, opts)
    assert stats.converged
    assert stats.residual <= 1e-12
    assert x == pytest.approx(np.linalg.solve(A.toarray(), b), rel=1e-8, abs=1e-10)



def test_cg_iterations_grow_like_inverse_mesh_width():
    rng = np.random.default_rng(7)
    opts = SolveOptions(tolerance=1e-10, method="cg", preconditioner="none")
    iterations = []
    for n in (8, 16):
        grid = MacGrid.uniform(ChamberDomain(), n)
        b = rng.standard_normal(grid.n_cells)
        _, stats = solve_spd(_dirichlet_operator(grid), b, opts)
        assert stats.converged
        iterations.append(stats.iterations)
    assert 1.4 < iterations[1] / iterations[0] < 3.0


@pytest.mark.parametrize("method", ["gmres", "bicgstab"])
@pytest.mark.parametrize("preconditioner", ["none", "jacobi", "ilu"])
def test_nonsymmetric_solvers_match_dense(grid4, rng, method, preconditioner):
    u = random_solenoidal(grid4, rng, scale=0.3)
    advection = scalar_advection_stencil(grid4).matrix(u.flat())
    A = (_dirichlet_operator(grid4) + advection).tocsr()
    b = rng.standard_normal(grid4.n_cells)
    opts = SolveOptions(tolerance=1e-12, method=method, preconditioner=preconditioner)
    x, stats = solve_linear(A, b, opts)
    assert stats.converged
    assert x == pytest.approx(np.linalg.solve(A.toarray(), b), rel=1e-8, abs=1e-10)


def test_solve_linear_rejects_saddle_method(grid4):
    A = _dirichlet_operator(grid4)
    with pytest.raises(ParameterError):
        solve_linear(A, np.ones(grid4.n_cells), SolveOptions(method="uzawa"))


def test_make_preconditioner_rejects_unknown_kind(grid4):
    with pytest.raises(ParameterError):
        make_preconditioner(_dirichlet_operator(grid4), "multigrid")


def test_bordered_neumann_problem(grid6, rng):
    rhs = ScalarField(grid6, rng.standard_normal(grid6.shape)).minus_mean()
    system = LinearSystem(
        grid=grid6,
        matrix=(-neumann_laplacian_matrix(grid6)).tocsr(),
        rhs=rhs.flat(),
        kind="bacteria",
        constraint=np.full(grid6.n_cells, grid6.cell_volume),
    )
    x, lam, stats = solve_bordered(system, SolveOptions(tolerance=1e-12))
    assert stats.converged
    assert abs(x.sum()) * grid6.cell_volume < 1e-10
    assert lam == pytest.approx(0.0, abs=1e-8)
    assert system.relative_residual(x, lam) < 1e-9


def test_bordered_dense_path(grid4, rng):
    rhs = ScalarField(grid4, rng.standard_normal(grid4.shape)).minus_mean()
    system = LinearSystem(
        grid=grid4,
        matrix=(-neumann_laplacian_matrix(grid4)).tocsr(),
        rhs=rhs.flat(),
        kind="oxygen",
        constraint=np.full(grid4.n_cells, grid4.cell_volume),
    )
    x_dense, _, _ = solve_bordered(system, SolveOptions(method="dense"))
    x_iter, _, _ = solve_bordered(system, SolveOptions(tolerance=1e-12))
    assert x_iter == pytest.approx(x_dense, rel=1e-7, abs=1e-9)


def test_saddle_solve_matches_dense(grid4, groups, rng):
    n_hat = ScalarField(grid4, rng.standard_normal(grid4.shape)).minus_mean()
    zero = VectorField.zeros(grid4)
    system = assemble_oseen(zero, n_hat, groups, zero)
    opts = SolveOptions(tolerance=1e-12, method="uzawa")
    u, p, stats = solve_saddle(
        system.A, system.B, system.f, system.g, opts
    )
    assert stats.converged
    assert stats.divergence_residual < 1e-9
    assert p.mean() == pytest.approx(0.0, abs=1e-12)

    mat, rhs = saddle_dense_system(system)
    sol, _ = dense_direct(mat, rhs)
    nf = grid4.n_faces
    assert u == pytest.approx(sol[:nf], rel=1e-6, abs=1e-9)
    assert p == pytest.approx(sol[nf : nf + grid4.n_cells], rel=1e-6, abs=1e-9)
    div = divergence_matrix(grid4) @ u
    assert np.abs(div).max() < 1e-8


def test_saddle_zero_data_returns_zero(grid4):
    decoupled = DimensionlessGroups(1.0, 0.0, 0.0, 1.0, 0.0)
    zero_u = VectorField.zeros(grid4)
    system = assemble_oseen(zero_u, ScalarField.zeros(grid4), decoupled, zero_u)
    u, p, stats = solve_saddle(system.A, system.B, system.f, system.g)
    assert stats.converged
    assert not np.any(u)
    assert not np.any(p)


def test_dense_direct_reports_singular_matrix():
    M = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularSystemError) as excinfo:
        dense_direct(M, np.array([1.0, 2.0]))
    assert excinfo.value.smallest_pivot is not None


def test_dense_direct_solves_small_system():
    M = np.array([[4.0, 1.0], [2.0, 3.0]])
    x, stats = dense_direct(M, np.array([1.0, 2.0]))
    assert x == pytest.approx(np.linalg.solve(M, [1.0, 2.0]))
    assert stats.converged
    assert stats.smallest_pivot is not None
