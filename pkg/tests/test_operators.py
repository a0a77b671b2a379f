import math

import numpy as np
import pytest

from bioconvect.errors import BoundaryTagError
from bioconvect.grid import MacGrid, ScalarField, VectorField
from bioconvect.models import UPPER_FACES
from bioconvect.operators import (
    LinearSystem,
    advect_scalar,
    advect_velocity,
    apply_boundary_conditions,
    assemble_bacteria,
    assemble_oseen,
    assemble_oxygen,
    buoyancy_matrix,
    chemotaxis_term,
    div,
    divergence_matrix,
    divergence_ratio,
    grad,
    gradient_matrix,
    gradient_norm,
    interior_projector,
    laplacian_scalar,
    laplacian_scalar_matrix,
    laplacian_velocity,
    laplacian_velocity_matrix,
    neumann_laplacian_matrix,
    random_solenoidal,
    sbp_boundary_term,
    scalar_advection_stencil,
    velocity_advection_stencil,
    velocity_energy_norm,
    wall_flux_residual,
)


def _random_scalar(grid, rng):
    return ScalarField(grid, rng.standard_normal(grid.shape))


def test_gradient_is_negative_divergence_transpose(grid6):
    G = gradient_matrix(grid6)
    D = divergence_matrix(grid6)
    P = interior_projector(grid6)
    diff = (G + P @ D.T).toarray()
    assert np.abs(diff).max() == pytest.approx(0.0, abs=1e-12)


def test_gradient_of_linear_field(grid6):
    s = ScalarField.from_function(grid6, lambda x, y, z: 2.0 * x)
    g1, g2, g3 = grad(s).components
    assert g1[1:-1] == pytest.approx(np.full_like(g1[1:-1], 2.0))
    assert np.abs(g1[[0, -1]]).max() == 0.0
    assert np.abs(g2).max() == pytest.approx(0.0, abs=1e-12)
    assert np.abs(g3).max() == pytest.approx(0.0, abs=1e-12)


def test_summation_by_parts(grid6, rng):
    s = _random_scalar(grid6, rng)
    v = VectorField.from_flat(grid6, rng.standard_normal(grid6.n_faces))
    vol = grid6.cell_volume
    lhs = vol * float((gradient_matrix(grid6) @ s.flat()) @ v.flat())
    lhs += vol * float(s.flat() @ (divergence_matrix(grid6) @ v.flat()))
    assert lhs == pytest.approx(sbp_boundary_term(s, v), rel=1e-10, abs=1e-12)


def test_neumann_laplacian_kills_constants(grid6):
    lap = neumann_laplacian_matrix(grid6)
    assert np.abs(lap @ np.ones(grid6.n_cells)).max() == pytest.approx(0.0, abs=1e-10)
    assert np.abs((lap - lap.T).toarray()).max() == pytest.approx(0.0, abs=1e-10)


def test_neumann_laplacian_is_negative_semidefinite(grid6, rng):
    lap = neumann_laplacian_matrix(grid6)
    for _ in range(5):
        x = rng.standard_normal(grid6.n_cells)
        assert x @ (lap @ x) <= 0.0


def test_gradient_norm_matches_laplacian_energy(grid6, rng):
    s = _random_scalar(grid6, rng)
    lap = neumann_laplacian_matrix(grid6)
    energy = -grid6.cell_volume * float(s.flat() @ (lap @ s.flat()))
    assert gradient_norm(s) ** 2 == pytest.approx(energy, rel=1e-10)


def test_dirichlet_closure_on_upper_walls(grid4):
    lap = laplacian_scalar_matrix(grid4, UPPER_FACES)
    out = (lap @ np.ones(grid4.n_cells)).reshape(grid4.shape)
    h = grid4.h1
    # interior column, one cell below the top wall
    assert out[1, 1, -1] == pytest.approx(-2.0 / h**2)
    assert out[1, 1, 0] == pytest.approx(0.0, abs=1e-10)
    assert out[0, 0, -1] == pytest.approx(-6.0 / h**2)
    assert np.linalg.eigvalsh(lap.toarray()).max() < 0.0


def test_unknown_dirichlet_face(grid4):
    with pytest.raises(BoundaryTagError):
        laplacian_scalar_matrix(grid4, frozenset({"w+"}))


def test_scalar_laplacian_exact_on_quadratics(grid6):
    s = ScalarField.from_function(grid6, lambda x, y, z: x**2)
    lap = laplacian_scalar(s)
    assert lap.values[1:-1] == pytest.approx(np.full_like(lap.values[1:-1], 2.0))


def test_velocity_laplacian_field_form(grid6, rng):
    u = random_solenoidal(grid6, rng)
    lap = laplacian_velocity(u).flat()
    assert lap == pytest.approx(laplacian_velocity_matrix(grid6) @ u.flat())
    assert np.abs(lap[grid6.boundary_faces]).max() == 0.0


def test_velocity_laplacian_is_symmetric_and_definite(grid6, rng):
    lap = laplacian_velocity_matrix(grid6)
    assert np.abs((lap - lap.T).toarray()).max() == pytest.approx(0.0, abs=1e-10)
    u = random_solenoidal(grid6, rng)
    assert velocity_energy_norm(u) > 0.0
    wall = np.zeros(grid6.n_faces)
    wall[grid6.boundary_faces] = 1.0
    assert np.abs(lap @ wall).max() == 0.0


def test_random_solenoidal_is_divergence_free(grid6, rng):
    u = random_solenoidal(grid6, rng)
    assert u.boundary_max() == 0.0
    assert div(u).values == pytest.approx(0.0, abs=1e-10)
    assert divergence_ratio(u) < 1e-10


def test_scalar_advection_is_skew(grid6, rng):
    u = VectorField.from_flat(grid6, rng.standard_normal(grid6.n_faces))
    K = scalar_advection_stencil(grid6).matrix(u.flat())
    assert np.abs((K + K.T).toarray()).max() == pytest.approx(0.0, abs=1e-12)


def test_velocity_advection_is_skew(grid6, rng):
    u = VectorField.from_flat(grid6, rng.standard_normal(grid6.n_faces))
    K = velocity_advection_stencil(grid6).matrix(u.flat())
    assert np.abs((K + K.T).toarray()).max() == pytest.approx(0.0, abs=1e-12)


def test_trilinear_form_vanishes_on_diagonal(grid6, rng):
    u = random_solenoidal(grid6, rng)
    w = VectorField.from_flat(grid6, rng.standard_normal(grid6.n_faces))
    form = float(w.flat() @ advect_velocity(u, w).flat())
    assert form == pytest.approx(0.0, abs=1e-10)


def test_advection_jacobian_matches_matrix(grid4, rng):
    stencil = velocity_advection_stencil(grid4)
    u = rng.standard_normal(grid4.n_faces)
    v = rng.standard_normal(grid4.n_faces)
    assert stencil.jacobian(v) @ u == pytest.approx(stencil.matrix(u) @ v)


def test_solenoidal_advection_of_constant(grid6, rng):
    u = random_solenoidal(grid6, rng)
    out = advect_scalar(u, ScalarField.constant(grid6, 3.0))
    assert np.abs(out.values).max() == pytest.approx(0.0, abs=1e-10)


def test_chemotaxis_term_is_conservative(grid6, rng, bump):
    n = ScalarField(grid6, 0.5 + 0.1 * rng.standard_normal(grid6.shape))
    c = ScalarField(grid6, 0.25 + 0.05 * rng.standard_normal(grid6.shape))
    term = chemotaxis_term(n, c, bump, chi=0.1)
    assert term.integral() == pytest.approx(0.0, abs=1e-12)


def test_buoyancy_of_uniform_density(grid4):
    B = buoyancy_matrix(grid4)
    out = VectorField.from_flat(grid4, B @ np.full(grid4.n_cells, 2.0))
    u1, u2, u3 = out.components
    assert np.abs(u1).max() == 0.0
    assert np.abs(u2).max() == 0.0
    assert u3[:, :, 1:-1] == pytest.approx(2.0)
    assert np.abs(u3[:, :, [0, -1]]).max() == 0.0


def test_oseen_system_has_identity_wall_rows(grid4, groups, rng):
    u = random_solenoidal(grid4, rng, scale=0.1)
    n_hat = _random_scalar(grid4, rng) * 0.1
    system = assemble_oseen(u, n_hat, groups, VectorField.zeros(grid4))
    A = system.A.toarray()
    for f in grid4.boundary_faces[:10]:
        row = np.zeros(grid4.n_faces)
        row[f] = 1.0
        assert A[f] == pytest.approx(row)
    assert np.all(system.f[grid4.boundary_faces] == 0.0)
    assert set(system.boundary_rules.values()) == {"no-slip"}


def test_scalar_systems_carry_boundary_rules(grid4, groups, bump):
    u = VectorField.zeros(grid4)
    zero = ScalarField.zeros(grid4)
    bact = assemble_bacteria(u, zero, zero, bump, groups.chi, 0.5, 0.25, zero)
    assert bact.boundary_rules["z-"] == "zero-flux"
    assert bact.boundary_rules["z+"] == "robin-flux"
    oxy = assemble_oxygen(
        u,
        zero,
        zero,
        bump,
        groups.delta,
        groups.beta,
        0.5,
        0.25,
        zero,
        oxygen_top_bc="dirichlet",
    )
    assert oxy.boundary_rules["x+"] == "dirichlet"
    assert oxy.boundary_rules["z-"] == "neumann"
    assert oxy.constraint is not None
    assert oxy.constraint.sum() == pytest.approx(grid4.domain.measure)


def test_apply_boundary_conditions_rejects_wrong_system(grid4):
    system = LinearSystem(
        grid=grid4,
        matrix=neumann_laplacian_matrix(grid4),
        rhs=np.zeros(grid4.n_cells),
        kind="bacteria",
    )
    with pytest.raises(BoundaryTagError):
        apply_boundary_conditions(system, "velocity")
    with pytest.raises(BoundaryTagError):
        apply_boundary_conditions(system, "pressure")
    with pytest.raises(BoundaryTagError):
        apply_boundary_conditions(system, "oxygen", oxygen_top_bc="robin")


def test_wall_flux_residual_of_uniform_fields(grid4, bump):
    n = ScalarField.constant(grid4, 0.5)
    c = ScalarField.constant(grid4, 0.25)
    residual = wall_flux_residual(n, c, bump, chi=0.1)
    assert set(residual) == set(UPPER_FACES)
    assert max(residual.values()) == pytest.approx(0.0, abs=1e-12)


def test_wall_flux_residual_detects_flux_imbalance(unit_domain, bump):
    grid = MacGrid.uniform(unit_domain, 16)
    # c stays on the plateau of r, so r(c) = 1 and grad c . nu = 0.01 on z+
    c = ScalarField.from_function(grid, lambda x, y, z: 0.2 + 0.01 * z)
    balanced = ScalarField.from_function(grid, lambda x, y, z: np.exp(0.01 * z))
    residual = wall_flux_residual(balanced, c, bump, chi=1.0)
    assert max(residual.values()) < 1e-6

    skewed = ScalarField.from_function(grid, lambda x, y, z: np.exp(0.02 * z))
    residual = wall_flux_residual(skewed, c, bump, chi=1.0)
    assert residual["z+"] == pytest.approx(0.01 * math.exp(0.02), rel=1e-3)
    assert residual["x+"] < 1e-12
    assert residual["y+"] < 1e-12


def test_laplacian_truncation_is_second_order(unit_domain):
    def mode(x, y, z):
        return np.cos(np.pi * x) * np.cos(np.pi * y) * np.cos(np.pi * z)

    errors = []
    for n in (8, 16, 32):
        s = ScalarField.from_function(MacGrid.uniform(unit_domain, n), mode)
        exact = -3.0 * np.pi**2 * s.values
        err = np.abs(laplacian_scalar(s).values - exact).max()
        errors.append(err / np.abs(s.values).max())
    orders = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
    assert orders == pytest.approx([2.0, 2.0], abs=0.02)
