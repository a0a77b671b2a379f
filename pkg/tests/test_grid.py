import numpy as np
import pytest

from bioconvect.errors import GridMismatchError, ParameterError
from bioconvect.grid import MacGrid, ScalarField, VectorField, check_same_grid
from bioconvect.models import ChamberDomain


def test_uniform_grid_spacing():
    grid = MacGrid.uniform(ChamberDomain(2.0, 1.0, 0.5), (8, 4, 4))
    assert grid.shape == (8, 4, 4)
    assert grid.h == pytest.approx((0.25, 0.25, 0.125))
    assert grid.h_max == pytest.approx(0.25)
    assert grid.cell_volume == pytest.approx(0.25 * 0.25 * 0.125)
    assert grid.n_cells == 128


def test_grid_rejects_too_few_cells(unit_domain):
    with pytest.raises(ParameterError):
        MacGrid.uniform(unit_domain, 3)
    with pytest.raises(ParameterError):
        MacGrid(unit_domain, 4, 4, 2)


def test_uniform_accepts_numpy_integers(unit_domain):
    grid = MacGrid.uniform(unit_domain, np.int64(4))
    assert grid.shape == (4, 4, 4)
    assert all(type(n) is int for n in grid.shape)
    assert MacGrid.uniform(unit_domain, np.array([4, 5, 6])).shape == (4, 5, 6)


def test_face_layout(grid6):
    assert grid6.face_shape(0) == (7, 5, 4)
    assert grid6.face_shape(1) == (6, 6, 4)
    assert grid6.face_shape(2) == (6, 5, 5)
    assert grid6.n_faces == 7 * 20 + 6 * 6 * 4 + 30 * 5
    assert grid6.face_offsets == (0, 140, 284)


def test_interior_and_boundary_faces_partition(grid6):
    interior = set(grid6.interior_faces.tolist())
    boundary = set(grid6.boundary_faces.tolist())
    assert interior.isdisjoint(boundary)
    assert len(interior) + len(boundary) == grid6.n_faces
    assert len(boundary) == 2 * (5 * 4 + 6 * 4 + 6 * 5)


def test_face_weights_integrate_each_component(grid6):
    assert grid6.face_weights.sum() == pytest.approx(3 * grid6.domain.measure)


def test_cell_and_face_centers(grid4):
    x, y, z = grid4.cell_centers()
    assert x.shape == (4, 4, 4)
    assert x[:, 0, 0] == pytest.approx([0.125, 0.375, 0.625, 0.875])
    fx, _, _ = grid4.face_centers(0)
    assert fx[:, 0, 0] == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])
    ex, ey, ez = grid4.edge_centers(2)
    assert ex.shape == (5, 5, 4)
    assert ez[0, 0, :] == pytest.approx([0.125, 0.375, 0.625, 0.875])


def test_scalar_field_quadrature(grid4):
    one = ScalarField.constant(grid4, 1.0)
    assert one.integral() == pytest.approx(1.0)
    assert one.l2_norm() == pytest.approx(1.0)
    s = ScalarField.from_function(grid4, lambda x, y, z: x + 2 * z)
    assert s.mean() == pytest.approx(1.5)
    assert s.minus_mean().mean() == pytest.approx(0.0, abs=1e-15)


def test_scalar_field_arithmetic(grid4, rng):
    a = ScalarField(grid4, rng.standard_normal(grid4.shape))
    b = ScalarField(grid4, rng.standard_normal(grid4.shape))
    assert (a + b - b).values == pytest.approx(a.values)
    assert (2.0 * a).values == pytest.approx(a.values * 2.0)
    assert (a + 1.0).mean() == pytest.approx(a.mean() + 1.0)
    assert a.inner(b) == pytest.approx(grid4.cell_volume * np.sum(a.values * b.values))


def test_scalar_field_rejects_non_finite(grid4):
    values = np.zeros(grid4.shape)
    values[1, 2, 3] = np.nan
    with pytest.raises(ParameterError):
        ScalarField(grid4, values)


def test_vector_field_flat_round_trip(grid6, rng):
    vec = rng.standard_normal(grid6.n_faces)
    v = VectorField.from_flat(grid6, vec)
    assert v.components[1].shape == grid6.face_shape(1)
    assert np.array_equal(v.flat(), vec)


def test_vector_field_from_flat_checks_size(grid4):
    with pytest.raises(GridMismatchError):
        VectorField.from_flat(grid4, np.zeros(grid4.n_faces - 1))


def test_vector_field_wall_values(grid4):
    v = VectorField.from_functions(
        grid4, [lambda x, y, z: x, lambda x, y, z: 0 * y, lambda x, y, z: 0 * z]
    )
    assert v.boundary_max() == pytest.approx(1.0)
    assert v.max_abs() == pytest.approx(1.0)
    avg = v.cell_average()
    assert avg.shape == (3, 4, 4, 4)
    assert avg[0, :, 0, 0] == pytest.approx([0.125, 0.375, 0.625, 0.875])


def test_vector_field_l2_norm_of_constant(grid4):
    v = VectorField.from_functions(
        grid4,
        [lambda x, y, z: 1.0 + 0 * x, lambda x, y, z: 0 * y, lambda x, y, z: 0 * z],
    )
    assert v.l2_norm() == pytest.approx(1.0)


def test_fields_on_different_grids_do_not_mix(grid4, unit_domain):
    other = MacGrid.uniform(unit_domain, 5)
    with pytest.raises(GridMismatchError):
        ScalarField.zeros(grid4) + ScalarField.zeros(other)
    with pytest.raises(GridMismatchError):
        check_same_grid(VectorField.zeros(grid4), ScalarField.zeros(other))
    assert check_same_grid(grid4, ScalarField.zeros(grid4)) == grid4
