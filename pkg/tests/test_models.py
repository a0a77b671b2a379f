import math

import numpy as np
import pytest

from bioconvect.errors import BoundaryTagError, GridMismatchError, ParameterError
from bioconvect.grid import MacGrid, ScalarField, VectorField
from bioconvect.models import (
    ChamberDomain,
    ConsumptionFunction,
    DimensionlessGroups,
    PhysicalParams,
    SourceData,
    default_consumption_function,
    dimensionless_from_physical,
    validate_consumption,
)


def _make_physical(**overrides):
    values = dict(
        eta=1e-3,
        D_n=1e-9,
        D_c=2e-9,
        rho=1e3,
        rho_b=1.1e3,
        V_b=1e-18,
        n_r=1e15,
        L=1e-3,
        chi_bar=1e-10,
        c_air=0.2,
        k=1e-13,
        g=9.81,
    )
    values.update(overrides)
    return PhysicalParams(**values)


def _make_sources(grid, f_n_values=None, alpha1=0.5, alpha2=0.25, project_fn=False):
    f_n = ScalarField.zeros(grid)
    if f_n_values is not None:
        f_n = ScalarField(grid, f_n_values)
    return SourceData.create(
        f_n,
        ScalarField.zeros(grid),
        VectorField.zeros(grid),
        alpha1,
        alpha2,
        project_fn,
    )


def test_dimensionless_from_physical():
    groups = dimensionless_from_physical(_make_physical())
    assert groups.S_c == pytest.approx(1e3)
    assert groups.delta == pytest.approx(2.0)
    assert groups.chi == pytest.approx(1e-10 * 0.2 / 1e-9)
    assert groups.gamma == pytest.approx(1e-18 * 1e15 * 100.0 * 1e-9 / (1e-3 * 1e-9))
    assert groups.beta == pytest.approx(1e-13 * 1e15 * 1e-6 / (0.2 * 1e-9))


def test_schmidt_number_hand_value():
    groups = dimensionless_from_physical(_make_physical(eta=2e-3))
    assert groups.S_c == pytest.approx(2e3, rel=1e-14)


def test_physical_params_reject_light_bacteria():
    with pytest.raises(ParameterError) as excinfo:
        _make_physical(rho_b=900.0)
    assert excinfo.value.field_name == "rho_b"


def test_physical_params_reject_non_positive():
    with pytest.raises(ParameterError):
        _make_physical(D_n=0.0)
    with pytest.raises(ParameterError):
        _make_physical(eta=float("nan"))


def test_groups_allow_decoupled_limit():
    groups = DimensionlessGroups(S_c=1.0, gamma=0.0, chi=0.0, delta=1.0, beta=0.0)
    assert groups.to_dict()["gamma"] == 0.0


def test_groups_reject_bad_values():
    with pytest.raises(ParameterError):
        DimensionlessGroups(S_c=0.0, gamma=0.5, chi=0.1, delta=1.0, beta=0.1)
    with pytest.raises(ParameterError):
        DimensionlessGroups(S_c=1.0, gamma=-0.1, chi=0.1, delta=1.0, beta=0.1)
    with pytest.raises(ParameterError):
        DimensionlessGroups(S_c=1.0, gamma=0.5, chi=math.inf, delta=1.0, beta=0.1)


def test_chamber_domain_geometry():
    dom = ChamberDomain(2.0, 1.0, 0.5)
    assert dom.measure == pytest.approx(1.0)
    assert dom.aspect_ratio == pytest.approx(4.0)
    assert dom.boundary_measure() == pytest.approx(2.0 * (2.0 + 0.5 + 1.0))
    assert dom.boundary_faces("lower") == frozenset({"z-"})
    assert "z-" not in dom.boundary_faces("upper")
    assert len(dom.boundary_faces("upper")) == 5
    assert len(dom.boundary_faces("all")) == 6


def test_chamber_domain_rejects_bad_input():
    with pytest.raises(ParameterError):
        ChamberDomain(1.0, -1.0, 1.0)
    with pytest.raises(BoundaryTagError):
        ChamberDomain().boundary_faces("side")


def test_default_consumption_norms(bump):
    assert bump.norm_inf == 1.0
    assert bump.norm_l1 == pytest.approx(0.45)
    assert bump.norm_lip == pytest.approx(30.0)
    assert bump.support == pytest.approx((0.0, 0.5))
    assert bump(0.2) == pytest.approx(1.0)
    assert bump(0.0) == 0.0
    assert bump(0.7) == 0.0
    assert bump(-0.3) == 0.0


def test_default_consumption_is_valid(bump):
    assert validate_consumption(bump) == []


def test_default_consumption_slope_matches_differences(bump):
    s = np.array([0.01, 0.025, 0.3, 0.47, 0.49])
    eps = 1e-7
    numeric = (bump(s + eps) - bump(s - eps)) / (2 * eps)
    assert bump.slope(s) == pytest.approx(numeric, abs=1e-5)


def test_default_consumption_rejects_narrow_plateau():
    with pytest.raises(ParameterError):
        default_consumption_function(0.05, 0.05)
    with pytest.raises(ParameterError):
        default_consumption_function(0.45, 0.0)


def test_validate_consumption_flags_understated_lipschitz():
    r = ConsumptionFunction.custom(
        lambda s: np.clip(np.asarray(s, dtype=float), 0.0, 1.0) * (np.asarray(s) < 1.0),
        norm_inf=1.0,
        norm_l1=0.5,
        norm_lip=0.5,
        support=(0.0, 1.0),
    )
    violations = validate_consumption(r)
    assert any("norm_lip" in v for v in violations)


def test_validate_consumption_flags_non_finite_norms():
    r = ConsumptionFunction.custom(
        lambda s: 0.0 * np.asarray(s), math.inf, 1.0, 1.0, (0.0, 1.0)
    )
    assert not r.norms_finite
    assert validate_consumption(r) == ["declared norms must be finite"]


def test_custom_consumption_slope_uses_differences():
    r = ConsumptionFunction.custom(
        lambda s: np.sin(np.asarray(s, dtype=float)), 1.0, 2.0, 1.0, (0.0, math.pi)
    )
    assert r.slope(0.5) == pytest.approx(math.cos(0.5), rel=1e-6)


def test_source_data_rejects_non_zero_mean(grid4):
    values = np.full(grid4.shape, 0.1)
    with pytest.raises(ParameterError) as excinfo:
        _make_sources(grid4, values)
    assert excinfo.value.field_name == "f_n"


def test_source_data_projects_mean(grid4, rng):
    values = rng.standard_normal(grid4.shape) + 3.0
    sources = _make_sources(grid4, values, project_fn=True)
    assert sources.f_n.mean() == pytest.approx(0.0, abs=1e-14)


def test_source_data_zero_branch(grid4):
    sources = _make_sources(grid4, alpha1=0.0, alpha2=0.0)
    assert sources.is_zero_data
    assert sources.norms() == (0.0, 0.0, 0.0)


def test_source_data_zero_alpha_needs_zero_data(grid4):
    values = np.zeros(grid4.shape)
    values[0, 0, 0], values[-1, -1, -1] = 1.0, -1.0
    with pytest.raises(ParameterError) as excinfo:
        _make_sources(grid4, values, alpha1=0.0)
    assert excinfo.value.field_name == "alpha1"


def test_source_data_rejects_alpha_above_one(grid4):
    with pytest.raises(ParameterError):
        _make_sources(grid4, alpha2=1.5)


def test_source_data_rejects_mixed_grids(grid4, unit_domain):
    other = MacGrid.uniform(unit_domain, 5)
    with pytest.raises(GridMismatchError):
        SourceData(
            ScalarField.zeros(grid4),
            ScalarField.zeros(other),
            VectorField.zeros(grid4),
            0.5,
            0.5,
        )
