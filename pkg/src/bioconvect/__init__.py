"""bioconvect: stationary bioconvection with an existence/uniqueness certificate."""

from __future__ import annotations

from .certificate import (
    Certificate,
    CertificateInputs,
    build_certificate,
    domain_constants,
)
from .grid import MacGrid, ScalarField, VectorField
from .models import (
    ChamberDomain,
    ConsumptionFunction,
    DimensionlessGroups,
    PhysicalParams,
    SourceData,
    default_consumption_function,
    dimensionless_from_physical,
)
from .solver import FieldState, ProblemData, picard_step, solve_stationary

__all__ = [
    "Certificate",
    "CertificateInputs",
    "ChamberDomain",
    "ConsumptionFunction",
    "DimensionlessGroups",
    "FieldState",
    "MacGrid",
    "PhysicalParams",
    "ProblemData",
    "ScalarField",
    "SourceData",
    "VectorField",
    "build_certificate",
    "default_consumption_function",
    "dimensionless_from_physical",
    "domain_constants",
    "picard_step",
    "solve_stationary",
    "__version__",
]
__version__ = "0.1.0"
