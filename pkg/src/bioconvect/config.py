"""
Run configuration

Responsibilities:
- parse_config / load_config: YAML text -> validated RunConfig
- build_run: RunConfig -> grid, groups, r, sources, certificate, ProblemData
- Shipped configs (configs/*.yaml) through importlib.resources
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .certificate import (
    Certificate,
    CertificateInputs,
    DomainConstants,
    build_certificate,
    domain_constants,
)
from .errors import BioconvectError, ConfigError
from .grid import MacGrid, ScalarField, VectorField
from .linsolve import SolveOptions
from .models import (
    ChamberDomain,
    ConsumptionFunction,
    DimensionlessGroups,
    PhysicalParams,
    SourceData,
    default_consumption_function,
    dimensionless_from_physical,
)
from .operators import curl_edges, edge_shape
from .solver import ProblemData
from .verify import MMS_CASES, mms_case

logger = logging.getLogger(__name__)

SOURCE_CASES = ("zero", "small")
MMS_PREFIX = "mms:"


# ============================================================================
# Sections
# ============================================================================


@dataclass
class DomainSection:
    L1: float = 1.0
    L2: float = 1.0
    L3: float = 1.0


@dataclass
class GridSection:
    cells: int | list[int] = 16


@dataclass
class PhysicalSection:
    eta: float = 1.0e-3
    D_n: float = 1.0e-9
    D_c: float = 2.0e-9
    rho: float = 1.0e3
    rho_b: float = 1.1e3
    V_b: float = 1.0e-18
    n_r: float = 1.0e15
    L: float = 1.0e-3
    chi_bar: float = 1.0e-10
    c_air: float = 0.2
    k: float = 1.0e-13
    g: float = 9.81


@dataclass
class DimensionlessSection:
    S_c: float = 1.0
    gamma: float = 0.5
    chi: float = 0.1
    delta: float = 1.0
    beta: float = 0.1


@dataclass
class ConsumptionSection:
    kind: str = "bump"
    c_star: float = 0.45
    width: float = 0.05


@dataclass
class SourcesSection:
    case: str = "zero"
    amplitude: float = 0.05
    F_amplitude: float = 0.0


@dataclass
class AlphaSection:
    alpha1: float = 0.5
    alpha2: float = 0.25


@dataclass
class SolverSection:
    tol: float = 1e-10
    max_outer: int = 100
    relaxation: float = 1.0
    linear_tolerance: float = 1e-12
    scalar_method: str = "gmres"
    saddle_method: str = "uzawa"
    preconditioner: str = "ilu"
    jobs: int = 1


@dataclass
class ConstantsSection:
    mode: str = "analytic"
    grid: int = 16
    C_poi_dirichlet: float | None = None
    C_poi_meanzero: float | None = None
    C_tr: float | None = None
    C_1: float | None = None

    def declared(self) -> dict[str, float]:
        names = ("C_poi_dirichlet", "C_poi_meanzero", "C_tr", "C_1")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}


_SECTIONS: dict[str, type] = {
    "domain": DomainSection,
    "grid": GridSection,
    "physical": PhysicalSection,
    "dimensionless": DimensionlessSection,
    "consumption": ConsumptionSection,
    "sources": SourcesSection,
    "alpha": AlphaSection,
    "solver": SolverSection,
    "constants": ConstantsSection,
}
_SCALARS: dict[str, str] = {
    "gravity": "float",
    "oxygen_top_bc": "str",
    "strict": "bool",
    "project_fn": "bool",
    "output_dir": "str",
}


@dataclass
class RunConfig:
    """One run: geometry, parameters, data, solver settings and output location."""

    domain: DomainSection = field(default_factory=DomainSection)
    grid: GridSection = field(default_factory=GridSection)
    physical: PhysicalSection | None = None
    dimensionless: DimensionlessSection | None = None
    gravity: float = 1.0
    consumption: ConsumptionSection = field(default_factory=ConsumptionSection)
    sources: SourcesSection = field(default_factory=SourcesSection)
    alpha: AlphaSection = field(default_factory=AlphaSection)
    solver: SolverSection = field(default_factory=SolverSection)
    constants: ConstantsSection = field(default_factory=ConstantsSection)
    oxygen_top_bc: str = "neumann"
    strict: bool = False
    project_fn: bool = False
    output_dir: str = "bioconvect_out"

    def to_dict(self) -> dict:
        return asdict(self)


# ============================================================================
# Parsing
# ============================================================================


def _coerce(value: Any, kind: str, key: str) -> Any:
    optional = kind.endswith("| None")
    if optional:
        if value is None:
            return None
        kind = kind.removesuffix("| None").strip()
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key=key)
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key=key)
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key=key)
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key=key)
        return float(value)
    if kind == "int | list[int]":
        if isinstance(value, list):
            if len(value) != 3:
                raise ConfigError("expected three cell counts", key=key)
            return [_coerce(v, "int", key) for v in value]
        return _coerce(value, "int", key)
    raise ConfigError(f"unsupported field type {kind}", key=key)  # pragma: no cover


def _section(cls: type, data: Any, path: str) -> Any:
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", key=path)
    known = {f.name: f for f in fields(cls)}
    values = {}
    for key, raw in data.items():
        if key not in known:
            raise ConfigError(
                f"unknown key (allowed: {', '.join(known)})", key=f"{path}.{key}"
            )
        values[key] = _coerce(raw, str(known[key].type), f"{path}.{key}")
    return cls(**values)


def _validate(config: RunConfig) -> None:
    if config.physical is not None and config.dimensionless is not None:
        raise ConfigError(
            "both 'physical' and 'dimensionless' blocks given; choose one",
            key="physical/dimensionless",
        )
    if config.physical is None and config.dimensionless is None:
        raise ConfigError(
            "one of 'physical' or 'dimensionless' is required",
            key="physical/dimensionless",
        )
    case = config.sources.case
    if case.startswith(MMS_PREFIX):
        if case[len(MMS_PREFIX) :] not in MMS_CASES:
            raise ConfigError(f"unknown manufactured case {case!r}", key="sources.case")
    elif case not in SOURCE_CASES:
        raise ConfigError(
            f"unknown source case {case!r} (choose zero, small or mms:<case>)",
            key="sources.case",
        )
    if config.oxygen_top_bc not in ("neumann", "dirichlet"):
        raise ConfigError("must be neumann or dirichlet", key="oxygen_top_bc")
    if config.consumption.kind != "bump":
        raise ConfigError(
            f"unknown consumption kind {config.consumption.kind!r}",
            key="consumption.kind",
        )
    if config.constants.mode not in ("analytic", "discrete"):
        raise ConfigError("must be analytic or discrete", key="constants.mode")
    if config.solver.jobs < 1:
        raise ConfigError("must be >= 1", key="solver.jobs")


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration document.

    Raises:
        ConfigError: YAML syntax error (with its 1-based line) or a semantic
            error naming the dotted key path.
    """
    import yaml  # type: ignore[import-untyped]

    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(e, "problem", None) or e
        raise ConfigError(f"invalid YAML: {problem}", line=line) from e
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=1)

    values: dict[str, Any] = {}
    for key, raw in data.items():
        if key in _SECTIONS:
            values[key] = _section(_SECTIONS[key], raw, key)
        elif key in _SCALARS:
            values[key] = _coerce(raw, _SCALARS[key], key)
        else:
            raise ConfigError("unknown key", key=str(key))
    config = RunConfig(**values)
    _validate(config)
    return config


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from e
    return parse_config(text)


def shipped_configs() -> list[str]:
    root = resources.files("bioconvect") / "configs"
    names = (p.name for p in root.iterdir() if p.name.endswith(".yaml"))
    return sorted(n.removesuffix(".yaml") for n in names)


def shipped_config_text(name: str) -> str:
    if name not in shipped_configs():
        raise ConfigError(f"no shipped config named {name!r}")
    path = resources.files("bioconvect") / "configs" / f"{name}.yaml"
    return path.read_text(encoding="utf-8")


def resolve_config(source: str) -> RunConfig:
    """Load a config file, or a shipped config by bare name."""
    if not Path(source).exists() and source in shipped_configs():
        return parse_config(shipped_config_text(source))
    return load_config(source)


# ============================================================================
# Building a run
# ============================================================================


@dataclass
class RunSetup:
    config: RunConfig
    grid: MacGrid
    groups: DimensionlessGroups
    r: ConsumptionFunction
    sources: SourceData
    constants: DomainConstants
    inputs: CertificateInputs
    certificate: Certificate
    problem: ProblemData


def groups_from_config(config: RunConfig) -> DimensionlessGroups:
    if config.dimensionless is not None:
        return DimensionlessGroups(**asdict(config.dimensionless))
    assert config.physical is not None
    return dimensionless_from_physical(PhysicalParams(**asdict(config.physical)))


def _velocity_profile(grid: MacGrid, amplitude: float) -> VectorField:
    """amplitude * curl of sin^2(x) sin(y) sin^2(z) e_y, sampled on y-edges."""
    L1, L2, L3 = grid.domain.edges
    x, y, z = grid.edge_centers(1)
    a2 = amplitude * np.sin(np.pi * x / L1) ** 2 * np.sin(np.pi * y / L2)
    a2 = a2 * np.sin(np.pi * z / L3) ** 2
    zeros = [np.zeros(edge_shape(grid, d)) for d in (0, 2)]
    return curl_edges(grid, (zeros[0], a2, zeros[1]))


def build_sources(
    config: RunConfig,
    grid: MacGrid,
    groups: DimensionlessGroups,
    r: ConsumptionFunction,
) -> SourceData:
    case = config.sources.case
    a1, a2 = config.alpha.alpha1, config.alpha.alpha2
    if case.startswith(MMS_PREFIX):
        name = case[len(MMS_PREFIX) :]
        _, sources = mms_case(name, grid, groups, r, a1, a2, config.gravity)
        return sources
    F = _velocity_profile(grid, config.sources.F_amplitude)
    if case == "zero":
        zero = ScalarField.zeros(grid)
        return SourceData.create(zero, zero.copy(), F, a1, a2)
    L1, L2, L3 = grid.domain.edges
    amp = config.sources.amplitude
    f_n = ScalarField.from_function(
        grid, lambda x, y, z: amp * np.cos(np.pi * x / L1) * np.cos(np.pi * y / L2)
    )
    f_c = ScalarField.from_function(
        grid, lambda x, y, z: amp * np.cos(np.pi * x / L1) * np.cos(np.pi * z / L3)
    )
    return SourceData.create(f_n, f_c, F, a1, a2, project_fn=config.project_fn)


def build_run(config: RunConfig, check_precision: bool = True) -> RunSetup:
    """Turn a validated config into every object a subcommand needs.

    Model-level errors are re-raised as ConfigError naming the offending
    section.
    """
    try:
        domain = ChamberDomain(**asdict(config.domain))
        grid = MacGrid.uniform(domain, config.grid.cells)
        groups = groups_from_config(config)
        c = config.consumption
        r = default_consumption_function(c.c_star, c.width)
        sources = build_sources(config, grid, groups, r)
    except ConfigError:
        raise
    except BioconvectError as e:
        raise ConfigError(str(e)) from e

    const_cfg = config.constants
    if const_cfg.mode == "discrete":
        constants = domain_constants(domain, mode="discrete", grid=const_cfg.grid)
    else:
        constants = domain_constants(domain)
    declared = const_cfg.declared()
    if declared:
        constants = constants.declare(**declared)
        logger.info("declared constants: %s", declared)

    inputs = CertificateInputs.from_sources(
        domain, constants, groups, r, sources, config.gravity
    )
    certificate = build_certificate(inputs, check_precision=check_precision)
    s = config.solver
    problem = ProblemData(
        grid=grid,
        groups=groups,
        r=r,
        sources=sources,
        oxygen_top_bc=config.oxygen_top_bc,
        relaxation=s.relaxation,
        gravity=config.gravity,
        certificate=certificate,
        scalar_options=SolveOptions(
            tolerance=s.linear_tolerance,
            method=s.scalar_method,
            preconditioner=s.preconditioner,
        ),
        saddle_options=SolveOptions(
            tolerance=s.linear_tolerance,
            method=s.saddle_method,
            preconditioner=s.preconditioner,
        ),
    )
    return RunSetup(
        config, grid, groups, r, sources, constants, inputs, certificate, problem
    )
