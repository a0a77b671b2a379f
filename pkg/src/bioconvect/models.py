"""Parameter records, chamber geometry, consumption function and source data."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import TYPE_CHECKING, Any, Callable

import numpy as np
from scipy import integrate

from .errors import BoundaryTagError, GridMismatchError, ParameterError

if TYPE_CHECKING:
    from .grid import ScalarField, VectorField

logger = logging.getLogger(__name__)

# Faces of the box by outward normal; x3 = 0 is the bottom of the chamber.
FACE_TAGS = ("x-", "x+", "y-", "y+", "z-", "z+")
LOWER_FACES = frozenset({"z-"})
UPPER_FACES = frozenset(FACE_TAGS) - LOWER_FACES


@dataclass(frozen=True)
class PhysicalParams:
    """Raw physical constants of the chamber (SI units)."""

    eta: float  # fluid viscosity, Pa s
    D_n: float  # bacterial diffusivity, m^2/s
    D_c: float  # oxygen diffusivity, m^2/s
    rho: float  # fluid density, kg/m^3
    rho_b: float  # bacterial density, kg/m^3
    V_b: float  # bacterial volume, m^3
    n_r: float  # characteristic cell density, 1/m^3
    L: float  # characteristic length, m
    chi_bar: float  # chemotactic sensitivity
    c_air: float  # ambient oxygen concentration
    k: float  # oxygen consumption rate
    g: float  # gravitational acceleration, m/s^2

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value)):
                raise ParameterError(f.name, value, "must be a finite number")
            if value <= 0:
                raise ParameterError(f.name, value)
        if self.rho_b <= self.rho:
            raise ParameterError("rho_b", self.rho_b, f"must exceed rho={self.rho}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class DimensionlessGroups:
    """The five groups (S_c, gamma, chi, delta, beta) of the model.

    S_c and delta must be positive. The coupling groups gamma, chi and beta
    may be zero, which is the decoupled limit of the system.
    """

    S_c: float
    gamma: float
    chi: float
    delta: float
    beta: float

    def __post_init__(self) -> None:
        for name in ("S_c", "gamma", "chi", "delta", "beta"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ParameterError(name, value, "must be finite")
        for name in ("S_c", "delta"):
            if getattr(self, name) <= 0:
                raise ParameterError(name, getattr(self, name))
        for name in ("gamma", "chi", "beta"):
            if getattr(self, name) < 0:
                raise ParameterError(name, getattr(self, name), "must be >= 0")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def dimensionless_from_physical(p: PhysicalParams) -> DimensionlessGroups:
    """Derive the dimensionless groups from physical constants.

    Args:
        p: Physical parameters. Re-validated here.

    Returns:
        The groups S_c, gamma, chi, delta, beta.
    """
    p.validate()
    return DimensionlessGroups(
        S_c=p.eta / (p.D_n * p.rho),
        gamma=p.V_b * p.n_r * (p.rho_b - p.rho) * p.L**3 / (p.eta * p.D_n),
        chi=p.chi_bar * p.c_air / p.D_n,
        delta=p.D_c / p.D_n,
        beta=p.k * p.n_r * p.L**2 / (p.c_air * p.D_n),
    )


@dataclass(frozen=True)
class ChamberDomain:
    """The box [0, L1] x [0, L2] x [0, L3]."""

    L1: float = 1.0
    L2: float = 1.0
    L3: float = 1.0

    def __post_init__(self) -> None:
        for name, value in zip(("L1", "L2", "L3"), self.edges):
            if not (math.isfinite(value) and value > 0):
                raise ParameterError(name, value)

    @property
    def edges(self) -> tuple[float, float, float]:
        return (self.L1, self.L2, self.L3)

    @property
    def measure(self) -> float:
        return self.L1 * self.L2 * self.L3

    @property
    def aspect_ratio(self) -> float:
        return max(self.edges) / min(self.edges)

    def boundary_measure(self) -> float:
        return 2.0 * (self.L1 * self.L2 + self.L2 * self.L3 + self.L1 * self.L3)

    def boundary_tags(self) -> tuple[str, str]:
        return ("lower", "upper")

    def boundary_faces(self, tag: str) -> frozenset[str]:
        """Return the face set for a boundary tag ("lower", "upper" or "all")."""
        if tag == "lower":
            return LOWER_FACES
        if tag == "upper":
            return UPPER_FACES
        if tag == "all":
            return frozenset(FACE_TAGS)
        raise BoundaryTagError(f"unknown boundary tag {tag!r}")

    def to_dict(self) -> dict:
        return {"edges": list(self.edges), "measure": self.measure}


# ============================================================================
# Consumption function r
# ============================================================================


def _ramp(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def _ramp_slope(t: np.ndarray) -> np.ndarray:
    return 6.0 * t * (1.0 - t)


class SmoothBump:
    """C1 plateau profile: smoothstep up on [0, w], 1 on [w, c*], down to c* + w."""

    def __init__(self, c_star: float, width: float):
        self.c_star = float(c_star)
        self.width = float(width)

    def __call__(self, s: Any) -> Any:
        s_arr = np.asarray(s, dtype=float)
        w = self.width
        up = np.clip(s_arr / w, 0.0, 1.0)
        down = np.clip((self.c_star + w - s_arr) / w, 0.0, 1.0)
        out = np.minimum(_ramp(up), _ramp(down))
        return float(out) if out.ndim == 0 else out

    def derivative(self, s: Any) -> Any:
        s_arr = np.asarray(s, dtype=float)
        w = self.width
        out = np.zeros_like(s_arr)
        rising = (s_arr > 0.0) & (s_arr < w)
        falling = (s_arr > self.c_star) & (s_arr < self.c_star + w)
        out[rising] = _ramp_slope(s_arr[rising] / w) / w
        out[falling] = -_ramp_slope((self.c_star + w - s_arr[falling]) / w) / w
        return float(out) if out.ndim == 0 else out

    def __repr__(self) -> str:
        return f"SmoothBump(c_star={self.c_star}, width={self.width})"


@dataclass(frozen=True)
class ConsumptionFunction:
    """The cut-off r with its L-infinity, L1 and Lipschitz norms."""

    evaluator: Callable[[Any], Any]
    norm_inf: float
    norm_l1: float
    norm_lip: float
    support: tuple[float, float]
    derivative: Callable[[Any], Any] | None = None
    label: str = "custom"

    @classmethod
    def custom(
        cls,
        evaluator: Callable[[Any], Any],
        norm_inf: float,
        norm_l1: float,
        norm_lip: float,
        support: tuple[float, float],
        label: str = "custom",
    ) -> ConsumptionFunction:
        """Wrap a user r with declared norms; see validate_consumption."""
        lo, hi = support
        if not lo < hi:
            raise ParameterError("support", support, "must be an interval lo < hi")
        declared = {"norm_inf": norm_inf, "norm_l1": norm_l1, "norm_lip": norm_lip}
        for name, value in declared.items():
            if value < 0:
                raise ParameterError(name, value, "must be >= 0")
        return cls(
            evaluator=evaluator,
            norm_inf=float(norm_inf),
            norm_l1=float(norm_l1),
            norm_lip=float(norm_lip),
            support=(float(lo), float(hi)),
            label=label,
        )

    def __call__(self, s: Any) -> Any:
        return self.evaluator(s)

    def slope(self, s: Any) -> Any:
        """r'(s), from the closed form when known, else central differences."""
        if self.derivative is not None:
            return self.derivative(s)
        eps = 1e-7 * max(1.0, self.support[1] - self.support[0])
        s_arr = np.asarray(s, dtype=float)
        up = np.asarray(self.evaluator(s_arr + eps))
        down = np.asarray(self.evaluator(s_arr - eps))
        return (up - down) / (2.0 * eps)

    @property
    def norms_finite(self) -> bool:
        norms = (self.norm_inf, self.norm_l1, self.norm_lip)
        return all(math.isfinite(v) for v in norms)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "norm_inf": self.norm_inf,
            "norm_l1": self.norm_l1,
            "norm_lip": self.norm_lip,
            "support": list(self.support),
        }


def default_consumption_function(c_star: float, width: float) -> ConsumptionFunction:
    """Build the default plateau bump with exact norms.

    The profile is 1 on [width, c_star] and rises/falls with the smoothstep
    3t^2 - 2t^3 over a band of the given width, so that
    norm_inf = 1, norm_l1 = c_star and norm_lip = 3 / (2 width).
    """
    if not (math.isfinite(c_star) and c_star > 0):
        raise ParameterError("c_star", c_star)
    if not (math.isfinite(width) and width > 0):
        raise ParameterError("width", width)
    if c_star <= width:
        raise ParameterError("c_star", c_star, f"must exceed width={width}")
    bump = SmoothBump(c_star, width)
    return ConsumptionFunction(
        evaluator=bump,
        norm_inf=1.0,
        norm_l1=c_star,
        norm_lip=1.5 / width,
        support=(0.0, c_star + width),
        derivative=bump.derivative,
        label=f"bump(c_star={c_star:g}, width={width:g})",
    )


def validate_consumption(
    r: ConsumptionFunction, samples: int = 10_000, seed: int = 0
) -> list[str]:
    """Check declared norms against sampled behaviour.

    Returns:
        Violation messages; empty when every declared norm dominates the
        sampled values.
    """
    violations: list[str] = []
    if not r.norms_finite:
        violations.append("declared norms must be finite")
        return violations

    lo, hi = r.support
    span = max(hi - lo, 1e-12)
    rng = np.random.default_rng(seed)
    s = np.sort(rng.uniform(lo - 0.5 * span, hi + 0.5 * span, samples))
    values = np.asarray(r(s), dtype=float)

    if np.any(values < -1e-15):
        violations.append(f"r takes negative values (min {values.min():.3e})")
    if np.any(np.abs(values) > r.norm_inf * (1 + 1e-12)):
        peak = np.abs(values).max()
        violations.append(f"|r| exceeds norm_inf={r.norm_inf} (max {peak:.6g})")
    outside = (s < lo) | (s > hi)
    if np.any(values[outside] != 0.0):
        violations.append("r does not vanish outside its support")

    ds = np.diff(s)
    keep = ds > 0
    slopes = np.abs(np.diff(values))[keep] / ds[keep]
    if slopes.size and slopes.max() > r.norm_lip * (1 + 1e-9):
        violations.append(
            f"sampled slope {slopes.max():.6g} exceeds norm_lip={r.norm_lip}"
        )

    integral, _ = integrate.quad(lambda t: abs(float(r(t))), lo, hi, limit=200)
    if integral > r.norm_l1 * (1 + 1e-8):
        violations.append(
            f"quadrature of |r| = {integral:.10g} exceeds norm_l1={r.norm_l1}"
        )

    for v in violations:
        logger.debug("consumption %s: %s", r.label, v)
    return violations


# ============================================================================
# Source data
# ============================================================================


@dataclass(frozen=True)
class SourceData:
    """Right-hand sides f_n, f_c, F and prescribed totals alpha1, alpha2.

    alpha values lie in (0, 1]. The zero-data branch (f_n = f_c = 0) also
    admits alpha1 = alpha2 = 0.
    """

    f_n: ScalarField
    f_c: ScalarField
    F: VectorField
    alpha1: float
    alpha2: float
    mean_tolerance: float = field(default=1e-12, compare=False)

    def __post_init__(self) -> None:
        self.validate()

    @property
    def is_zero_data(self) -> bool:
        return not np.any(self.f_n.values) and not np.any(self.f_c.values)

    def validate(self) -> None:
        if self.f_n.grid != self.f_c.grid or self.f_n.grid != self.F.grid:
            raise GridMismatchError("source fields live on different grids")
        for name in ("alpha1", "alpha2"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ParameterError(name, value, "must lie in (0, 1]")
            if value == 0.0 and not self.is_zero_data:
                raise ParameterError(
                    name, value, "zero only allowed with f_n = f_c = 0"
                )
        scale = 1.0 + float(np.max(np.abs(self.f_n.values), initial=0.0))
        mean = self.f_n.mean()
        if abs(mean) > self.mean_tolerance * scale:
            raise ParameterError(
                "f_n", f"mean={mean:.3e}", "must have zero mean (use project_fn)"
            )

    @classmethod
    def create(
        cls,
        f_n: ScalarField,
        f_c: ScalarField,
        F: VectorField,
        alpha1: float,
        alpha2: float,
        project_fn: bool = False,
    ) -> SourceData:
        """Build source data, optionally subtracting the discrete mean of f_n first."""
        if project_fn:
            mean = f_n.mean()
            if mean != 0.0:
                logger.info("projecting f_n: removed mean %.3e", mean)
            f_n = f_n.minus_mean()
        return cls(f_n=f_n, f_c=f_c, F=F, alpha1=alpha1, alpha2=alpha2)

    def with_alphas(self, alpha1: float, alpha2: float) -> SourceData:
        return replace(self, alpha1=alpha1, alpha2=alpha2)

    def norms(self) -> tuple[float, float, float]:
        """L2 norms (f_n, f_c, F) by MAC midpoint quadrature."""
        return (self.f_n.l2_norm(), self.f_c.l2_norm(), self.F.l2_norm())
