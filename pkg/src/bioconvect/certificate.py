"""Existence and uniqueness certificate for the stationary problem.

Every constant, denominator and hypothesis inequality is evaluated from the
problem data. The arithmetic is written once against plain ``+ - * /`` so it
runs both in Python floats and in mpmath at 34 significant digits; the two
evaluations are compared and a relative disagreement above 1e-12 raises
PrecisionDefect.

Poincare constants: C_poi_dirichlet enters the velocity contexts (Gamma1,
u_bound and the first uniqueness inequality); C_poi_meanzero enters the
scalar contexts (Theta, Gamma0, Gamma2, Gamma3, Pi, c_bound). The Gossez
constants use the larger of the two.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import mpmath
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .errors import HypothesisViolation, ParameterError, PrecisionDefect
from .grid import MacGrid
from .models import (
    FACE_TAGS,
    ChamberDomain,
    ConsumptionFunction,
    DimensionlessGroups,
    SourceData,
    validate_consumption,
)
from .operators import (
    dirichlet_closure,
    neumann_laplacian_matrix,
    random_solenoidal,
    velocity_advection_stencil,
    velocity_energy_norm,
)

logger = logging.getLogger(__name__)

EXTENDED_DIGITS = 34
PRECISION_TOLERANCE = 1e-12
MAX_ASPECT_RATIO = 1e6
MIN_DISCRETE_CELLS = 8

CONSTANT_SOURCES = ("analytic", "discrete-rayleigh", "discrete-sample", "declared")
CONSTANT_NAMES = ("C_poi_dirichlet", "C_poi_meanzero", "C_tr", "C_1")


# ============================================================================
# Domain constants
# ============================================================================


@dataclass(frozen=True)
class DomainConstants:
    """Poincare, trace and trilinear constants with the method behind each."""

    C_poi_dirichlet: float
    C_poi_meanzero: float
    C_tr: float
    C_1: float
    sources: dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        for name in CONSTANT_NAMES:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ParameterError(name, value)
        for name, tag in self.sources.items():
            if tag not in CONSTANT_SOURCES:
                raise ParameterError(
                    f"sources.{name}", tag, f"must be one of {CONSTANT_SOURCES}"
                )

    def source(self, name: str) -> str:
        return self.sources.get(name, "declared")

    def declare(self, **values: float) -> DomainConstants:
        """Override constants with user-declared values, tagged ``declared``."""
        unknown = set(values) - set(CONSTANT_NAMES)
        if unknown:
            raise ParameterError("constants", sorted(unknown), "unknown constant")
        sources = dict(self.sources)
        sources.update({name: "declared" for name in values})
        return replace(self, sources=sources, **values)

    def to_dict(self) -> dict:
        return {
            name: {"value": getattr(self, name), "source": self.source(name)}
            for name in CONSTANT_NAMES
        }


def analytic_poincare_constants(dom: ChamberDomain) -> tuple[float, float]:
    """(C_poi_dirichlet, C_poi_meanzero) from the box eigenvalues."""
    inv_sq = sum(1.0 / L**2 for L in dom.edges)
    return 1.0 / (math.pi * math.sqrt(inv_sq)), max(dom.edges) / math.pi


def analytic_trace_constant(dom: ChamberDomain) -> float:
    """max(sum 2/L_i, sqrt 3): the 1D trace inequality on each pair of faces.

    The first term is attained by constants, the second by exponential
    layers concentrating at a corner.
    """
    return max(sum(2.0 / L for L in dom.edges), math.sqrt(3.0))


def _l4_embedding_constant(dom: ChamberDomain, c_poi: float) -> float:
    inv_sum = sum(1.0 / L for L in dom.edges)
    inner = inv_sum * c_poi ** (4.0 / 3.0) + 8.0 / math.sqrt(3.0) * c_poi ** (1.0 / 3.0)
    inner /= 3.0
    return inner**0.75


def analytic_trilinear_constant(dom: ChamberDomain) -> float:
    """C_1 = max(K_D^2, K_D K_N) with K_X the L4-gradient embedding constant."""
    c_d, c_n = analytic_poincare_constants(dom)
    k_d = _l4_embedding_constant(dom, c_d)
    k_n = _l4_embedding_constant(dom, c_n)
    return max(k_d * k_d, k_d * k_n)


def _smallest_eigenvalues(mat: sp.spmatrix, k: int) -> np.ndarray:
    vals = eigsh(mat.tocsc(), k=k, sigma=-1.0, which="LM", return_eigenvectors=False)
    return np.sort(np.asarray(vals, dtype=float))


def _discrete_poincare(grid: MacGrid) -> tuple[float, float]:
    neumann = -neumann_laplacian_matrix(grid)
    dirichlet = neumann - dirichlet_closure(grid, frozenset(FACE_TAGS))
    lam_d = _smallest_eigenvalues(dirichlet, 1)[0]
    lam_n = _smallest_eigenvalues(neumann, 2)[1]
    return 1.0 / math.sqrt(lam_d), 1.0 / math.sqrt(lam_n)


def _discrete_trace(grid: MacGrid) -> float:
    """Largest ||phi||_L1(boundary) / ||phi||_W11 over constants and wall layers.

    The family is exp(-sum_i s_i x_i / eps) for s in {0, 1}^3 with widths eps
    resolved by the grid; integrals use midpoint quadrature.
    """
    x, y, z = grid.cell_centers()
    coords = (x, y, z)
    dom = grid.domain
    candidates = (min(dom.edges) / 2**k for k in range(1, 6))
    widths = [w for w in candidates if w >= 2.0 * grid.h_max]
    best = 0.0
    for s in np.ndindex(2, 2, 2):
        active = sum(s)
        for eps in widths if active else [1.0]:

            def phi(
                pts: Sequence[np.ndarray], s: tuple = s, eps: float = eps
            ) -> np.ndarray:
                return np.exp(-sum(si * p for si, p in zip(s, pts)) / eps)

            vol = float(np.sum(phi(coords))) * grid.cell_volume
            grad = vol * math.sqrt(active) / eps
            bnd = 0.0
            for d in range(3):
                area = grid.cell_volume / grid.h[d]
                for wall in (0.0, dom.edges[d]):
                    pts = list(coords)
                    pts[d] = np.full_like(coords[d], wall)
                    sl: list[Any] = [slice(None)] * 3
                    sl[d] = 0
                    bnd += float(np.sum(phi(pts)[tuple(sl)])) * area
            best = max(best, bnd / (vol + grad))
    return best


def _discrete_trilinear(grid: MacGrid, seed: int, samples: int) -> float:
    rng = np.random.default_rng(seed)
    stencil = velocity_advection_stencil(grid)
    best = 0.0
    for _ in range(samples):
        u, v, w = (random_solenoidal(grid, rng) for _ in range(3))
        b0 = grid.cell_volume * float(w.flat() @ (stencil.matrix(u.flat()) @ v.flat()))
        denom = float(np.prod([velocity_energy_norm(x) for x in (u, v, w)]))
        if denom > 0:
            best = max(best, abs(b0) / denom)
    return best


def domain_constants(
    dom: ChamberDomain,
    mode: str = "analytic",
    grid: MacGrid | int | None = None,
    seed: int = 0,
    samples: int = 32,
) -> DomainConstants:
    """Evaluate the four domain constants.

    Args:
        dom: The chamber.
        mode: "analytic" (closed forms) or "discrete" (Rayleigh quotients and
            sampled maxima on a MAC grid). Random triples only bound C_1 from
            below, so the discrete C_1 never drops under the analytic one.
        grid: Grid or cells per edge for discrete mode (default 16, minimum 8).
        seed: Seed of the random triples used for the discrete C_1.
        samples: Number of random triples.

    Returns:
        DomainConstants tagged with their estimation method.
    """
    if dom.aspect_ratio > MAX_ASPECT_RATIO:
        raise ParameterError(
            "aspect_ratio", dom.aspect_ratio, "degenerate box (edge ratio > 1e6)"
        )
    if mode == "analytic":
        c_d, c_n = analytic_poincare_constants(dom)
        return DomainConstants(
            C_poi_dirichlet=c_d,
            C_poi_meanzero=c_n,
            C_tr=analytic_trace_constant(dom),
            C_1=analytic_trilinear_constant(dom),
            sources={name: "analytic" for name in CONSTANT_NAMES},
        )
    if mode != "discrete":
        raise ParameterError("mode", mode, "must be 'analytic' or 'discrete'")

    if grid is None:
        grid = 16
    if not isinstance(grid, MacGrid):
        grid = MacGrid.uniform(dom, int(grid))
    if min(grid.shape) < MIN_DISCRETE_CELLS:
        raise ParameterError(
            "grid",
            grid.shape,
            f"discrete mode needs >= {MIN_DISCRETE_CELLS} cells per edge",
        )
    if grid.domain != dom:
        raise ParameterError(
            "grid", grid.domain.edges, "grid belongs to a different domain"
        )

    c_d, c_n = _discrete_poincare(grid)
    sampled = _discrete_trilinear(grid, seed, samples)
    bound = analytic_trilinear_constant(dom)
    logger.debug("sampled trilinear ratio %.3e, analytic bound %.6g", sampled, bound)
    constants = DomainConstants(
        C_poi_dirichlet=c_d,
        C_poi_meanzero=c_n,
        C_tr=_discrete_trace(grid),
        C_1=max(sampled, bound),
        sources={
            "C_poi_dirichlet": "discrete-rayleigh",
            "C_poi_meanzero": "discrete-rayleigh",
            "C_tr": "discrete-sample",
            "C_1": "analytic" if bound >= sampled else "discrete-sample",
        },
    )
    logger.debug("discrete constants on %s: %s", grid.shape, constants.to_dict())
    return constants


# ============================================================================
# Inputs and records
# ============================================================================


@dataclass(frozen=True)
class CertificateInputs:
    """Everything the certificate arithmetic reads."""

    domain: ChamberDomain
    constants: DomainConstants
    groups: DimensionlessGroups
    r: ConsumptionFunction
    alpha1: float
    alpha2: float
    f_n_norm: float
    f_c_norm: float
    F_norm: float
    gravity: float = 1.0

    def __post_init__(self) -> None:
        for name in ("f_n_norm", "f_c_norm", "F_norm", "alpha1", "alpha2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ParameterError(name, value, "must be finite and >= 0")
        if not (math.isfinite(self.gravity) and self.gravity > 0):
            raise ParameterError("gravity", self.gravity)

    @classmethod
    def from_sources(
        cls,
        domain: ChamberDomain,
        constants: DomainConstants,
        groups: DimensionlessGroups,
        r: ConsumptionFunction,
        sources: SourceData,
        gravity: float = 1.0,
    ) -> CertificateInputs:
        f_n, f_c, F = sources.norms()
        return cls(
            domain=domain,
            constants=constants,
            groups=groups,
            r=r,
            alpha1=sources.alpha1,
            alpha2=sources.alpha2,
            f_n_norm=f_n,
            f_c_norm=f_c,
            F_norm=F,
            gravity=gravity,
        )

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "constants": self.constants.to_dict(),
            "groups": self.groups.to_dict(),
            "r": self.r.to_dict(),
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "f_n_norm": self.f_n_norm,
            "f_c_norm": self.f_c_norm,
            "F_norm": self.F_norm,
            "gravity": self.gravity,
        }


@dataclass
class Check:
    """One inequality lhs < rhs (or lhs <= rhs when not strict)."""

    name: str
    lhs: float | None
    rhs: float | None
    description: str = ""
    strict: bool = True

    @property
    def slack(self) -> float | None:
        if self.lhs is None or self.rhs is None:
            return None
        return self.rhs - self.lhs

    @property
    def satisfied(self) -> bool:
        if self.lhs is None or self.rhs is None:
            return False
        return self.lhs < self.rhs if self.strict else self.lhs <= self.rhs

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "satisfied": self.satisfied,
            "description": self.description,
        }


@dataclass(frozen=True)
class AprioriBounds:
    u_bound: float
    n_bound: float
    c_bound: float
    u_bound_energy: float

    def to_dict(self) -> dict:
        return {
            "u_bound": self.u_bound,
            "n_bound": self.n_bound,
            "c_bound": self.c_bound,
            "u_bound_energy": self.u_bound_energy,
        }


def _finite_or_none(x: float) -> float | None:
    return x if math.isfinite(x) else None


@dataclass(frozen=True)
class LambdaFeasibility:
    """Solvability of the strict system

        lambda2 < K1 lambda3,  lambda3 < K2 lambda2,  lambda1 < K3 lambda2

    with a witness (lambda1, lambda2, lambda3) when feasible.
    """

    feasible: bool
    K1: float
    K2: float
    K3: float
    witness: tuple[float, float, float] | None = None

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "K1": _finite_or_none(self.K1),
            "K2": _finite_or_none(self.K2),
            "K3": _finite_or_none(self.K3),
            "witness": list(self.witness) if self.witness else None,
        }


# ============================================================================
# Shared arithmetic (float or mpmath)
# ============================================================================


def _ratio(num: Any, den: Any) -> Any:
    return num / den if den > 0 else None


def _theta_terms(C_tr: Any, C_poi: Any, chi: Any, r_l1: Any) -> tuple[Any, Any, Any]:
    numerator = 1 - C_tr
    l1_form = numerator - 2 * chi * r_l1 * C_tr * C_poi
    return numerator, l1_form, numerator - C_tr * C_poi


def _gamma0_terms(
    omega: Any,
    C_poi: Any,
    theta1: Any,
    theta2: Any,
    chi: Any,
    beta: Any,
    delta: Any,
    alpha1: Any,
    r_inf: Any,
    fn: Any,
    fc: Any,
) -> tuple[Any, Any]:
    """(denominator, Gamma0 or None)."""
    den = omega - chi * beta * alpha1 * r_inf**2 * C_poi**2 * theta1 * theta2
    bracket = chi * alpha1 * r_inf**2 * theta2 / (delta * omega) * fc + fn
    return den, _ratio(omega * theta1 * C_poi * bracket, den)


def _gamma_terms(
    C_tr: Any,
    C_D: Any,
    C_N: Any,
    C1: Any,
    S_c: Any,
    gam: Any,
    delta: Any,
    grav: Any,
    r_l1: Any,
    r_lip: Any,
    g0: Any,
    F: Any,
) -> dict[str, Any]:
    d1 = S_c - C1 * C_D * (gam * grav * g0 + F)
    d2 = 1 - 2 * r_l1 * (1 - C_tr + C_tr * C_N)
    d3 = delta * (1 - C_tr - C_tr * C_N) - C1**3 * r_lip * g0
    return {
        "gamma1_denominator": d1,
        "gamma2_denominator": d2,
        "gamma3_denominator": d3,
        "gamma1": _ratio(gam * S_c * grav * C_D, d1),
        "gamma2": _ratio(1 - C_tr, d2),
        "gamma3": _ratio(1 - C_tr, d3),
    }


def _evaluate(inp: CertificateInputs, num: Callable[[float], Any]) -> tuple[dict, dict]:
    """All derived quantities and (lhs, rhs) pairs, in the arithmetic of ``num``."""
    dc = inp.constants
    grp = inp.groups
    C_tr, C_D, C_N, C1 = (
        num(v) for v in (dc.C_tr, dc.C_poi_dirichlet, dc.C_poi_meanzero, dc.C_1)
    )
    S_c, gam, chi, delta, beta = (
        num(v) for v in (grp.S_c, grp.gamma, grp.chi, grp.delta, grp.beta)
    )
    r_inf, r_l1, r_lip = (
        num(v) for v in (inp.r.norm_inf, inp.r.norm_l1, inp.r.norm_lip)
    )
    omega = num(inp.domain.measure)
    a1 = num(inp.alpha1)
    fn, fc, F = num(inp.f_n_norm), num(inp.f_c_norm), num(inp.F_norm)
    grav = num(inp.gravity)
    inf = num(math.inf)

    vals: dict[str, Any] = {}
    checks: dict[str, tuple[Any, Any]] = {}

    numer, d1, d2 = _theta_terms(C_tr, C_N, chi, r_l1)
    vals["theta1_denominator"] = d1
    vals["theta2_denominator"] = d2
    theta1 = _ratio(numer, d1) if numer > 0 else None
    theta2 = _ratio(numer, d2) if numer > 0 else None
    vals["theta1"] = theta1
    vals["theta2"] = theta2

    checks["trace_poincare"] = (C_tr * C_N * max(2 * chi * r_l1, num(1)), 1 - C_tr)

    g0 = None
    if theta1 is not None and theta2 is not None:
        coupling = chi * beta * r_inf**2 * C_N**2 * theta1 * theta2
        checks["coupling_mean"] = (coupling * a1 / omega, num(1))
        checks["coupling_total"] = (coupling * a1, num(1))
        den, g0 = _gamma0_terms(
            omega, C_N, theta1, theta2, chi, beta, delta, a1, r_inf, fn, fc
        )
        vals["gamma0_denominator"] = den
    else:
        checks["coupling_mean"] = (None, num(1))
        checks["coupling_total"] = (None, num(1))
        vals["gamma0_denominator"] = None
    vals["gamma0"] = g0

    pi_value = None
    if g0 is not None:
        vals.update(
            _gamma_terms(C_tr, C_D, C_N, C1, S_c, gam, delta, grav, r_l1, r_lip, g0, F)
        )
        oxygen_rhs = delta * (1 - C_tr - C_tr * C_N)
        checks["velocity_coercivity"] = (C1 * C_D * (gam * grav * g0 + F), S_c)
        checks["oxygen_coercivity_l1"] = (C1**3 * r_l1 * g0, oxygen_rhs)
        checks["oxygen_coercivity_lip"] = (C1**3 * r_lip * g0, oxygen_rhs)
        checks["lipschitz_smallness"] = (C1 * r_lip * g0, num(1))
        checks["lipschitz_smallness_squared"] = (C1**2 * r_lip * g0, num(1))
        checks["gamma2_denominator"] = (2 * r_l1 * (1 - C_tr + C_tr * C_N), num(1))
        lip_gap = 1 - C1 * r_lip * g0
        vals["lipschitz_gap"] = lip_gap
        g1, g2, g3 = vals["gamma1"], vals["gamma2"], vals["gamma3"]
        if None not in (g1, g2, g3) and lip_gap > 0:
            oxygen_part = (
                r_inf
                * C1
                * g3
                * theta2
                * C_N
                / (delta * lip_gap)
                * (beta * C_N * r_inf * g0 + fc)
            )
            pi_value = g1 * g2 * (C1 * g0 + oxygen_part)

        vals["u_bound"] = C_D * (gam * grav * g0 + F)
        vals["n_bound"] = g0
        vals["c_bound"] = theta2 * C_N / delta * (beta * C_N * r_inf * g0 + fc)
        vals["u_bound_energy"] = gam * grav * C_D * C_N * g0 + C_D * F / S_c

        C_max = max(C_D, C_N)
        vals["K3"] = (
            4 / (3 * theta1 * gam**2 * grav**2 * S_c * C_max**4) if gam > 0 else inf
        )
        k1_coupling = chi * a1 * r_inf
        vals["K1"] = (
            4 * delta * omega**2 / (6 * theta1 * theta2 * k1_coupling**2)
            if k1_coupling > 0
            else inf
        )
        k2_coupling = beta * C_max**2 * r_inf
        vals["K2"] = (
            4 * delta / (6 * theta1 * theta2 * k2_coupling**2)
            if k2_coupling > 0
            else inf
        )
    else:
        for name in (
            "velocity_coercivity",
            "oxygen_coercivity_l1",
            "oxygen_coercivity_lip",
            "lipschitz_smallness",
            "lipschitz_smallness_squared",
            "gamma2_denominator",
        ):
            checks[name] = (None, None)
    vals["pi"] = pi_value
    checks["contraction"] = (pi_value, num(1))
    return vals, checks


def _to_float(x: Any) -> float | None:
    return None if x is None else float(x)


def _cross_check(working: dict, extended: dict) -> None:
    for key, a in working.items():
        b = extended.get(key)
        if a is None and b is None:
            continue
        if a is None or b is None:
            raise PrecisionDefect(key, a, b)  # type: ignore[arg-type]
        a_f, b_mp = float(a), mpmath.mpf(b)
        if mpmath.isinf(b_mp) or math.isinf(a_f):
            if not (mpmath.isinf(b_mp) and math.isinf(a_f)):
                raise PrecisionDefect(key, a_f, float(b_mp))
            continue
        diff = abs(mpmath.mpf(a_f) - b_mp)
        scale = abs(b_mp)
        rel = diff / scale if scale != 0 else diff
        if rel > PRECISION_TOLERANCE:
            raise PrecisionDefect(key, a_f, float(b_mp))


def evaluate_all(
    inp: CertificateInputs, check_precision: bool = True
) -> tuple[dict, dict]:
    """Working-precision values and checks, cross-checked in extended precision."""
    vals, checks = _evaluate(inp, float)
    if check_precision:
        with mpmath.workdps(EXTENDED_DIGITS):
            ext_vals, ext_checks = _evaluate(inp, mpmath.mpf)
            flat_w = dict(vals)
            flat_e = dict(ext_vals)
            for name, (lhs, rhs) in checks.items():
                flat_w[f"{name}.lhs"], flat_w[f"{name}.rhs"] = lhs, rhs
                elhs, erhs = ext_checks[name]
                flat_e[f"{name}.lhs"], flat_e[f"{name}.rhs"] = elhs, erhs
            _cross_check(flat_w, flat_e)
    return (
        {k: _to_float(v) for k, v in vals.items()},
        {k: (_to_float(lhs), _to_float(rhs)) for k, (lhs, rhs) in checks.items()},
    )


# ============================================================================
# Public operations
# ============================================================================

_DESCRIPTIONS = {
    "r_bounded_integrable": (
        "declared norms of r are finite and dominate sampled r (L-inf, L1, Lip)"
    ),
    "trace_poincare": "C_tr C_poi max(2 chi ||r||_1, 1) < 1 - C_tr",
    "coupling_mean": (
        "chi beta n_mean ||r||_inf^2 C_poi^2 Theta1 Theta2 < 1 "
        "with n_mean = alpha1/|Omega|"
    ),
    "coupling_total": "same product with the total alpha1 in place of the mean",
    "velocity_coercivity": "C_1 C_poi (gamma g Gamma0 + ||F||) < S_c",
    "oxygen_coercivity_l1": "C_1^3 ||r||_1 Gamma0 < delta (1 - C_tr - C_tr C_poi)",
    "oxygen_coercivity_lip": "C_1^3 ||r||_Lip Gamma0 < delta (1 - C_tr - C_tr C_poi)",
    "lipschitz_smallness": "C_1 ||r||_Lip Gamma0 < 1",
    "lipschitz_smallness_squared": "C_1^2 ||r||_Lip Gamma0 < 1",
    "gamma2_denominator": "2 ||r||_1 (1 - C_tr + C_tr C_poi) < 1",
    "contraction": "Pi < 1",
}

EXISTENCE_CHECKS = (
    "r_bounded_integrable",
    "trace_poincare",
    "coupling_mean",
    "coupling_total",
)
UNIQUENESS_CHECKS = (
    "velocity_coercivity",
    "oxygen_coercivity_l1",
    "oxygen_coercivity_lip",
    "lipschitz_smallness",
    "lipschitz_smallness_squared",
    "gamma2_denominator",
    "contraction",
)
_NON_DENOMINATORS = (
    "u_bound",
    "n_bound",
    "c_bound",
    "u_bound_energy",
    "K1",
    "K2",
    "K3",
)
_DERIVED = ("theta1", "theta2", "gamma0", "gamma1", "gamma2", "gamma3", "pi_value")


def _make_check(name: str, pair: tuple[float | None, float | None]) -> Check:
    return Check(name=name, lhs=pair[0], rhs=pair[1], description=_DESCRIPTIONS[name])


def _consumption_check(r: ConsumptionFunction) -> Check:
    """Fails with lhs = number of violations when sampled r breaks its norms."""
    violations = validate_consumption(r)
    check = _make_check("r_bounded_integrable", (float(len(violations)), 1.0))
    if violations:
        logger.warning("consumption %s: %s", r.label, "; ".join(violations))
        check.description += ": " + "; ".join(violations)
    return check


def thetas(
    dc: DomainConstants, chi: float, r: ConsumptionFunction
) -> tuple[float, float]:
    """(Theta1, Theta2); raises HypothesisViolation on a non-positive denominator."""
    numer, d1, d2 = _theta_terms(dc.C_tr, dc.C_poi_meanzero, chi, r.norm_l1)
    if numer <= 0 or d1 <= 0:
        raise HypothesisViolation(
            "trace_poincare",
            2 * chi * r.norm_l1 * dc.C_tr * dc.C_poi_meanzero,
            numer,
            "existence hypothesis violated: 1 - C_tr - 2 chi ||r||_1 C_tr C_poi <= 0",
        )
    if d2 <= 0:
        raise HypothesisViolation(
            "trace_poincare",
            dc.C_tr * dc.C_poi_meanzero,
            numer,
            "existence hypothesis violated: 1 - C_tr - C_tr C_poi <= 0",
        )
    return numer / d1, numer / d2


def gamma0(
    dc: DomainConstants,
    dom: ChamberDomain,
    groups: DimensionlessGroups,
    r: ConsumptionFunction,
    alpha1: float,
    f_n_norm: float,
    f_c_norm: float,
) -> float:
    theta1, theta2 = thetas(dc, groups.chi, r)
    den, value = _gamma0_terms(
        dom.measure,
        dc.C_poi_meanzero,
        theta1,
        theta2,
        groups.chi,
        groups.beta,
        groups.delta,
        alpha1,
        r.norm_inf,
        f_n_norm,
        f_c_norm,
    )
    if value is None:
        raise HypothesisViolation(
            "coupling_total",
            dom.measure - den,
            dom.measure,
            "existence hypothesis violated: Gamma0 denominator is non-positive",
        )
    return float(value)


def gammas(
    dc: DomainConstants,
    groups: DimensionlessGroups,
    r: ConsumptionFunction,
    gamma0_val: float,
    F_norm: float,
    gravity: float = 1.0,
) -> tuple[float, float, float]:
    """(Gamma1, Gamma2, Gamma3); each denominator must be positive."""
    terms = _gamma_terms(
        dc.C_tr,
        dc.C_poi_dirichlet,
        dc.C_poi_meanzero,
        dc.C_1,
        groups.S_c,
        groups.gamma,
        groups.delta,
        gravity,
        r.norm_l1,
        r.norm_lip,
        gamma0_val,
        F_norm,
    )
    failures = {
        "gamma1": ("velocity_coercivity", groups.S_c),
        "gamma2": ("gamma2_denominator", 1.0),
        "gamma3": (
            "oxygen_coercivity_lip",
            groups.delta * (1 - dc.C_tr - dc.C_tr * dc.C_poi_meanzero),
        ),
    }
    for key, (check, rhs) in failures.items():
        if terms[key] is None:
            den = terms[f"{key}_denominator"]
            raise HypothesisViolation(
                check,
                rhs - den,
                rhs,
                f"uniqueness hypothesis violated: {key} denominator <= 0",
            )
    return float(terms["gamma1"]), float(terms["gamma2"]), float(terms["gamma3"])


def check_existence(inputs: CertificateInputs) -> list[Check]:
    """Existence hypotheses as report records; never raises on a failed check."""
    _, checks = evaluate_all(inputs, check_precision=False)
    out = [_consumption_check(inputs.r)]
    out.extend(_make_check(name, checks[name]) for name in EXISTENCE_CHECKS[1:])
    return out


def check_uniqueness(inputs: CertificateInputs) -> tuple[list[Check], float | None]:
    """Uniqueness hypotheses (all variants) and Pi.

    Pi is None when it cannot be formed.
    """
    vals, checks = evaluate_all(inputs, check_precision=False)
    return [_make_check(name, checks[name]) for name in UNIQUENESS_CHECKS], vals["pi"]


def apriori_bounds(inputs: CertificateInputs) -> AprioriBounds:
    vals, _ = evaluate_all(inputs, check_precision=False)
    if vals.get("n_bound") is None:
        raise HypothesisViolation(
            "coupling_total",
            1.0,
            0.0,
            "a-priori bounds undefined: existence hypotheses fail",
        )
    return AprioriBounds(
        u_bound=vals["u_bound"],  # type: ignore[arg-type]
        n_bound=vals["n_bound"],  # type: ignore[arg-type]
        c_bound=vals["c_bound"],  # type: ignore[arg-type]
        u_bound_energy=vals["u_bound_energy"],  # type: ignore[arg-type]
    )


def _interior_point(lo: float, hi: float) -> float:
    if lo > 0 and math.isfinite(hi):
        return math.sqrt(lo * hi)
    if lo == 0 and math.isfinite(hi):
        return hi / 2.0
    if lo > 0:
        return 2.0 * lo
    return 1.0


def lambda_witness(K1: float, K2: float, K3: float) -> LambdaFeasibility:
    """Feasibility of the strict lambda system; K values may be +inf."""
    for name, value in (("K1", K1), ("K2", K2), ("K3", K3)):
        if not value > 0:
            raise ParameterError(name, value)
    feasible = K1 * K2 > 1.0
    if not feasible:
        return LambdaFeasibility(False, K1, K2, K3)
    lam2 = 1.0
    lam3 = _interior_point(lam2 / K1, K2 * lam2)
    lam1 = K3 * lam2 / 2.0 if math.isfinite(K3) else 1.0
    return LambdaFeasibility(True, K1, K2, K3, (lam1, lam2, lam3))


def gossez_lambda_feasibility(inputs: CertificateInputs) -> LambdaFeasibility | None:
    """None when Theta or Gamma0 cannot be formed."""
    vals, _ = evaluate_all(inputs, check_precision=False)
    if vals.get("K1") is None:
        return None
    return lambda_witness(vals["K1"], vals["K2"], vals["K3"])  # type: ignore[arg-type]


def compare_bounds(
    u_norm: float, n_norm: float, c_norm: float, bounds: AprioriBounds
) -> list[Check]:
    """Computed norms against the a-priori bounds; margin is the check slack."""
    return [
        Check(
            "n_bound", n_norm, bounds.n_bound, "||n_hat||_H1 <= Gamma0", strict=False
        ),
        Check(
            "u_bound",
            u_norm,
            bounds.u_bound,
            "||u||_V <= C_poi (gamma g Gamma0 + ||F||)",
            strict=False,
        ),
        Check(
            "c_bound", c_norm, bounds.c_bound, "||c_hat||_H1 <= c_bound", strict=False
        ),
    ]


# ============================================================================
# Certificate
# ============================================================================


@dataclass
class Certificate:
    """All constants, derived values and verdicts for one problem."""

    inputs: CertificateInputs
    values: dict[str, float | None]
    existence_checks: list[Check]
    uniqueness_checks: list[Check]
    lambda_feasibility: LambdaFeasibility | None
    bounds: AprioriBounds | None
    precision_checked: bool = True

    @property
    def theta1(self) -> float | None:
        return self.values.get("theta1")

    @property
    def theta2(self) -> float | None:
        return self.values.get("theta2")

    @property
    def gamma0(self) -> float | None:
        return self.values.get("gamma0")

    @property
    def gamma1(self) -> float | None:
        return self.values.get("gamma1")

    @property
    def gamma2(self) -> float | None:
        return self.values.get("gamma2")

    @property
    def gamma3(self) -> float | None:
        return self.values.get("gamma3")

    @property
    def pi_value(self) -> float | None:
        return self.values.get("pi")

    @property
    def exists(self) -> bool:
        return all(c.satisfied for c in self.existence_checks)

    @property
    def unique(self) -> bool:
        return self.exists and all(c.satisfied for c in self.uniqueness_checks)

    @property
    def lambda_feasible(self) -> bool:
        return bool(self.lambda_feasibility and self.lambda_feasibility.feasible)

    def failed_checks(self) -> list[Check]:
        checks = self.existence_checks + self.uniqueness_checks
        return [c for c in checks if not c.satisfied]

    def denominators(self) -> dict[str, float | None]:
        return {k: v for k, v in self.values.items() if k.endswith("_denominator")}

    def to_dict(self) -> dict:
        return {
            "inputs": self.inputs.to_dict(),
            "theta1": self.theta1,
            "theta2": self.theta2,
            "gamma0": self.gamma0,
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "gamma3": self.gamma3,
            "pi_value": self.pi_value,
            "denominators": self.denominators(),
            "existence_checks": [c.to_dict() for c in self.existence_checks],
            "uniqueness_checks": [c.to_dict() for c in self.uniqueness_checks],
            "exists": self.exists,
            "unique": self.unique,
            "lambda_feasibility": (
                self.lambda_feasibility.to_dict() if self.lambda_feasibility else None
            ),
            "apriori_bounds": self.bounds.to_dict() if self.bounds else None,
            "precision_checked": self.precision_checked,
        }

    def to_flat(self) -> list[tuple[str, Any]]:
        """Flat (key, value) pairs for the text report."""
        rows: list[tuple[str, Any]] = []
        for name in CONSTANT_NAMES:
            rows.append((name, getattr(self.inputs.constants, name)))
            rows.append((f"{name}.source", self.inputs.constants.source(name)))
        for key in _DERIVED:
            rows.append((key, getattr(self, key)))
        for key, value in self.denominators().items():
            rows.append((f"denominator.{key}", value))
        sections = (
            ("existence", self.existence_checks),
            ("uniqueness", self.uniqueness_checks),
        )
        for section, checks in sections:
            for c in checks:
                prefix = f"{section}.{c.name}"
                rows.extend(
                    [
                        (f"{prefix}.lhs", c.lhs),
                        (f"{prefix}.rhs", c.rhs),
                        (f"{prefix}.slack", c.slack),
                        (f"{prefix}.satisfied", c.satisfied),
                    ]
                )
        rows.append(("exists", self.exists))
        rows.append(("unique", self.unique))
        if self.lambda_feasibility:
            for key, value in self.lambda_feasibility.to_dict().items():
                rows.append((f"lambda.{key}", value))
        if self.bounds:
            for key, value in self.bounds.to_dict().items():
                rows.append((f"apriori.{key}", value))
        return rows


def build_certificate(
    inputs: CertificateInputs, check_precision: bool = True
) -> Certificate:
    """Run the full pipeline; failed hypotheses are reported, never raised."""
    vals, checks = evaluate_all(inputs, check_precision=check_precision)
    existence = [_consumption_check(inputs.r)]
    existence.extend(_make_check(name, checks[name]) for name in EXISTENCE_CHECKS[1:])
    uniqueness = [_make_check(name, checks[name]) for name in UNIQUENESS_CHECKS]

    feasibility = None
    bounds = None
    if vals.get("K1") is not None:
        feasibility = lambda_witness(  # type: ignore[arg-type]
            vals["K1"], vals["K2"], vals["K3"]
        )
        bounds = AprioriBounds(
            u_bound=vals["u_bound"],  # type: ignore[arg-type]
            n_bound=vals["n_bound"],  # type: ignore[arg-type]
            c_bound=vals["c_bound"],  # type: ignore[arg-type]
            u_bound_energy=vals["u_bound_energy"],  # type: ignore[arg-type]
        )
    values = {
        k: v
        for k, v in vals.items()
        if k not in _NON_DENOMINATORS
    }
    cert = Certificate(
        inputs=inputs,
        values=values,
        existence_checks=existence,
        uniqueness_checks=uniqueness,
        lambda_feasibility=feasibility,
        bounds=bounds,
        precision_checked=check_precision,
    )
    logger.info(
        "certificate: exists=%s unique=%s Gamma0=%s Pi=%s",
        cert.exists,
        cert.unique,
        cert.gamma0,
        cert.pi_value,
    )
    for c in cert.failed_checks():
        logger.debug("check %s failed: lhs=%s rhs=%s", c.name, c.lhs, c.rhs)
    return cert
