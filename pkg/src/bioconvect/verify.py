"""
Verification harnesses

Responsibilities:
- Manufactured solutions (rest / stratified / swirl) with symbolic sources
- Grid-refinement convergence studies and their tables
- A-priori bound and wall-flux audits of a computed state
- Picard vs monolithic Newton comparison on tiny grids
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import sympy as sp

from .certificate import Certificate, Check, compare_bounds
from .errors import ConvergenceError, ParameterError, SolverDivergence
from .grid import MacGrid, ScalarField, VectorField
from .models import ChamberDomain, ConsumptionFunction, DimensionlessGroups, SourceData
from .newton import NewtonResult, newton_oracle
from .operators import gradient_norm, velocity_energy_norm, wall_flux_residual
from .solver import FieldState, ProblemData, discrete_norms, h1_norm, solve_stationary

logger = logging.getLogger(__name__)

MMS_CASES = ("rest", "stratified", "swirl")
ROUNDOFF = 1e-12
ORACLE_MAX_CELLS = 512
FLUX_FACTOR = 10.0
ORACLE_TOLERANCE = 1e-8

X, Y, Z = sp.symbols("x y z", real=True)
COORDS = (X, Y, Z)
_R = sp.Function("r")
_R_PRIME = sp.Function("r_prime")


# ============================================================================
# Manufactured solutions
# ============================================================================


def _unknown_case(name: str) -> ParameterError:
    choices = ", ".join(MMS_CASES)
    return ParameterError(
        "case", name, f"unknown manufactured solution (choose from {choices})"
    )


def _profiles(name: str, domain: ChamberDomain) -> dict[str, sp.Expr]:
    L1, L2, L3 = (sp.Float(v) for v in domain.edges)
    cx, cy, cz = sp.cos(sp.pi * X / L1), sp.cos(sp.pi * Y / L2), sp.cos(sp.pi * Z / L3)
    sx, sy, sz = sp.sin(sp.pi * X / L1), sp.sin(sp.pi * Y / L2), sp.sin(sp.pi * Z / L3)
    # sin^2 in x and z keeps u'' = 0 on the walls as well as u = 0
    psi = sx**2 * sy * sz**2
    zero = sp.Integer(0)
    if name == "rest":
        return {"psi": zero, "p": zero, "n": zero, "c": zero}
    if name == "stratified":
        return {
            "psi": sp.Float(0.02) * psi,
            "p": sp.Float(0.01) * cx * cy * cz,
            "n": sp.Float(0.1) * cz,
            "c": sp.Float(0.05) * cz,
        }
    if name == "swirl":
        return {
            "psi": sp.Float(0.1) * psi,
            "p": sp.Float(0.02) * cx * cz,
            "n": sp.Float(0.1) * cx * cy + sp.Float(0.05) * cz,
            "c": sp.Float(0.05) * cx * cz,
        }
    raise _unknown_case(name)


def _grad(f: sp.Expr) -> list[sp.Expr]:
    return [sp.diff(f, v) for v in COORDS]


def _lap(f: sp.Expr) -> sp.Expr:
    return sum((sp.diff(f, v, 2) for v in COORDS), sp.Integer(0))


def _chain_rule(expr: sp.Expr) -> sp.Expr:
    """Rewrite derivatives of the symbolic r as calls of r_prime."""
    expr = expr.replace(
        lambda e: isinstance(e, sp.Subs) and e.expr.has(_R),
        lambda e: _R_PRIME(e.point[0]),
    )
    return expr.replace(
        lambda e: isinstance(e, sp.Derivative)
        and isinstance(e.expr, sp.core.function.AppliedUndef)
        and e.expr.func == _R,
        lambda e: _R_PRIME(e.expr.args[0]),
    )


@dataclass(frozen=True)
class ManufacturedSolution:
    """Smooth exact fields; scalars are deviations from the means alpha/|Omega|."""

    name: str
    domain: ChamberDomain
    psi: sp.Expr
    p: sp.Expr
    n_hat: sp.Expr
    c_hat: sp.Expr

    @property
    def velocity(self) -> tuple[sp.Expr, sp.Expr, sp.Expr]:
        return (-sp.diff(self.psi, Z), sp.Integer(0), sp.diff(self.psi, X))

    def _advect(self, f: sp.Expr) -> sp.Expr:
        u = self.velocity
        return sum((u[i] * sp.diff(f, COORDS[i]) for i in range(3)), sp.Integer(0))

    def source_expressions(
        self,
        groups: DimensionlessGroups,
        alpha1: float,
        alpha2: float,
        gravity: float = 1.0,
    ) -> dict[str, sp.Expr]:
        """f_n, f_c, F1..F3 with r left symbolic (r, r_prime)."""
        measure = self.domain.measure
        n = self.n_hat + sp.Float(alpha1 / measure)
        c = self.c_hat + sp.Float(alpha2 / measure)
        gn, gc = _grad(n), _grad(c)
        chemo = (
            _R(c) * sum((gn[i] * gc[i] for i in range(3)), sp.Integer(0))
            + n * _R_PRIME(c) * sum((g**2 for g in gc), sp.Integer(0))
            + n * _R(c) * _lap(c)
        )
        f_n = -_lap(n) + self._advect(n) + groups.chi * chemo
        f_c = -groups.delta * _lap(c) + self._advect(c) + groups.beta * _R(c) * n
        u = self.velocity
        F = [
            -groups.S_c * _lap(u[d])
            + self._advect(u[d])
            + groups.S_c * sp.diff(self.p, COORDS[d])
            for d in range(3)
        ]
        F[2] = F[2] + groups.gamma * groups.S_c * gravity * self.n_hat
        return {"f_n": f_n, "f_c": f_c, "F1": F[0], "F2": F[1], "F3": F[2]}

    def residual_expressions(
        self,
        groups: DimensionlessGroups,
        alpha1: float,
        alpha2: float,
        gravity: float = 1.0,
    ) -> dict[str, sp.Expr]:
        """Strong-form PDE residuals of the exact fields, in expanded chemotaxis form.

        The chemotaxis divergence is rebuilt here by the product rule on
        n r(c) grad c, independently of the expansion used for the sources.
        """
        measure = self.domain.measure
        n = self.n_hat + sp.Float(alpha1 / measure)
        c = self.c_hat + sp.Float(alpha2 / measure)
        src = self.source_expressions(groups, alpha1, alpha2, gravity)
        gc = _grad(c)
        flux = [n * _R(c) * g for g in gc]
        div_flux = _chain_rule(
            sum((sp.diff(flux[i], COORDS[i]) for i in range(3)), sp.Integer(0))
        )
        u = self.velocity
        out = {
            "bacteria": -_lap(n) + self._advect(n) + groups.chi * div_flux - src["f_n"],
            "oxygen": (
                -groups.delta * _lap(c)
                + self._advect(c)
                + groups.beta * _R(c) * n
                - src["f_c"]
            ),
            "continuity": sum(
                (sp.diff(u[i], COORDS[i]) for i in range(3)), sp.Integer(0)
            ),
        }
        for d in range(3):
            buoy = sp.Integer(0)
            if d == 2:
                buoy = groups.gamma * groups.S_c * gravity * self.n_hat
            out[f"momentum{d + 1}"] = (
                -groups.S_c * _lap(u[d])
                + self._advect(u[d])
                + groups.S_c * sp.diff(self.p, COORDS[d])
                + buoy
                - src[f"F{d + 1}"]
            )
        return out


def manufactured_solution(name: str, domain: ChamberDomain) -> ManufacturedSolution:
    prof = _profiles(name, domain)
    return ManufacturedSolution(
        name, domain, prof["psi"], prof["p"], prof["n"], prof["c"]
    )


def _lambdify(expr: sp.Expr, r: ConsumptionFunction) -> Callable[..., Any]:
    modules = [{"r": r, "r_prime": r.slope}, "numpy"]
    return sp.lambdify(COORDS, expr, modules=modules)


def mms_case(
    name: str,
    grid: MacGrid,
    groups: DimensionlessGroups,
    r: ConsumptionFunction,
    alpha1: float = 0.5,
    alpha2: float = 0.25,
    gravity: float = 1.0,
) -> tuple[FieldState, SourceData]:
    """Exact discrete fields and compensating sources of a named case.

    Scalars are sampled at cell centres and u at face centres. f_n and f_c
    are projected to zero discrete mean; constants in f_c are absorbed by
    the oxygen mean multiplier.

    Raises:
        ParameterError: unknown case name.
    """
    sol = manufactured_solution(name, grid.domain)
    src = sol.source_expressions(groups, alpha1, alpha2, gravity)
    f_n = ScalarField.from_function(grid, _lambdify(src["f_n"], r))
    f_c = ScalarField.from_function(grid, _lambdify(src["f_c"], r)).minus_mean()
    F = VectorField.from_functions(
        grid, [_lambdify(src[f"F{d}"], r) for d in (1, 2, 3)]
    )
    sources = SourceData.create(f_n, f_c, F, alpha1, alpha2, project_fn=True)

    u = VectorField.from_functions(grid, [_lambdify(e, r) for e in sol.velocity])
    exact = FieldState(
        u=u,
        p=ScalarField.from_function(grid, _lambdify(sol.p, r)).minus_mean(),
        n_hat=ScalarField.from_function(grid, _lambdify(sol.n_hat, r)).minus_mean(),
        c_hat=ScalarField.from_function(grid, _lambdify(sol.c_hat, r)).minus_mean(),
        alpha1=alpha1,
        alpha2=alpha2,
    )
    return exact, sources


def mms_residuals(
    name: str,
    domain: ChamberDomain,
    groups: DimensionlessGroups,
    r: ConsumptionFunction,
    alpha1: float = 0.5,
    alpha2: float = 0.25,
    gravity: float = 1.0,
    samples: int = 7,
) -> dict[str, float]:
    """Max |PDE residual| of the exact fields on a samples^3 interior lattice."""
    sol = manufactured_solution(name, domain)
    res = sol.residual_expressions(groups, alpha1, alpha2, gravity)
    axes = [np.linspace(0.1 * L, 0.9 * L, samples) for L in domain.edges]
    pts = np.meshgrid(*axes, indexing="ij")
    out = {}
    for key, expr in res.items():
        vals = np.broadcast_to(_lambdify(expr, r)(*pts), pts[0].shape)
        out[key] = float(np.max(np.abs(vals)))
    return out


def mms_boundary_residuals(
    name: str, domain: ChamberDomain, samples: int = 9
) -> dict[str, float]:
    """Max |u| on every wall and max |normal derivative| of n-hat, c-hat.

    Both are exactly zero analytically; the returned values are the floating
    point evaluation on a samples x samples lattice of each face.
    """
    sol = manufactured_solution(name, domain)
    velocity = [sp.lambdify(COORDS, e, "numpy") for e in sol.velocity]
    normals = {
        key: [sp.lambdify(COORDS, sp.diff(expr, v), "numpy") for v in COORDS]
        for key, expr in (("n", sol.n_hat), ("c", sol.c_hat))
    }
    out = {"u_wall": 0.0, "n_normal": 0.0, "c_normal": 0.0}
    for d in range(3):
        for side in (0, 1):
            axes = [np.linspace(0.0, L, samples) for L in domain.edges]
            axes[d] = np.array([0.0 if side == 0 else domain.edges[d]])
            pts = np.meshgrid(*axes, indexing="ij")
            for fn in velocity:
                vals = np.broadcast_to(fn(*pts), pts[0].shape)
                out["u_wall"] = max(out["u_wall"], float(np.max(np.abs(vals))))
            for key, grads in normals.items():
                vals = np.broadcast_to(grads[d](*pts), pts[0].shape)
                worst = float(np.max(np.abs(vals)))
                out[f"{key}_normal"] = max(out[f"{key}_normal"], worst)
    return out


# ============================================================================
# Convergence studies
# ============================================================================


def observed_orders(errors: Sequence[float], hs: Sequence[float]) -> list[float | None]:
    """log(e_coarse / e_fine) / log(h_coarse / h_fine); None at round-off."""
    orders: list[float | None] = []
    for k in range(len(errors) - 1):
        e0, e1 = errors[k], errors[k + 1]
        if e0 <= ROUNDOFF or e1 <= ROUNDOFF:
            orders.append(None)
            continue
        ratio = hs[k] / hs[k + 1]
        if ratio == 2.0:
            orders.append(math.log2(e0 / e1))
        else:
            orders.append(math.log(e0 / e1) / math.log(ratio))
    return orders


@dataclass
class ConvergenceTable:
    case: str
    grids: list[int]
    h: list[float]
    errors: dict[str, list[float]]
    orders: dict[str, list[float | None]] = field(default_factory=dict)
    iterations: list[int] = field(default_factory=list)

    FIELDS = ("u", "n", "c")

    def __post_init__(self) -> None:
        if not self.orders:
            self.orders = {
                k: observed_orders(v, self.h) for k, v in self.errors.items()
            }

    @property
    def non_monotone(self) -> list[str]:
        """Fields whose error grows under refinement (round-off excluded)."""
        out = []
        for key, errs in self.errors.items():
            if any(b > a and b > ROUNDOFF for a, b in zip(errs, errs[1:])):
                out.append(key)
        return out

    def min_order(self, key: str) -> float | None:
        vals = [o for o in self.orders[key] if o is not None]
        return min(vals) if vals else None

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "grids": list(self.grids),
            "h": list(self.h),
            "errors": {k: list(v) for k, v in self.errors.items()},
            "orders": {k: list(v) for k, v in self.orders.items()},
            "non_monotone": self.non_monotone,
            "iterations": list(self.iterations),
        }


_Leg = tuple[
    str,
    int,
    ChamberDomain,
    DimensionlessGroups,
    ConsumptionFunction,
    float,
    float,
    float,
    float,
    int,
]


def _mms_leg(args: _Leg) -> tuple[dict[str, float], int]:
    name, n, domain, groups, r, alpha1, alpha2, gravity, tol, max_outer = args
    grid = MacGrid.uniform(domain, n)
    exact, sources = mms_case(name, grid, groups, r, alpha1, alpha2, gravity)
    problem = ProblemData(grid, groups, r, sources, gravity=gravity)
    state, history, _ = solve_stationary(
        problem.initial_state(), problem, tol=tol, max_outer=max_outer
    )
    errors = {
        "u": velocity_energy_norm(state.u - exact.u),
        "n": gradient_norm(state.n_hat - exact.n_hat),
        "c": gradient_norm(state.c_hat - exact.c_hat),
    }
    logger.info("mms %s %d^3: %s", name, n, errors)
    return errors, len(history)


def convergence_study(
    case: str,
    grids: Sequence[int],
    groups: DimensionlessGroups,
    r: ConsumptionFunction,
    domain: ChamberDomain | None = None,
    alpha1: float = 0.5,
    alpha2: float = 0.25,
    gravity: float = 1.0,
    tol: float = 1e-12,
    max_outer: int = 200,
    jobs: int = 1,
) -> ConvergenceTable:
    """Solve a manufactured case on a halving sequence of grids.

    Errors: u in the V-norm, n-hat and c-hat in the H1 seminorm. Non-monotone
    fields are listed on the table, not raised.

    Raises:
        ParameterError: fewer than three grids or not a halving sequence.
    """
    if case not in MMS_CASES:
        raise _unknown_case(case)
    grids = [int(g) for g in grids]
    if len(grids) < 3:
        raise ParameterError("grids", grids, "need at least three grids")
    if any(b != 2 * a for a, b in zip(grids, grids[1:])):
        raise ParameterError(
            "grids", grids, "must be a halving sequence (each grid doubles the last)"
        )
    domain = domain or ChamberDomain(1.0, 1.0, 1.0)

    tasks: list[_Leg] = [
        (case, n, domain, groups, r, alpha1, alpha2, gravity, tol, max_outer)
        for n in grids
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            legs = list(pool.map(_mms_leg, tasks))
    else:
        legs = [_mms_leg(t) for t in tasks]

    errors = {k: [leg[0][k] for leg in legs] for k in ConvergenceTable.FIELDS}
    hs = [MacGrid.uniform(domain, n).h_max for n in grids]
    iterations = [leg[1] for leg in legs]
    table = ConvergenceTable(case, grids, hs, errors, iterations=iterations)
    if table.non_monotone:
        logger.warning("non-monotone errors for %s", ", ".join(table.non_monotone))
    return table


def _fmt_order(o: float | None) -> str:
    return "-" if o is None else f"{o:.3f}"


def format_convergence_table(table: ConvergenceTable) -> str:
    lines = [f"case: {table.case}"]
    columns = " ".join(f"{'e_' + k:>12} {'p_' + k:>7}" for k in table.FIELDS)
    header = f"{'grid':>6} {'h':>10} " + columns
    lines.append(header)
    for i, n in enumerate(table.grids):
        cells = []
        for k in table.FIELDS:
            order = _fmt_order(table.orders[k][i - 1]) if i > 0 else ""
            cells.append(f"{table.errors[k][i]:>12.4e} {order:>7}")
        lines.append(f"{n:>6} {table.h[i]:>10.4e} " + " ".join(cells))
    if table.non_monotone:
        lines.append(f"non-monotone: {', '.join(table.non_monotone)}")
    return "\n".join(lines)


def convergence_table_csv(table: ConvergenceTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    columns = [f"{p}_{k}" for k in table.FIELDS for p in ("error", "order")]
    writer.writerow(["grid", "h"] + columns)
    for i, n in enumerate(table.grids):
        row: list[Any] = [n, repr(table.h[i])]
        for k in table.FIELDS:
            order = table.orders[k][i - 1] if i > 0 else None
            row.extend([repr(table.errors[k][i]), "" if order is None else repr(order)])
        writer.writerow(row)
    return buf.getvalue()


# ============================================================================
# Audits
# ============================================================================


@dataclass
class AuditReport:
    kind: str
    checks: list[Check]
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.satisfied for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "details": dict(self.details),
        }


def audit_apriori(state: FieldState, certificate: Certificate) -> AuditReport:
    """Computed norms against the certified a-priori bounds.

    Without bounds (existence fails) every check is reported unsatisfied.
    """
    norms = discrete_norms(state)
    if certificate.bounds is None:
        checks = [
            Check("n_bound", norms.n_H1, None, "bound unavailable", strict=False),
            Check("u_bound", norms.u_V, None, "bound unavailable", strict=False),
            Check("c_bound", norms.c_H1, None, "bound unavailable", strict=False),
        ]
    else:
        checks = compare_bounds(norms.u_V, norms.n_H1, norms.c_H1, certificate.bounds)
    return AuditReport("apriori", checks, {"norms": norms.to_dict()})


def flux_tolerance(state: FieldState) -> float:
    n = state.n_total().values
    c = state.c_total().values
    scale = 1.0 + float(np.max(np.abs(n))) + float(np.max(np.abs(c)))
    return FLUX_FACTOR * state.grid.h_max**2 * scale


def bacteria_flux_residual(state: FieldState, problem: ProblemData) -> dict[str, float]:
    """max |grad n . nu - chi n r(c) grad c . nu| per upper wall of the total fields."""
    return wall_flux_residual(
        state.n_total(), state.c_total(), problem.r, problem.groups.chi
    )


def audit_flux(state: FieldState, problem: ProblemData) -> AuditReport:
    tol = flux_tolerance(state)
    residuals = bacteria_flux_residual(state, problem)
    checks = [
        Check(f"flux_{tag}", value, tol, f"wall flux residual on {tag}", strict=False)
        for tag, value in residuals.items()
    ]
    return AuditReport("flux", checks, {"tolerance": tol})


# ============================================================================
# Newton oracle comparison
# ============================================================================


@dataclass
class OracleReport:
    discrepancy: float | None
    per_field: dict[str, float]
    picard_converged: bool
    newton_converged: bool
    messages: list[str] = field(default_factory=list)
    tolerance: float = ORACLE_TOLERANCE

    @property
    def agreed(self) -> bool:
        """Both solvers converged and every relative field gap is within tolerance."""
        if not (self.picard_converged and self.newton_converged):
            return False
        return self.discrepancy is not None and self.discrepancy <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "discrepancy": self.discrepancy,
            "per_field": dict(self.per_field),
            "picard_converged": self.picard_converged,
            "newton_converged": self.newton_converged,
            "tolerance": self.tolerance,
            "agreed": self.agreed,
            "messages": list(self.messages),
        }


def _relative(diff: float, ref: float) -> float:
    return diff / ref if ref > 0 else diff


def field_discrepancies(a: FieldState, b: FieldState) -> dict[str, float]:
    """Relative differences of a against the reference b, per field."""
    return {
        "u": _relative(velocity_energy_norm(a.u - b.u), velocity_energy_norm(b.u)),
        "p": _relative((a.p - b.p).l2_norm(), b.p.l2_norm()),
        "n": _relative(h1_norm(a.n_hat - b.n_hat), h1_norm(b.n_hat)),
        "c": _relative(h1_norm(a.c_hat - b.c_hat), h1_norm(b.c_hat)),
    }


def oracle_equivalence(
    problem: ProblemData, tol: float = 1e-12, max_outer: int = 200
) -> OracleReport:
    """Compare the Picard fixed point with the monolithic Newton solution.

    Failures of either solver are reported in the messages; the discrepancy
    is only formed when both converged.

    Raises:
        ParameterError: grid larger than 8^3 cells.
    """
    if problem.grid.n_cells > ORACLE_MAX_CELLS:
        raise ParameterError(
            "grid", problem.grid.shape, "oracle comparison needs at most 8^3 cells"
        )
    messages: list[str] = []

    picard_state: FieldState | None = None
    try:
        picard_state, _, report = solve_stationary(
            problem.initial_state(), problem, tol=tol, max_outer=max_outer
        )
        if not report.converged:
            messages.append(
                f"Picard did not converge in {report.iterations} iterations"
            )
            picard_state = None
    except (SolverDivergence, ConvergenceError) as e:
        messages.append(f"Picard failed: {e}")

    newton_state: FieldState | None = None
    try:
        result = newton_oracle(problem)
        newton_state = result.state
    except ConvergenceError as e:
        messages.append(f"Newton failed: {e}")
        if isinstance(e.stats, NewtonResult):
            logger.debug("newton residuals: %s", e.stats.residual_history)

    if picard_state is None or newton_state is None:
        return OracleReport(
            None, {}, picard_state is not None, newton_state is not None, messages
        )
    per_field = field_discrepancies(picard_state, newton_state)
    worst = max(per_field.values())
    logger.info("oracle discrepancy %.3e", worst)
    return OracleReport(worst, per_field, True, True, messages)
