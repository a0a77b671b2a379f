"""
Picard solver for the stationary coupled system

Responsibilities:
- picard_step: one Oseen / bacteria / oxygen sweep with lagged coefficients
- solve_stationary: outer iteration, divergence detection, final report
- enforce_means / discrete_norms: shifted-variable bookkeeping
- sweep: independent solves in a process pool
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .certificate import Certificate, Check, compare_bounds
from .errors import (
    ConservationError,
    HypothesisViolation,
    ParameterError,
    SolverDivergence,
)
from .grid import MacGrid, ScalarField, VectorField, check_same_grid
from .linsolve import SolveOptions, solve_bordered, solve_saddle
from .models import ConsumptionFunction, DimensionlessGroups, SourceData
from .operators import (
    LinearSystem,
    assemble_bacteria,
    assemble_oseen,
    assemble_oxygen,
    div,
    gradient_norm,
    random_solenoidal,
    velocity_energy_norm,
)

logger = logging.getLogger(__name__)

MEAN_DRIFT_LIMIT = 1e-8
DIVERGENCE_WINDOW = 5
DIVERGENCE_FACTOR = 10.0
CONTRACTION_MARGIN = 0.1


# ============================================================================
# State and problem records
# ============================================================================


@dataclass
class FieldState:
    """u on faces; p, n-hat, c-hat at cell centres; prescribed totals."""

    u: VectorField
    p: ScalarField
    n_hat: ScalarField
    c_hat: ScalarField
    alpha1: float
    alpha2: float

    def __post_init__(self) -> None:
        check_same_grid(self.u, self.p, self.n_hat, self.c_hat)

    @property
    def grid(self) -> MacGrid:
        return self.u.grid

    @classmethod
    def zeros(
        cls, grid: MacGrid, alpha1: float = 0.0, alpha2: float = 0.0
    ) -> FieldState:
        return cls(
            u=VectorField.zeros(grid),
            p=ScalarField.zeros(grid),
            n_hat=ScalarField.zeros(grid),
            c_hat=ScalarField.zeros(grid),
            alpha1=alpha1,
            alpha2=alpha2,
        )

    @classmethod
    def random(
        cls,
        grid: MacGrid,
        rng: np.random.Generator,
        alpha1: float = 0.0,
        alpha2: float = 0.0,
        scale: float = 1e-2,
    ) -> FieldState:
        """Random admissible state: solenoidal no-slip u, zero-mean scalars."""
        u = random_solenoidal(grid, rng, scale=scale)
        state = cls(
            u=u,
            p=ScalarField(grid, scale * rng.standard_normal(grid.shape)),
            n_hat=ScalarField(grid, scale * rng.standard_normal(grid.shape)),
            c_hat=ScalarField(grid, scale * rng.standard_normal(grid.shape)),
            alpha1=alpha1,
            alpha2=alpha2,
        )
        return enforce_means(state)

    def copy(self) -> FieldState:
        return FieldState(
            self.u.copy(),
            self.p.copy(),
            self.n_hat.copy(),
            self.c_hat.copy(),
            self.alpha1,
            self.alpha2,
        )

    def n_total(self) -> ScalarField:
        return self.n_hat + self.alpha1 / self.grid.domain.measure

    def c_total(self) -> ScalarField:
        return self.c_hat + self.alpha2 / self.grid.domain.measure


@dataclass(frozen=True)
class ProblemData:
    """Everything a Picard solve reads besides the state."""

    grid: MacGrid
    groups: DimensionlessGroups
    r: ConsumptionFunction
    sources: SourceData
    oxygen_top_bc: str = "neumann"
    relaxation: float = 1.0
    gravity: float = 1.0
    certificate: Certificate | None = None
    scalar_options: SolveOptions = field(
        default_factory=lambda: SolveOptions(
            tolerance=1e-12, method="gmres", preconditioner="ilu"
        )
    )
    saddle_options: SolveOptions = field(
        default_factory=lambda: SolveOptions(
            tolerance=1e-12, method="uzawa", preconditioner="ilu"
        )
    )

    def __post_init__(self) -> None:
        check_same_grid(self.grid, self.sources.f_n)
        if not (0.0 < self.relaxation <= 1.0):
            raise ParameterError("relaxation", self.relaxation, "must lie in (0, 1]")
        if not (math.isfinite(self.gravity) and self.gravity > 0):
            raise ParameterError("gravity", self.gravity)
        if self.oxygen_top_bc not in ("neumann", "dirichlet"):
            raise ParameterError(
                "oxygen_top_bc", self.oxygen_top_bc, "must be neumann or dirichlet"
            )

    def initial_state(self) -> FieldState:
        return FieldState.zeros(self.grid, self.sources.alpha1, self.sources.alpha2)


@dataclass(frozen=True)
class DiscreteNorms:
    u_V: float
    n_H1: float
    c_H1: float
    div_u: float

    def to_dict(self) -> dict:
        return {
            "u_V": self.u_V,
            "n_H1": self.n_H1,
            "c_H1": self.c_H1,
            "div_u": self.div_u,
        }


@dataclass
class PicardRecord:
    iteration: int
    du: float
    dn: float
    dc: float
    residuals: dict[str, float]
    mean_drift: dict[str, float]

    @property
    def increment(self) -> float:
        return max(self.du, self.dn, self.dc)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "du": self.du,
            "dn": self.dn,
            "dc": self.dc,
            "residuals": dict(self.residuals),
            "mean_drift": dict(self.mean_drift),
        }


@dataclass
class PicardHistory:
    records: list[PicardRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: PicardRecord) -> None:
        self.records.append(record)

    def increments(self) -> list[float]:
        return [r.increment for r in self.records]

    def ratios(self) -> list[float]:
        """Successive quotients of the max increment (nan where undefined)."""
        inc = self.increments()
        return [b / a if a > 0 else math.nan for a, b in zip(inc, inc[1:])]

    def contraction_ratio(self, last: int = 3) -> float | None:
        """Geometric mean of the last ratios, None if fewer than one is usable."""
        usable = [q for q in self.ratios()[-last:] if math.isfinite(q) and q > 0]
        if not usable:
            return None
        return float(math.exp(sum(math.log(q) for q in usable) / len(usable)))

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "ratios": [q if math.isfinite(q) else None for q in self.ratios()],
        }


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    residuals: dict[str, float]
    norms: DiscreteNorms
    bound_checks: list[Check]
    contraction_ratio: float | None
    pi_value: float | None
    within_certified_region: bool | None
    max_mean_drift: dict[str, float]
    fixed_point_residuals: dict[str, float] = field(default_factory=dict)

    @property
    def contraction_consistent(self) -> bool | None:
        if (
            not self.within_certified_region
            or self.contraction_ratio is None
            or self.pi_value is None
        ):
            return None
        return self.contraction_ratio <= self.pi_value + CONTRACTION_MARGIN

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "residuals": dict(self.residuals),
            "norms": self.norms.to_dict(),
            "bound_checks": [c.to_dict() for c in self.bound_checks],
            "contraction_ratio": self.contraction_ratio,
            "pi_value": self.pi_value,
            "within_certified_region": self.within_certified_region,
            "contraction_consistent": self.contraction_consistent,
            "max_mean_drift": dict(self.max_mean_drift),
            "fixed_point_residuals": dict(self.fixed_point_residuals),
        }


# ============================================================================
# Norms and means
# ============================================================================


def h1_norm(s: ScalarField) -> float:
    return math.hypot(s.l2_norm(), gradient_norm(s))


def discrete_norms(state: FieldState) -> DiscreteNorms:
    return DiscreteNorms(
        u_V=velocity_energy_norm(state.u),
        n_H1=h1_norm(state.n_hat),
        c_H1=h1_norm(state.c_hat),
        div_u=div(state.u).l2_norm(),
    )


def enforce_means(state: FieldState) -> FieldState:
    """Project n-hat and c-hat to zero mean; the totals alpha stay as prescribed."""
    return FieldState(
        u=state.u,
        p=state.p,
        n_hat=state.n_hat.minus_mean(),
        c_hat=state.c_hat.minus_mean(),
        alpha1=state.alpha1,
        alpha2=state.alpha2,
    )


def _bordered_residual(system: LinearSystem, x: np.ndarray) -> float:
    """Relative residual with the least-squares multiplier for the mean constraint."""
    lam = 0.0
    if system.constraint is not None:
        w = system.constraint
        lam = float(w @ (system.rhs - system.matrix @ x)) / float(w @ w)
    return system.relative_residual(x, lam)


# ============================================================================
# Picard iteration
# ============================================================================


def _relax(new: Any, old: Any, omega: float) -> Any:
    if omega == 1.0:
        return new
    return new * omega + old * (1.0 - omega)


def _require_finite(vec: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(vec)):
        raise SolverDivergence(f"{name} solve produced non-finite values")
    return vec


def _picard_step(
    state: FieldState, problem: ProblemData
) -> tuple[FieldState, dict, dict]:
    grid = problem.grid
    check_same_grid(grid, state.u)
    src = problem.sources
    grp = problem.groups
    a1, a2 = state.alpha1, state.alpha2

    oseen = assemble_oseen(state.u, state.n_hat, grp, src.F, problem.gravity)
    u_vec, p_vec, _ = solve_saddle(
        oseen.A, oseen.B, oseen.f, oseen.g, problem.saddle_options
    )
    u_new = VectorField.from_flat(grid, _require_finite(u_vec, "Oseen"))
    p_new = ScalarField.from_flat(grid, _require_finite(p_vec, "Oseen"))

    bact = assemble_bacteria(
        u_new, state.n_hat, state.c_hat, problem.r, grp.chi, a1, a2, src.f_n
    )
    n_vec, _, _ = solve_bordered(bact, problem.scalar_options)
    n_new = ScalarField.from_flat(grid, _require_finite(n_vec, "bacteria"))

    oxy = assemble_oxygen(
        u_new, n_new, state.c_hat, problem.r, grp.delta, grp.beta, a1, a2, src.f_c,
        problem.oxygen_top_bc,
    )
    c_vec, _, _ = solve_bordered(oxy, problem.scalar_options)
    c_new = ScalarField.from_flat(grid, _require_finite(c_vec, "oxygen"))

    drift = {"bacteria": abs(n_new.integral()), "oxygen": abs(c_new.integral())}
    for name, value in drift.items():
        if value > MEAN_DRIFT_LIMIT:
            raise ConservationError(name, value)

    residuals = {
        "oseen": oseen.relative_residual(u_vec, p_vec),
        "bacteria": _bordered_residual(bact, n_vec),
        "oxygen": _bordered_residual(oxy, c_vec),
    }

    omega = problem.relaxation
    new = FieldState(
        u=_relax(u_new, state.u, omega),
        p=p_new,
        n_hat=_relax(n_new, state.n_hat, omega),
        c_hat=_relax(c_new, state.c_hat, omega),
        alpha1=a1,
        alpha2=a2,
    )
    return enforce_means(new), residuals, drift


def picard_step(state: FieldState, problem: ProblemData) -> FieldState:
    """One sweep: Oseen solve, bacteria solve, oxygen solve, relaxation, projection."""
    return _picard_step(state, problem)[0]


def fixed_point_residuals(state: FieldState, problem: ProblemData) -> dict[str, float]:
    """Residuals of the three subproblems assembled at ``state`` and evaluated there."""
    grp = problem.groups
    src = problem.sources
    oseen = assemble_oseen(state.u, state.n_hat, grp, src.F, problem.gravity)
    bact = assemble_bacteria(
        state.u,
        state.n_hat,
        state.c_hat,
        problem.r,
        grp.chi,
        state.alpha1,
        state.alpha2,
        src.f_n,
    )
    oxy = assemble_oxygen(
        state.u, state.n_hat, state.c_hat, problem.r, grp.delta, grp.beta,
        state.alpha1, state.alpha2, src.f_c, problem.oxygen_top_bc,
    )
    return {
        "oseen": oseen.relative_residual(state.u.flat(), state.p.flat()),
        "bacteria": _bordered_residual(bact, state.n_hat.flat()),
        "oxygen": _bordered_residual(oxy, state.c_hat.flat()),
    }


def _state_scale(norms: DiscreteNorms) -> float:
    return max(norms.u_V, norms.n_H1, norms.c_H1)


def solve_stationary(
    initial: FieldState,
    problem: ProblemData,
    tol: float = 1e-10,
    max_outer: int = 100,
    strict: bool = False,
) -> tuple[FieldState, PicardHistory, SolveReport]:
    """Iterate picard_step to a fixed point.

    Args:
        initial: Starting state.
        problem: Problem data; its certificate (if any) gates strict mode and
            supplies Pi and the a-priori bounds.
        tol: Stop when the largest increment is <= tol * (1 + ||state||).
        max_outer: Iteration cap; reaching it returns an unconverged report.
        strict: Raise HypothesisViolation when the existence checks fail.

    Raises:
        SolverDivergence: the increment grew tenfold over five iterations or
            became non-finite.
    """
    cert = problem.certificate
    if cert is not None and not cert.exists:
        failed = next(c for c in cert.existence_checks if not c.satisfied)
        if strict:
            raise HypothesisViolation(
                failed.name,
                failed.lhs if failed.lhs is not None else math.inf,
                failed.rhs if failed.rhs is not None else 0.0,
                "existence hypotheses fail; refusing to solve in strict mode",
            )
        logger.warning("existence check %s fails; solving anyway", failed.name)
    certified = cert.unique if cert is not None else None

    state = enforce_means(initial)
    history = PicardHistory()
    residuals: dict[str, float] = {}
    max_drift = {"bacteria": 0.0, "oxygen": 0.0}
    converged = False

    for k in range(1, max_outer + 1):
        new, residuals, drift = _picard_step(state, problem)
        du = velocity_energy_norm(new.u - state.u)
        dn = h1_norm(new.n_hat - state.n_hat)
        dc = h1_norm(new.c_hat - state.c_hat)
        record = PicardRecord(k, du, dn, dc, residuals, drift)
        history.append(record)
        for name, value in drift.items():
            max_drift[name] = max(max_drift[name], value)
        logger.debug("picard %d: du=%.3e dn=%.3e dc=%.3e", k, du, dn, dc)

        inc = history.increments()
        if not math.isfinite(record.increment) or (
            k > DIVERGENCE_WINDOW
            and record.increment > DIVERGENCE_FACTOR * inc[k - 1 - DIVERGENCE_WINDOW]
        ):
            where = "" if certified else " (outside certified region)"
            raise SolverDivergence(
                f"Picard increment grew to {record.increment:.3e} "
                f"at iteration {k}{where}",
                history,
            )

        state = new
        if record.increment <= tol * (1.0 + _state_scale(discrete_norms(state))):
            converged = True
            break

    norms = discrete_norms(state)
    ratio = history.contraction_ratio()
    pi_value = cert.pi_value if cert is not None else None
    if ratio is not None:
        logger.info("observed contraction ratio %.3g (Pi = %s)", ratio, pi_value)
    bound_checks: list[Check] = []
    if cert is not None and cert.bounds is not None:
        bound_checks = compare_bounds(norms.u_V, norms.n_H1, norms.c_H1, cert.bounds)
    if not converged:
        logger.warning(
            "Picard stopped after %d iterations without converging", len(history)
        )

    report = SolveReport(
        iterations=len(history),
        converged=converged,
        residuals=residuals,
        norms=norms,
        bound_checks=bound_checks,
        contraction_ratio=ratio,
        pi_value=pi_value,
        within_certified_region=certified,
        max_mean_drift=max_drift,
        fixed_point_residuals=fixed_point_residuals(state, problem),
    )
    return state, history, report


def _solve_one(
    args: tuple[ProblemData, float, int],
) -> tuple[FieldState, PicardHistory, SolveReport]:
    problem, tol, max_outer = args
    return solve_stationary(
        problem.initial_state(), problem, tol=tol, max_outer=max_outer
    )


def sweep(
    problems: Sequence[ProblemData],
    jobs: int = 1,
    tol: float = 1e-10,
    max_outer: int = 100,
    settings: Sequence[tuple[float, int]] | None = None,
) -> list[tuple[FieldState, PicardHistory, SolveReport]]:
    """Solve independent problems from the zero state, in parallel when jobs > 1.

    ``settings`` gives a (tol, max_outer) pair per problem and overrides the
    shared tol and max_outer.
    """
    if settings is None:
        settings = [(tol, max_outer)] * len(problems)
    if len(settings) != len(problems):
        raise ParameterError(
            "settings", len(settings), f"need one pair per problem ({len(problems)})"
        )
    tasks = [(p, t, m) for p, (t, m) in zip(problems, settings)]
    if jobs <= 1 or len(tasks) <= 1:
        return [_solve_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_solve_one, tasks))
