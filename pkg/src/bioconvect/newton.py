"""Monolithic Newton solve of the coupled discrete system on tiny grids.

The unknown vector stacks (u, p, n-hat, c-hat, lam_p, lam_n, lam_c): all face
velocities, the cell unknowns and one multiplier per mean constraint. The
Jacobian is assembled analytically and every step is solved with the dense
oracle, so this is only meant as a reference for the Picard solver.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError
from .grid import ScalarField, VectorField
from .linsolve import dense_direct
from .models import UPPER_FACES
from .operators import (
    boundary_projector,
    buoyancy_matrix,
    dirichlet_closure,
    divergence_matrix,
    face_average_matrix,
    gradient_matrix,
    interior_projector,
    laplacian_velocity_matrix,
    neumann_laplacian_matrix,
    scalar_advection_stencil,
    velocity_advection_stencil,
)
from .solver import FieldState, ProblemData

logger = logging.getLogger(__name__)


@dataclass
class NewtonResult:
    state: FieldState
    iterations: int
    converged: bool
    residual_history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "residual_history": list(self.residual_history),
        }


class CoupledSystem:
    """Residual and Jacobian of the full discrete problem."""

    def __init__(self, problem: ProblemData):
        self.problem = problem
        grid = problem.grid
        self.grid = grid
        self.nf = grid.n_faces
        self.nc = grid.n_cells
        self.size = self.nf + 3 * self.nc + 3
        grp = problem.groups

        p_int = interior_projector(grid)
        self.G = gradient_matrix(grid)
        self.D = divergence_matrix(grid)
        self.avg = face_average_matrix(grid)
        self.L = neumann_laplacian_matrix(grid)
        self.L_c = self.L
        if problem.oxygen_top_bc == "dirichlet":
            self.L_c = (self.L + dirichlet_closure(grid, UPPER_FACES)).tocsr()
        self.A_visc = (grp.S_c * (-laplacian_velocity_matrix(grid))).tocsr()
        self.P_bnd = boundary_projector(grid)
        self.Bt = (grp.S_c * (p_int @ self.G)).tocsr()
        weight = grp.gamma * grp.S_c * problem.gravity
        self.buoy = (weight * buoyancy_matrix(grid)).tocsr()
        self.adv_v = velocity_advection_stencil(grid)
        self.adv_s = scalar_advection_stencil(grid)
        self.w = np.full(self.nc, grid.cell_volume)
        self.ones = np.ones(self.nc)
        src = problem.sources
        self.F = src.F.flat().copy()
        self.F[grid.boundary_faces] = 0.0
        self.f_n = src.f_n.flat()
        self.f_c = src.f_c.flat()
        measure = grid.domain.measure
        self.n_shift = src.alpha1 / measure
        self.c_shift = src.alpha2 / measure

    def split(self, x: np.ndarray) -> tuple[np.ndarray, ...]:
        nf, nc = self.nf, self.nc
        u = x[:nf]
        p = x[nf : nf + nc]
        n = x[nf + nc : nf + 2 * nc]
        c = x[nf + 2 * nc : nf + 3 * nc]
        lam = x[nf + 3 * nc :]
        return u, p, n, c, lam

    def pack(self, state: FieldState) -> np.ndarray:
        scalars = [state.p.flat(), state.n_hat.flat(), state.c_hat.flat()]
        return np.concatenate([state.u.flat(), *scalars, np.zeros(3)])

    def unpack(self, x: np.ndarray) -> FieldState:
        u, p, n, c, _ = self.split(x)
        src = self.problem.sources
        return FieldState(
            u=VectorField.from_flat(self.grid, u),
            p=ScalarField.from_flat(self.grid, p),
            n_hat=ScalarField.from_flat(self.grid, n),
            c_hat=ScalarField.from_flat(self.grid, c),
            alpha1=src.alpha1,
            alpha2=src.alpha2,
        )

    def _chemotaxis_parts(self, n: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, ...]:
        r = self.problem.r
        c_full = c + self.c_shift
        n_f = self.avg @ (n + self.n_shift)
        r_cells = np.asarray(r(c_full), dtype=float)
        r_f = self.avg @ r_cells
        gc = self.G @ c
        return n_f, r_f, gc, c_full

    def residual(self, x: np.ndarray) -> np.ndarray:
        grp = self.problem.groups
        r = self.problem.r
        u, p, n, c, lam = self.split(x)
        k_v = self.adv_v.matrix(u)
        k_s = self.adv_s.matrix(u)

        r_u = self.A_visc @ u + k_v @ u + self.Bt @ p + self.buoy @ n - self.F
        r_u += self.P_bnd @ u
        r_p = self.Bt.T @ u + lam[0] * self.ones
        n_f, r_f, gc, c_full = self._chemotaxis_parts(n, c)
        chemo = grp.chi * (self.D @ (n_f * r_f * gc))
        r_n = -(self.L @ n) + k_s @ n + chemo + lam[1] * self.w - self.f_n
        consumption = grp.beta * np.asarray(r(c_full), dtype=float) * (n + self.n_shift)
        r_c = -grp.delta * (self.L_c @ c) + k_s @ c + consumption
        r_c += lam[2] * self.w - self.f_c
        constraints = np.array([self.ones @ p, self.w @ n, self.w @ c])
        return np.concatenate([r_u, r_p, r_n, r_c, constraints])

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        grp = self.problem.groups
        r = self.problem.r
        u, _, n, c, _ = self.split(x)
        k_v = self.adv_v.matrix(u)
        k_s = self.adv_s.matrix(u)
        n_f, r_f, gc, c_full = self._chemotaxis_parts(n, c)
        r_prime = np.asarray(r.slope(c_full), dtype=float)
        r_cells = np.asarray(r(c_full), dtype=float)

        j_uu = self.A_visc + k_v + self.adv_v.jacobian(u) + self.P_bnd
        j_nn = -self.L + k_s + grp.chi * (self.D @ sp.diags(r_f * gc) @ self.avg)
        flux_c = sp.diags(n_f * r_f) @ self.G
        flux_c = flux_c + sp.diags(n_f * gc) @ self.avg @ sp.diags(r_prime)
        j_nc = grp.chi * (self.D @ flux_c)
        j_cc = -grp.delta * self.L_c + k_s
        j_cc = j_cc + grp.beta * sp.diags(r_prime * (n + self.n_shift))
        j_cn = grp.beta * sp.diags(r_cells)
        ones = sp.csr_matrix(self.ones.reshape(-1, 1))
        w = sp.csr_matrix(self.w.reshape(-1, 1))

        blocks = [
            [j_uu, self.Bt, self.buoy, None, None, None, None],
            [self.Bt.T, None, None, None, ones, None, None],
            [self.adv_s.jacobian(n), None, j_nn, j_nc, None, w, None],
            [self.adv_s.jacobian(c), None, j_cn, j_cc, None, None, w],
            [None, ones.T, None, None, None, None, None],
            [None, None, w.T, None, None, None, None],
            [None, None, None, w.T, None, None, None],
        ]
        return sp.bmat(blocks, format="csr")


def newton_oracle(
    problem: ProblemData,
    initial: FieldState | None = None,
    tol: float = 1e-12,
    max_iterations: int = 30,
) -> NewtonResult:
    """Solve the coupled system by Newton's method with dense linear algebra.

    Stops when ||R(x)|| <= tol (1 + ||data||) or the update is negligible.

    Raises:
        ConvergenceError: no convergence within max_iterations.
    """
    system = CoupledSystem(problem)
    x = system.pack(initial if initial is not None else problem.initial_state())
    data_scale = 1.0 + float(
        np.linalg.norm(np.concatenate([system.F, system.f_n, system.f_c]))
    )
    history: list[float] = []
    for it in range(max_iterations + 1):
        res = system.residual(x)
        norm = float(np.linalg.norm(res))
        history.append(norm)
        logger.debug("newton %d: |R| = %.3e", it, norm)
        if norm <= tol * data_scale:
            return NewtonResult(system.unpack(x), it, True, history)
        if it == max_iterations:
            break
        dx, _ = dense_direct(system.jacobian(x), -res)
        x = x + dx
        if float(np.linalg.norm(dx)) <= 1e-14 * (1.0 + float(np.linalg.norm(x))):
            res = system.residual(x)
            history.append(float(np.linalg.norm(res)))
            converged = history[-1] <= 1e3 * tol * data_scale
            return NewtonResult(system.unpack(x), it + 1, converged, history)
    raise ConvergenceError(
        f"Newton did not converge in {max_iterations} iterations "
        f"(|R| = {history[-1]:.3e})",
        NewtonResult(system.unpack(x), max_iterations, False, history),
    )
