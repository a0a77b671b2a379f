"""Staggered-grid difference operators, boundary conditions and system assembly.

Every operator is a scipy.sparse CSR matrix built from one-dimensional
stencils with Kronecker products. Fields are flattened in C order; the face
vector concatenates the x-, y- and z-face components, boundary faces included.

Sign conventions:
    grad   cell -> face, zero on wall faces (no flux through the wall)
    div    face -> cell
    grad = -(div)^T on interior faces (summation by parts)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .errors import BoundaryTagError, SingularSystemError
from .grid import MacGrid, ScalarField, VectorField, check_same_grid
from .models import (
    FACE_TAGS,
    LOWER_FACES,
    UPPER_FACES,
    ConsumptionFunction,
    DimensionlessGroups,
)

logger = logging.getLogger(__name__)

DIVERGENCE_TOLERANCE = 1e-10

_FACE_AXIS = {
    "x-": (0, 0),
    "x+": (0, 1),
    "y-": (1, 0),
    "y+": (1, 1),
    "z-": (2, 0),
    "z+": (2, 1),
}


# ============================================================================
# One-dimensional stencils
# ============================================================================


def _cell_to_face_1d(n: int, h: float) -> sp.csr_matrix:
    """(n+1) x n first difference, zero rows at both walls."""
    rows = np.arange(1, n)
    data = np.concatenate([-np.ones(n - 1), np.ones(n - 1)]) / h
    return sp.csr_matrix(
        (data, (np.concatenate([rows, rows]), np.concatenate([rows - 1, rows]))),
        shape=(n + 1, n),
    )


def _face_to_cell_1d(n: int, h: float) -> sp.csr_matrix:
    rows = np.arange(n)
    data = np.concatenate([-np.ones(n), np.ones(n)]) / h
    return sp.csr_matrix(
        (data, (np.concatenate([rows, rows]), np.concatenate([rows, rows + 1]))),
        shape=(n, n + 1),
    )


def _average_1d(n: int) -> sp.csr_matrix:
    rows = np.arange(1, n)
    data = np.full(2 * (n - 1), 0.5)
    return sp.csr_matrix(
        (data, (np.concatenate([rows, rows]), np.concatenate([rows - 1, rows]))),
        shape=(n + 1, n),
    )


def _face_second_difference_1d(n: int, h: float) -> sp.csr_matrix:
    """Second difference on the n+1 faces of an axis; wall rows are empty."""
    main = np.full(n + 1, -2.0)
    main[[0, -1]] = 0.0
    upper = np.ones(n)
    upper[0] = 0.0
    lower = np.ones(n)
    lower[-1] = 0.0
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / h**2


def _cell_dirichlet_second_difference_1d(n: int, h: float) -> sp.csr_matrix:
    """Cell-centred second difference with an odd ghost reflection at both walls."""
    main = np.full(n, -2.0)
    main[[0, -1]] = -3.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2


def _kron3(a: sp.spmatrix, b: sp.spmatrix, c: sp.spmatrix) -> sp.csr_matrix:
    return sp.kron(a, sp.kron(b, c, format="csr"), format="csr")


def _axis_op(shape: tuple[int, int, int], d: int, op: sp.spmatrix) -> sp.csr_matrix:
    """Apply a 1D operator along axis d of an array with the given shape."""
    factors = [sp.identity(shape[e], format="csr") for e in range(3)]
    factors[d] = op
    return _kron3(*factors)


# ============================================================================
# Cached 3D operators
# ============================================================================


@lru_cache(maxsize=32)
def gradient_matrix(grid: MacGrid) -> sp.csr_matrix:
    """Cell -> face gradient (n_faces x n_cells)."""
    blocks = [
        _axis_op(grid.shape, d, _cell_to_face_1d(grid.shape[d], grid.h[d]))
        for d in range(3)
    ]
    return sp.vstack(blocks, format="csr")


@lru_cache(maxsize=32)
def divergence_matrix(grid: MacGrid) -> sp.csr_matrix:
    """Face -> cell divergence (n_cells x n_faces)."""
    blocks = []
    for d in range(3):
        factors = [sp.identity(grid.shape[e], format="csr") for e in range(3)]
        factors[d] = _face_to_cell_1d(grid.shape[d], grid.h[d])
        blocks.append(_kron3(*factors))
    return sp.hstack(blocks, format="csr")


@lru_cache(maxsize=32)
def face_average_matrix(grid: MacGrid) -> sp.csr_matrix:
    """Cell -> face arithmetic mean, zero on wall faces."""
    blocks = [_axis_op(grid.shape, d, _average_1d(grid.shape[d])) for d in range(3)]
    return sp.vstack(blocks, format="csr")


@lru_cache(maxsize=32)
def interior_projector(grid: MacGrid) -> sp.csr_matrix:
    mask = np.zeros(grid.n_faces)
    mask[grid.interior_faces] = 1.0
    return sp.diags(mask, format="csr")


@lru_cache(maxsize=32)
def boundary_projector(grid: MacGrid) -> sp.csr_matrix:
    mask = np.zeros(grid.n_faces)
    mask[grid.boundary_faces] = 1.0
    return sp.diags(mask, format="csr")


@lru_cache(maxsize=32)
def neumann_laplacian_matrix(grid: MacGrid) -> sp.csr_matrix:
    """7-point scalar Laplacian with zero flux through every wall (div o grad)."""
    return (divergence_matrix(grid) @ gradient_matrix(grid)).tocsr()


@lru_cache(maxsize=64)
def dirichlet_closure(grid: MacGrid, faces: frozenset[str]) -> sp.csr_matrix:
    """Diagonal correction turning zero-flux walls into homogeneous Dirichlet walls.

    The ghost value is the negated interior value, so the wall-face gradient is
    -2 s / h and the Laplacian row gains -2 / h^2.
    """
    diag = np.zeros(grid.shape)
    for tag in faces:
        if tag not in _FACE_AXIS:
            raise BoundaryTagError(f"unknown face {tag!r}")
        d, side = _FACE_AXIS[tag]
        idx: list[slice | int] = [slice(None)] * 3
        idx[d] = 0 if side == 0 else -1
        diag[tuple(idx)] -= 2.0 / grid.h[d] ** 2
    return sp.diags(diag.ravel(), format="csr")


def laplacian_scalar_matrix(
    grid: MacGrid, dirichlet_faces: frozenset[str] = frozenset()
) -> sp.csr_matrix:
    lap = neumann_laplacian_matrix(grid)
    if dirichlet_faces:
        lap = (lap + dirichlet_closure(grid, dirichlet_faces)).tocsr()
    return lap


@lru_cache(maxsize=32)
def laplacian_velocity_matrix(grid: MacGrid) -> sp.csr_matrix:
    """No-slip vector Laplacian on interior faces; wall rows and columns are empty."""
    blocks = []
    for d in range(3):
        shape = grid.face_shape(d)
        op = None
        for e in range(3):
            if e == d:
                one_d = _face_second_difference_1d(grid.shape[e], grid.h[e])
            else:
                one_d = _cell_dirichlet_second_difference_1d(grid.shape[e], grid.h[e])
            term = _axis_op(shape, e, one_d)
            op = term if op is None else op + term
        blocks.append(op)
    lap = sp.block_diag(blocks, format="csr")
    p_int = interior_projector(grid)
    return (p_int @ lap @ p_int).tocsr()


@lru_cache(maxsize=32)
def buoyancy_matrix(grid: MacGrid) -> sp.csr_matrix:
    """Maps a cell density to its average on interior z-faces (x-, y-rows empty)."""
    avg = face_average_matrix(grid).tolil()
    off = grid.face_offsets[2]
    avg[:off, :] = 0.0
    return avg.tocsr()


# ============================================================================
# Skew-symmetric advection
# ============================================================================


@dataclass(frozen=True)
class AdvectionStencil:
    """Control-volume pairs (a, b) with the advecting velocity between them.

    K(u)[a, b] = +U/(2h) and K(u)[b, a] = -U/(2h), with U a weighted sum of
    at most two face velocities. K(u) is antisymmetric for every u.
    """

    size: int
    n_faces: int
    rows: np.ndarray
    cols: np.ndarray
    uidx: np.ndarray
    uwt: np.ndarray
    coef: np.ndarray

    def advecting_velocity(self, u_flat: np.ndarray) -> np.ndarray:
        return np.sum(self.uwt * u_flat[self.uidx], axis=1)

    def matrix(self, u_flat: np.ndarray) -> sp.csr_matrix:
        vals = self.coef * self.advecting_velocity(u_flat)
        shape = (self.size, self.size)
        half = sp.coo_matrix((vals, (self.rows, self.cols)), shape=shape)
        skew = (half - half.T).tocsr()
        skew.sum_duplicates()
        return skew

    def jacobian(self, v_flat: np.ndarray) -> sp.csr_matrix:
        """d(K(u) v)/du, a (size x n_faces) matrix independent of u."""
        c0 = self.coef * self.uwt[:, 0]
        c1 = self.coef * self.uwt[:, 1]
        rows = np.concatenate([self.rows, self.rows, self.cols, self.cols])
        left, right = self.uidx[:, 0], self.uidx[:, 1]
        cols = np.concatenate([left, right, left, right])
        vb = v_flat[self.cols]
        va = v_flat[self.rows]
        data = np.concatenate([c0 * vb, c1 * vb, -c0 * va, -c1 * va])
        shape = (self.size, self.n_faces)
        jac = sp.coo_matrix((data, (rows, cols)), shape=shape).tocsr()
        jac.sum_duplicates()
        return jac


def _mesh(ranges: list[np.ndarray]) -> list[np.ndarray]:
    return [ix.ravel() for ix in np.meshgrid(*ranges, indexing="ij")]


@lru_cache(maxsize=32)
def scalar_advection_stencil(grid: MacGrid) -> AdvectionStencil:
    rows, cols, uidx, coef = [], [], [], []
    for e in range(3):
        ranges = [np.arange(n) for n in grid.shape]
        ranges[e] = np.arange(grid.shape[e] - 1)
        a = _mesh(ranges)
        b = list(a)
        b[e] = a[e] + 1
        face = grid.face_index(e, *b)
        rows.append(grid.cell_index(*a))
        cols.append(grid.cell_index(*b))
        uidx.append(np.stack([face, face], axis=1))
        coef.append(np.full(face.size, 0.5 / grid.h[e]))
    m = sum(r.size for r in rows)
    uwt = np.zeros((m, 2))
    uwt[:, 0] = 1.0
    return AdvectionStencil(
        size=grid.n_cells,
        n_faces=grid.n_faces,
        rows=np.concatenate(rows),
        cols=np.concatenate(cols),
        uidx=np.concatenate(uidx),
        uwt=uwt,
        coef=np.concatenate(coef),
    )


@lru_cache(maxsize=32)
def velocity_advection_stencil(grid: MacGrid) -> AdvectionStencil:
    rows, cols, uidx, uwt, coef = [], [], [], [], []
    for d in range(3):
        fshape = grid.face_shape(d)
        for e in range(3):
            ranges = [np.arange(n) for n in fshape]
            if e == d:
                # d-faces along d; the advecting velocity sits at the cell between
                ranges[d] = np.arange(1, grid.shape[d] - 1)
                a = _mesh(ranges)
                b = list(a)
                b[d] = a[d] + 1
                fa = grid.face_index(d, *a)
                fb = grid.face_index(d, *b)
                rows.append(fa)
                cols.append(fb)
                uidx.append(np.stack([fa, fb], axis=1))
                coef.append(np.full(fa.size, 0.5 / grid.h[d]))
            else:
                # d-faces along e; the advecting u_e sits on the edge between
                ranges[d] = np.arange(1, grid.shape[d])
                ranges[e] = np.arange(grid.shape[e] - 1)
                a = _mesh(ranges)
                b = list(a)
                b[e] = a[e] + 1
                left = list(b)
                left[d] = a[d] - 1
                right = list(b)
                right[d] = a[d]
                rows.append(grid.face_index(d, *a))
                cols.append(grid.face_index(d, *b))
                uidx.append(
                    np.stack(
                        [grid.face_index(e, *left), grid.face_index(e, *right)], axis=1
                    )
                )
                coef.append(np.full(a[0].size, 0.5 / grid.h[e]))
            uwt.append(np.full((rows[-1].size, 2), 0.5))
    return AdvectionStencil(
        size=grid.n_faces,
        n_faces=grid.n_faces,
        rows=np.concatenate(rows),
        cols=np.concatenate(cols),
        uidx=np.concatenate(uidx),
        uwt=np.concatenate(uwt),
        coef=np.concatenate(coef),
    )


# ============================================================================
# Field-level operations
# ============================================================================


def grad(s: ScalarField) -> VectorField:
    return VectorField.from_flat(s.grid, gradient_matrix(s.grid) @ s.flat())


def div(v: VectorField) -> ScalarField:
    return ScalarField.from_flat(v.grid, divergence_matrix(v.grid) @ v.flat())


def laplacian_scalar(
    s: ScalarField, dirichlet_faces: frozenset[str] = frozenset()
) -> ScalarField:
    lap = laplacian_scalar_matrix(s.grid, dirichlet_faces)
    return ScalarField.from_flat(s.grid, lap @ s.flat())


def laplacian_velocity(v: VectorField) -> VectorField:
    return VectorField.from_flat(v.grid, laplacian_velocity_matrix(v.grid) @ v.flat())


def divergence_ratio(u: VectorField) -> float:
    """||div u||_L2 / ||u||_V, zero for the zero field."""
    energy = velocity_energy_norm(u)
    if energy == 0.0:
        return 0.0
    return div(u).l2_norm() / energy


def _warn_if_compressible(u: VectorField, where: str) -> None:
    ratio = divergence_ratio(u)
    if ratio > DIVERGENCE_TOLERANCE:
        logger.warning(
            "%s: advecting velocity not divergence-free (ratio %.2e)", where, ratio
        )


def advect_scalar(u: VectorField, s: ScalarField) -> ScalarField:
    """Skew form of (u . grad) s at cell centres."""
    grid = check_same_grid(u, s)
    _warn_if_compressible(u, "advect_scalar")
    k = scalar_advection_stencil(grid).matrix(u.flat())
    return ScalarField.from_flat(grid, k @ s.flat())


def advect_velocity(u: VectorField, w: VectorField) -> VectorField:
    """Skew form of (u . grad) w on interior faces."""
    grid = check_same_grid(u, w)
    _warn_if_compressible(u, "advect_velocity")
    k = velocity_advection_stencil(grid).matrix(u.flat())
    return VectorField.from_flat(grid, k @ w.flat())


def chemotaxis_flux(
    n: ScalarField, c: ScalarField, r: ConsumptionFunction
) -> np.ndarray:
    """Face values of n r(c) grad c with face-averaged n and r(c); zero on walls."""
    grid = check_same_grid(n, c)
    avg = face_average_matrix(grid)
    r_cells = np.asarray(r(c.flat()), dtype=float)
    return (avg @ n.flat()) * (avg @ r_cells) * (gradient_matrix(grid) @ c.flat())


def chemotaxis_term(
    n: ScalarField, c: ScalarField, r: ConsumptionFunction, chi: float
) -> ScalarField:
    """chi div(n r(c) grad c), conservative, with zero net flux through the walls."""
    grid = check_same_grid(n, c)
    flux = chemotaxis_flux(n, c, r)
    return ScalarField.from_flat(grid, chi * (divergence_matrix(grid) @ flux))


def velocity_energy_norm(u: VectorField) -> float:
    """Discrete V-norm: sqrt(<-Lap u, u>) over interior faces."""
    v = u.flat()
    energy = -u.grid.cell_volume * float(v @ (laplacian_velocity_matrix(u.grid) @ v))
    return float(np.sqrt(max(energy, 0.0)))


def gradient_norm(s: ScalarField) -> float:
    g = gradient_matrix(s.grid) @ s.flat()
    return float(np.sqrt(s.grid.cell_volume * np.sum(g * g)))


def sbp_boundary_term(s: ScalarField, v: VectorField) -> float:
    """Sum over wall faces of area * s(adjacent cell) * v . nu."""
    grid = check_same_grid(s, v)
    total = 0.0
    for d in range(3):
        area = grid.cell_volume / grid.h[d]
        comp = v.components[d]
        idx_lo: list[slice | int] = [slice(None)] * 3
        idx_hi: list[slice | int] = [slice(None)] * 3
        idx_lo[d] = 0
        idx_hi[d] = -1
        total += area * float(np.sum(s.values[tuple(idx_hi)] * comp[tuple(idx_hi)]))
        total -= area * float(np.sum(s.values[tuple(idx_lo)] * comp[tuple(idx_lo)]))
    return total


# ============================================================================
# Solenoidal fields from edge potentials
# ============================================================================


def curl_edges(
    grid: MacGrid, potential: tuple[np.ndarray, np.ndarray, np.ndarray]
) -> VectorField:
    """Discrete curl of an edge potential; the result is exactly divergence-free.

    Potential component d lives on edges parallel to axis d (shape +1 on the
    two other axes). Zero potential on wall edges gives zero normal velocity.
    """
    a1, a2, a3 = potential
    h1, h2, h3 = grid.h
    u1 = (a3[:, 1:, :] - a3[:, :-1, :]) / h2 - (a2[:, :, 1:] - a2[:, :, :-1]) / h3
    u2 = (a1[:, :, 1:] - a1[:, :, :-1]) / h3 - (a3[1:, :, :] - a3[:-1, :, :]) / h1
    u3 = (a2[1:, :, :] - a2[:-1, :, :]) / h1 - (a1[:, 1:, :] - a1[:, :-1, :]) / h2
    return VectorField(grid, (u1, u2, u3))


def edge_shape(grid: MacGrid, d: int) -> tuple[int, int, int]:
    shape = [n + 1 for n in grid.shape]
    shape[d] -= 1
    return (shape[0], shape[1], shape[2])


def random_solenoidal(
    grid: MacGrid, rng: np.random.Generator, scale: float = 1.0
) -> VectorField:
    """Random discretely divergence-free field with zero normal wall velocity."""
    potential = []
    for d in range(3):
        a = rng.standard_normal(edge_shape(grid, d)) * scale
        for e in range(3):
            if e == d:
                continue
            idx: list[slice | int] = [slice(None)] * 3
            idx[e] = 0
            a[tuple(idx)] = 0.0
            idx[e] = -1
            a[tuple(idx)] = 0.0
        potential.append(a)
    return curl_edges(grid, (potential[0], potential[1], potential[2]))


# ============================================================================
# Assembled systems and boundary conditions
# ============================================================================


@dataclass
class LinearSystem:
    """A scalar system K x + lam w = rhs with the mean constraint w . x = 0."""

    grid: MacGrid
    matrix: sp.csr_matrix
    rhs: np.ndarray
    kind: str
    constraint: np.ndarray | None = None
    diffusivity: float = 1.0
    boundary_rules: dict[str, str] = field(default_factory=dict)

    def bordered(self) -> tuple[sp.csr_matrix, np.ndarray]:
        if self.constraint is None:
            return self.matrix, self.rhs
        w = self.constraint.reshape(-1, 1)
        border = [[self.matrix, sp.csr_matrix(w)], [sp.csr_matrix(w.T), None]]
        mat = sp.bmat(border, format="csr")
        return mat, np.concatenate([self.rhs, [0.0]])

    def relative_residual(self, x: np.ndarray, multiplier: float = 0.0) -> float:
        res = self.rhs - self.matrix @ x
        if self.constraint is not None:
            res = res - multiplier * self.constraint
        scale = np.linalg.norm(self.rhs)
        norm = float(np.linalg.norm(res))
        return norm / float(scale) if scale > 0 else norm


@dataclass
class SaddleSystem:
    """[A B^T; B 0] [u; p] = [f; g] with p defined up to a constant."""

    grid: MacGrid
    A: sp.csr_matrix
    Bt: sp.csr_matrix
    f: np.ndarray
    g: np.ndarray
    boundary_rules: dict[str, str] = field(default_factory=dict)
    kind: str = "velocity"

    @property
    def B(self) -> sp.csr_matrix:
        return self.Bt.T.tocsr()

    def relative_residual(self, u: np.ndarray, p: np.ndarray) -> float:
        r_mom = self.f - self.A @ u - self.Bt @ p
        r_div = self.g - self.B @ u
        res = np.sqrt(np.sum(r_mom**2) + np.sum(r_div**2))
        scale = np.sqrt(np.sum(self.f**2) + np.sum(self.g**2))
        return float(res / scale) if scale > 0 else float(res)


OxygenTopBC = Literal["neumann", "dirichlet"]


def apply_boundary_conditions(
    system: LinearSystem | SaddleSystem,
    which: str,
    oxygen_top_bc: str = "neumann",
) -> LinearSystem | SaddleSystem:
    """Close interior stencils with the wall conditions of the chosen unknown.

    velocity: no-slip on every wall; wall-face rows become identity rows with
        zero right side.
    bacteria: zero total flux on every wall. On the lower wall both fluxes
        vanish; on the upper walls grad n . nu = chi n r(c) grad c . nu.
    oxygen: zero flux on the lower wall; on the upper walls zero flux
        (default) or c-hat = 0 through an odd ghost reflection.
    """
    if which == "velocity":
        if not isinstance(system, SaddleSystem):
            raise BoundaryTagError("velocity conditions apply to a saddle system")
        grid = system.grid
        p_int = interior_projector(grid)
        system.A = (p_int @ system.A @ p_int + boundary_projector(grid)).tocsr()
        system.Bt = (p_int @ system.Bt).tocsr()
        system.f = system.f.copy()
        system.f[grid.boundary_faces] = 0.0
        system.boundary_rules = {tag: "no-slip" for tag in FACE_TAGS}
        return system

    if not isinstance(system, LinearSystem):
        raise BoundaryTagError(f"{which} conditions apply to a scalar system")
    if which == "bacteria":
        rules = {tag: "zero-flux" for tag in LOWER_FACES}
        rules.update({tag: "robin-flux" for tag in UPPER_FACES})
        system.boundary_rules = rules
        return system
    if which == "oxygen":
        rules = {tag: "neumann" for tag in LOWER_FACES}
        if oxygen_top_bc == "neumann":
            rules.update({tag: "neumann" for tag in UPPER_FACES})
        elif oxygen_top_bc == "dirichlet":
            closure = dirichlet_closure(system.grid, UPPER_FACES)
            system.matrix = (system.matrix - system.diffusivity * closure).tocsr()
            rules.update({tag: "dirichlet" for tag in UPPER_FACES})
        else:
            raise BoundaryTagError(f"unknown oxygen top condition {oxygen_top_bc!r}")
        system.boundary_rules = rules
        return system
    raise BoundaryTagError(f"unknown boundary system {which!r}")


def assemble_oseen(
    u_prev: VectorField,
    n_hat: ScalarField,
    groups: DimensionlessGroups,
    F: VectorField,
    gravity: float = 1.0,
) -> SaddleSystem:
    """Oseen linearisation of the momentum equation at u_prev.

    A = S_c (-Lap) + K(u_prev), B^T = S_c grad, right side gamma S_c n-hat g + F
    with g = (0, 0, -gravity).
    """
    grid = check_same_grid(u_prev, n_hat, F)
    _warn_if_compressible(u_prev, "assemble_oseen")
    s_c = groups.S_c
    advection = velocity_advection_stencil(grid).matrix(u_prev.flat())
    a = s_c * (-laplacian_velocity_matrix(grid)) + advection
    bt = s_c * gradient_matrix(grid)
    buoyancy = buoyancy_matrix(grid) @ n_hat.flat()
    force = -groups.gamma * s_c * gravity * buoyancy + F.flat()
    system = SaddleSystem(
        grid=grid, A=a.tocsr(), Bt=bt.tocsr(), f=force, g=np.zeros(grid.n_cells)
    )
    system = apply_boundary_conditions(system, "velocity")  # type: ignore[assignment]
    diag = system.A.diagonal()
    if np.any(diag <= 0):
        raise SingularSystemError(
            "Oseen block has a non-positive diagonal", float(diag.min())
        )
    return system


def _volume_weights(grid: MacGrid) -> np.ndarray:
    return np.full(grid.n_cells, grid.cell_volume)


def assemble_bacteria(
    u: VectorField,
    n_hat_prev: ScalarField,
    c_hat_prev: ScalarField,
    r: ConsumptionFunction,
    chi: float,
    alpha1: float,
    alpha2: float,
    f_n: ScalarField,
) -> LinearSystem:
    """(-Lap + K(u)) n-hat = f_n - chi div(n r(c) grad c-hat), (n, c) lagged."""
    grid = check_same_grid(u, n_hat_prev, c_hat_prev, f_n)
    _warn_if_compressible(u, "assemble_bacteria")
    measure = grid.domain.measure
    advection = scalar_advection_stencil(grid).matrix(u.flat())
    k = -laplacian_scalar_matrix(grid) + advection
    n_full = n_hat_prev + alpha1 / measure
    c_full = c_hat_prev + alpha2 / measure
    rhs = f_n.flat() - chemotaxis_term(n_full, c_full, r, chi).flat()
    system = LinearSystem(
        grid=grid,
        matrix=k.tocsr(),
        rhs=rhs,
        kind="bacteria",
        constraint=_volume_weights(grid),
    )
    return apply_boundary_conditions(system, "bacteria")  # type: ignore[return-value]


def assemble_oxygen(
    u: VectorField,
    n_hat: ScalarField,
    c_hat_prev: ScalarField,
    r: ConsumptionFunction,
    delta: float,
    beta: float,
    alpha1: float,
    alpha2: float,
    f_c: ScalarField,
    oxygen_top_bc: str = "neumann",
) -> LinearSystem:
    """(delta (-Lap) + K(u)) c-hat = f_c - beta r(c_prev) n, with the current n."""
    grid = check_same_grid(u, n_hat, c_hat_prev, f_c)
    _warn_if_compressible(u, "assemble_oxygen")
    measure = grid.domain.measure
    advection = scalar_advection_stencil(grid).matrix(u.flat())
    k = -delta * laplacian_scalar_matrix(grid) + advection
    c_prev = c_hat_prev.flat() + alpha2 / measure
    n_cur = n_hat.flat() + alpha1 / measure
    rhs = f_c.flat() - beta * np.asarray(r(c_prev), dtype=float) * n_cur
    system = LinearSystem(
        grid=grid,
        matrix=k.tocsr(),
        rhs=rhs,
        kind="oxygen",
        constraint=_volume_weights(grid),
        diffusivity=delta,
    )
    return apply_boundary_conditions(  # type: ignore[return-value]
        system, "oxygen", oxygen_top_bc
    )


# ============================================================================
# Wall flux audit
# ============================================================================


def _wall_slices(d: int, side: int, depth: int) -> list[tuple[slice | int, ...]]:
    out = []
    for layer in range(depth):
        idx: list[slice | int] = [slice(None)] * 3
        idx[d] = layer if side == 0 else -1 - layer
        out.append(tuple(idx))
    return out


def _one_sided(
    values: np.ndarray, d: int, side: int, h: float
) -> tuple[np.ndarray, np.ndarray]:
    """Second-order wall value and outward normal derivative from three cells."""
    f0, f1, f2 = (values[s] for s in _wall_slices(d, side, 3))
    wall = (15.0 * f0 - 10.0 * f1 + 3.0 * f2) / 8.0
    inward = (-2.0 * f0 + 3.0 * f1 - f2) / h
    return wall, -inward


def wall_flux_residual(
    n: ScalarField, c: ScalarField, r: ConsumptionFunction, chi: float
) -> dict[str, float]:
    """max |grad n . nu - chi n r(c) grad c . nu| on each upper wall.

    Wall values and normal derivatives come from second-order one-sided
    differences of the cell values, independent of the assembled closure.
    """
    grid = check_same_grid(n, c)
    out = {}
    for tag in sorted(UPPER_FACES):
        d, side = _FACE_AXIS[tag]
        n_w, dn = _one_sided(n.values, d, side, grid.h[d])
        c_w, dc = _one_sided(c.values, d, side, grid.h[d])
        res = dn - chi * n_w * np.asarray(r(c_w), dtype=float) * dc
        out[tag] = float(np.max(np.abs(res)))
    return out
