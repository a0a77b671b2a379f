"""MAC grid and the scalar/vector fields that live on it.

Cells are stored as arrays of shape (n1, n2, n3) in C order. Face
component d has one extra entry along axis d and includes the boundary
faces, which carry zero for admissible (no-slip) velocities.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import GridMismatchError, ParameterError
from .models import ChamberDomain

MIN_CELLS = 4


@dataclass(frozen=True)
class MacGrid:
    """Uniform staggered grid on a chamber."""

    domain: ChamberDomain
    n1: int
    n2: int
    n3: int

    def __post_init__(self) -> None:
        for name, value in zip(("n1", "n2", "n3"), self.shape):
            if int(value) != value or value < MIN_CELLS:
                raise ParameterError(name, value, f"must be an integer >= {MIN_CELLS}")

    @classmethod
    def uniform(cls, domain: ChamberDomain, n: int | Sequence[int]) -> MacGrid:
        try:
            k = operator.index(n)  # type: ignore[arg-type]
        except TypeError:
            n1, n2, n3 = n  # type: ignore[misc]
            return cls(domain, int(n1), int(n2), int(n3))
        return cls(domain, k, k, k)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n1, self.n2, self.n3)

    @property
    def h(self) -> tuple[float, float, float]:
        return (
            self.domain.L1 / self.n1,
            self.domain.L2 / self.n2,
            self.domain.L3 / self.n3,
        )

    @property
    def h1(self) -> float:
        return self.h[0]

    @property
    def h2(self) -> float:
        return self.h[1]

    @property
    def h3(self) -> float:
        return self.h[2]

    @property
    def h_max(self) -> float:
        return max(self.h)

    @property
    def cell_volume(self) -> float:
        h1, h2, h3 = self.h
        return h1 * h2 * h3

    @property
    def n_cells(self) -> int:
        return self.n1 * self.n2 * self.n3

    def face_shape(self, d: int) -> tuple[int, int, int]:
        shape = list(self.shape)
        shape[d] += 1
        return (shape[0], shape[1], shape[2])

    @property
    def face_counts(self) -> tuple[int, int, int]:
        c0, c1, c2 = (int(np.prod(self.face_shape(d))) for d in range(3))
        return (c0, c1, c2)

    @property
    def face_offsets(self) -> tuple[int, int, int]:
        c = self.face_counts
        return (0, c[0], c[0] + c[1])

    @property
    def n_faces(self) -> int:
        return sum(self.face_counts)

    # ---- index maps -------------------------------------------------------

    def cell_index(self, i: np.ndarray, j: np.ndarray, k: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index((i, j, k), self.shape)

    def face_index(
        self, d: int, i: np.ndarray, j: np.ndarray, k: np.ndarray
    ) -> np.ndarray:
        local = np.ravel_multi_index((i, j, k), self.face_shape(d))
        return self.face_offsets[d] + local

    def boundary_face_mask(self, d: int) -> np.ndarray:
        """Boolean mask (in face shape) of the faces of component d on the wall."""
        mask = np.zeros(self.face_shape(d), dtype=bool)
        idx: list[slice | int] = [slice(None)] * 3
        idx[d] = 0
        mask[tuple(idx)] = True
        idx[d] = -1
        mask[tuple(idx)] = True
        return mask

    @cached_property
    def interior_faces(self) -> np.ndarray:
        """Global indices of all faces not on the wall."""
        mask = np.concatenate([~self.boundary_face_mask(d).ravel() for d in range(3)])
        return np.flatnonzero(mask)

    @cached_property
    def boundary_faces(self) -> np.ndarray:
        mask = np.concatenate([self.boundary_face_mask(d).ravel() for d in range(3)])
        return np.flatnonzero(mask)

    @cached_property
    def face_weights(self) -> np.ndarray:
        """Quadrature weight of every face: V inside, V/2 on the wall."""
        weights = np.full(self.n_faces, self.cell_volume)
        weights[self.boundary_faces] *= 0.5
        return weights

    # ---- coordinates ------------------------------------------------------

    def _axis_points(self, d: int, staggered: bool) -> np.ndarray:
        n = self.shape[d]
        hd = self.h[d]
        if staggered:
            return np.arange(n + 1) * hd
        return (np.arange(n) + 0.5) * hd

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        axes = [self._axis_points(d, False) for d in range(3)]
        return tuple(np.meshgrid(*axes, indexing="ij"))  # type: ignore[return-value]

    def face_centers(self, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        axes = [self._axis_points(e, e == d) for e in range(3)]
        return tuple(np.meshgrid(*axes, indexing="ij"))  # type: ignore[return-value]

    def edge_centers(self, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Points of the edges parallel to axis d (nodes in the other two axes)."""
        axes = [self._axis_points(e, e != d) for e in range(3)]
        return tuple(np.meshgrid(*axes, indexing="ij"))  # type: ignore[return-value]

    def to_dict(self) -> dict:
        return {"cells": list(self.shape), "edges": list(self.domain.edges)}


def _check_same_grid(a: MacGrid, b: MacGrid) -> None:
    if a != b:
        raise GridMismatchError(
            f"grid mismatch: {a.shape}/{a.domain.edges} vs {b.shape}/{b.domain.edges}"
        )


# ============================================================================
# Fields
# ============================================================================


@dataclass(eq=False)
class ScalarField:
    """Cell-centred values."""

    grid: MacGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(self.values)):
            raise ParameterError(
                "values", "non-finite", "scalar field entries must be finite"
            )

    @classmethod
    def zeros(cls, grid: MacGrid) -> ScalarField:
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: MacGrid, value: float) -> ScalarField:
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(
        cls,
        grid: MacGrid,
        fn: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    ) -> ScalarField:
        x, y, z = grid.cell_centers()
        return cls(grid, np.broadcast_to(fn(x, y, z), grid.shape).copy())

    @classmethod
    def from_flat(cls, grid: MacGrid, vec: np.ndarray) -> ScalarField:
        return cls(grid, np.asarray(vec).reshape(grid.shape))

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def copy(self) -> ScalarField:
        return ScalarField(self.grid, self.values.copy())

    def mean(self) -> float:
        return float(self.values.mean())

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def minus_mean(self) -> ScalarField:
        return ScalarField(self.grid, self.values - self.values.mean())

    def l2_norm(self) -> float:
        return float(np.sqrt(self.grid.cell_volume * np.sum(self.values**2)))

    def inner(self, other: ScalarField) -> float:
        _check_same_grid(self.grid, other.grid)
        return float(self.grid.cell_volume * np.sum(self.values * other.values))

    def __add__(self, other: ScalarField | float) -> ScalarField:
        if isinstance(other, ScalarField):
            _check_same_grid(self.grid, other.grid)
            return ScalarField(self.grid, self.values + other.values)
        return ScalarField(self.grid, self.values + float(other))

    def __sub__(self, other: ScalarField | float) -> ScalarField:
        if isinstance(other, ScalarField):
            _check_same_grid(self.grid, other.grid)
            return ScalarField(self.grid, self.values - other.values)
        return ScalarField(self.grid, self.values - float(other))

    def __mul__(self, factor: float) -> ScalarField:
        return ScalarField(self.grid, self.values * float(factor))

    __rmul__ = __mul__


@dataclass(eq=False)
class VectorField:
    """Face-normal components (u1 on x-faces, u2 on y-faces, u3 on z-faces)."""

    grid: MacGrid
    components: tuple[np.ndarray, np.ndarray, np.ndarray]

    def __post_init__(self) -> None:
        comps = []
        for d, comp in enumerate(self.components):
            arr = np.asarray(comp, dtype=float).reshape(self.grid.face_shape(d))
            if not np.all(np.isfinite(arr)):
                raise ParameterError(
                    f"component {d}", "non-finite", "entries must be finite"
                )
            comps.append(arr)
        self.components = (comps[0], comps[1], comps[2])

    @classmethod
    def zeros(cls, grid: MacGrid) -> VectorField:
        u1, u2, u3 = (np.zeros(grid.face_shape(d)) for d in range(3))
        return cls(grid, (u1, u2, u3))

    @classmethod
    def from_functions(
        cls,
        grid: MacGrid,
        fns: Sequence[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]],
    ) -> VectorField:
        comps = []
        for d, fn in enumerate(fns):
            x, y, z = grid.face_centers(d)
            comps.append(np.broadcast_to(fn(x, y, z), grid.face_shape(d)).copy())
        return cls(grid, (comps[0], comps[1], comps[2]))

    @classmethod
    def from_flat(cls, grid: MacGrid, vec: np.ndarray) -> VectorField:
        vec = np.asarray(vec, dtype=float)
        if vec.size != grid.n_faces:
            raise GridMismatchError(
                f"expected {grid.n_faces} face values, got {vec.size}"
            )
        off = grid.face_offsets
        cnt = grid.face_counts
        comps = tuple(
            vec[off[d] : off[d] + cnt[d]].reshape(grid.face_shape(d)) for d in range(3)
        )
        return cls(grid, comps)  # type: ignore[arg-type]

    def flat(self) -> np.ndarray:
        return np.concatenate([c.ravel() for c in self.components])

    def copy(self) -> VectorField:
        u1, u2, u3 = (c.copy() for c in self.components)
        return VectorField(self.grid, (u1, u2, u3))

    def l2_norm(self) -> float:
        v = self.flat()
        return float(np.sqrt(np.sum(self.grid.face_weights * v * v)))

    def inner(self, other: VectorField) -> float:
        _check_same_grid(self.grid, other.grid)
        return float(np.sum(self.grid.face_weights * self.flat() * other.flat()))

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(c), initial=0.0) for c in self.components))

    def boundary_max(self) -> float:
        """Largest |value| on wall faces (zero for admissible velocities)."""
        return float(np.max(np.abs(self.flat()[self.grid.boundary_faces]), initial=0.0))

    def cell_average(self) -> np.ndarray:
        """Components averaged to cell centres, shape (3, n1, n2, n3)."""
        u1, u2, u3 = self.components
        return np.stack(
            [
                0.5 * (u1[1:, :, :] + u1[:-1, :, :]),
                0.5 * (u2[:, 1:, :] + u2[:, :-1, :]),
                0.5 * (u3[:, :, 1:] + u3[:, :, :-1]),
            ]
        )

    def __add__(self, other: VectorField) -> VectorField:
        _check_same_grid(self.grid, other.grid)
        return VectorField.from_flat(self.grid, self.flat() + other.flat())

    def __sub__(self, other: VectorField) -> VectorField:
        _check_same_grid(self.grid, other.grid)
        return VectorField.from_flat(self.grid, self.flat() - other.flat())

    def __mul__(self, factor: float) -> VectorField:
        return VectorField.from_flat(self.grid, self.flat() * float(factor))

    __rmul__ = __mul__


def check_same_grid(*items: ScalarField | VectorField | MacGrid) -> MacGrid:
    """Return the common grid of the items or raise GridMismatchError."""
    grids = [it if isinstance(it, MacGrid) else it.grid for it in items]
    for g in grids[1:]:
        _check_same_grid(grids[0], g)
    return grids[0]
