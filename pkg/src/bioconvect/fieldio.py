"""Field files: legacy VTK for viewing, BIOC1 sidecar for exact round trips.

BIOC1 layout (all integers and floats little-endian):

    8 bytes   magic b"BIOC1" padded with NUL
    uint32    length H of the JSON header
    H bytes   UTF-8 JSON: cells, edges, alpha1, alpha2, fields [{name, shape}]
    payload   float64 arrays in header order, C order

See docs/FORMATS.md.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path

import numpy as np

from .errors import FieldFormatError
from .grid import MacGrid, ScalarField, VectorField
from .models import ChamberDomain
from .solver import FieldState

logger = logging.getLogger(__name__)

MAGIC = b"BIOC1\x00\x00\x00"
FIELD_NAMES = ("u1", "u2", "u3", "p", "n_hat", "c_hat")
VTK_SUFFIX = ".vtk"
SIDECAR_SUFFIX = ".bioc"


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_file = path.with_suffix(path.suffix + ".tmp")
    with open(tmp_file, "wb") as f:
        f.write(data)
    tmp_file.replace(path)


def _arrays(state: FieldState) -> list[np.ndarray]:
    u1, u2, u3 = state.u.components
    return [u1, u2, u3, state.p.values, state.n_hat.values, state.c_hat.values]


# ============================================================================
# Sidecar
# ============================================================================


def encode_sidecar(state: FieldState) -> bytes:
    grid = state.grid
    arrays = _arrays(state)
    header = {
        "cells": list(grid.shape),
        "edges": list(grid.domain.edges),
        "alpha1": state.alpha1,
        "alpha2": state.alpha2,
        "fields": [
            {"name": n, "shape": list(a.shape)} for n, a in zip(FIELD_NAMES, arrays)
        ],
    }
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return MAGIC + struct.pack("<I", len(head)) + head + payload


def decode_sidecar(data: bytes) -> FieldState:
    """Inverse of encode_sidecar.

    Raises:
        FieldFormatError: wrong magic, unreadable header, or payload size
            inconsistent with the header.
    """
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise FieldFormatError("not a BIOC1 file (bad magic)")
    (size,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        header = json.loads(data[start : start + size].decode("utf-8"))
        cells = tuple(int(n) for n in header["cells"])
        edges = tuple(float(v) for v in header["edges"])
        alpha1, alpha2 = float(header["alpha1"]), float(header["alpha2"])
        specs = [
            (f["name"], tuple(int(n) for n in f["shape"])) for f in header["fields"]
        ]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as e:
        raise FieldFormatError(f"unreadable BIOC1 header: {e}") from e
    if [name for name, _ in specs] != list(FIELD_NAMES):
        raise FieldFormatError(f"unexpected field list {[name for name, _ in specs]}")

    grid = MacGrid.uniform(ChamberDomain(*edges), cells)
    expected = [grid.face_shape(d) for d in range(3)] + [grid.shape] * 3
    offset = start + size
    arrays = []
    for (name, shape), want in zip(specs, expected):
        if shape != tuple(want):
            raise FieldFormatError(f"{name}: shape {shape} does not match grid {cells}")
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(data):
            raise FieldFormatError(f"{name}: payload truncated")
        values = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        arrays.append(values.reshape(shape).copy())
        offset = end
    if offset != len(data):
        raise FieldFormatError(f"{len(data) - offset} trailing bytes after payload")
    return FieldState(
        u=VectorField(grid, (arrays[0], arrays[1], arrays[2])),
        p=ScalarField(grid, arrays[3]),
        n_hat=ScalarField(grid, arrays[4]),
        c_hat=ScalarField(grid, arrays[5]),
        alpha1=alpha1,
        alpha2=alpha2,
    )


# ============================================================================
# VTK
# ============================================================================


def _vtk_values(values: np.ndarray) -> str:
    # VTK wants x fastest
    return "\n".join(f"{v:.17g}" for v in np.asarray(values).ravel(order="F"))


def encode_vtk(state: FieldState, title: str = "bioconvect fields") -> str:
    grid = state.grid
    n1, n2, n3 = grid.shape
    h1, h2, h3 = grid.h
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {n1 + 1} {n2 + 1} {n3 + 1}",
        "ORIGIN 0 0 0",
        f"SPACING {h1:.17g} {h2:.17g} {h3:.17g}",
        f"CELL_DATA {grid.n_cells}",
    ]
    scalars = {
        "p": state.p.values,
        "n_hat": state.n_hat.values,
        "c_hat": state.c_hat.values,
        "n": state.n_total().values,
        "c": state.c_total().values,
    }
    for name, values in scalars.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines.append(_vtk_values(values))
    # face velocities averaged to cell centres
    avg = state.u.cell_average()
    triples = np.stack([avg[d].ravel(order="F") for d in range(3)], axis=1)
    lines.append("VECTORS u double")
    lines.append("\n".join(f"{a:.17g} {b:.17g} {c:.17g}" for a, b, c in triples))
    return "\n".join(lines) + "\n"


# ============================================================================
# Public API
# ============================================================================


def write_fields(state: FieldState, path: str | Path) -> tuple[Path, Path]:
    """Write <path>.vtk and <path>.bioc; returns both paths."""
    base = Path(path)
    if base.suffix in (VTK_SUFFIX, SIDECAR_SUFFIX):
        base = base.with_suffix("")
    vtk_path = base.with_suffix(VTK_SUFFIX)
    bioc_path = base.with_suffix(SIDECAR_SUFFIX)
    _atomic_write(vtk_path, encode_vtk(state).encode("ascii"))
    _atomic_write(bioc_path, encode_sidecar(state))
    logger.info("wrote %s and %s", vtk_path, bioc_path)
    return vtk_path, bioc_path


def read_fields(path: str | Path) -> FieldState:
    """Read the BIOC1 sidecar belonging to path (.bioc, .vtk or bare base)."""
    base = Path(path)
    if base.suffix != SIDECAR_SUFFIX:
        base = base.with_suffix(SIDECAR_SUFFIX)
    try:
        data = base.read_bytes()
    except OSError as e:
        raise FieldFormatError(f"cannot read {base}: {e.strerror}") from e
    return decode_sidecar(data)
