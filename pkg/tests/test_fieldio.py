"""Tests for VTK output and the BIOC1 sidecar."""

import numpy as np
import pytest

from bioconvect.errors import FieldFormatError
from bioconvect.fieldio import (
    MAGIC,
    decode_sidecar,
    encode_sidecar,
    encode_vtk,
    read_fields,
    write_fields,
)
from bioconvect.solver import FieldState


def _make_state(grid, rng):
    return FieldState.random(grid, rng, alpha1=0.5, alpha2=0.25)


def _assert_same_state(a, b):
    assert a.grid.shape == b.grid.shape
    assert a.grid.domain.edges == b.grid.domain.edges
    assert np.array_equal(a.u.flat(), b.u.flat())
    assert np.array_equal(a.p.values, b.p.values)
    assert np.array_equal(a.n_hat.values, b.n_hat.values)
    assert np.array_equal(a.c_hat.values, b.c_hat.values)
    assert (a.alpha1, a.alpha2) == (b.alpha1, b.alpha2)


def test_sidecar_is_bit_exact(grid6, rng):
    state = _make_state(grid6, rng)
    data = encode_sidecar(state)
    assert data.startswith(MAGIC)
    _assert_same_state(decode_sidecar(data), state)


def test_write_and_read_fields(tmp_path, grid4, rng):
    state = _make_state(grid4, rng)
    vtk_path, bioc_path = write_fields(state, tmp_path / "out" / "state.vtk")
    assert vtk_path.name == "state.vtk"
    assert bioc_path.name == "state.bioc"
    assert not list((tmp_path / "out").glob("*.tmp"))
    _assert_same_state(read_fields(vtk_path), state)
    _assert_same_state(read_fields(tmp_path / "out" / "state"), state)


def test_vtk_header(grid4, rng):
    lines = encode_vtk(_make_state(grid4, rng)).splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert "DIMENSIONS 5 5 5" in lines
    assert "CELL_DATA 64" in lines
    assert "SCALARS n double 1" in lines
    assert "VECTORS u double" in lines
    vectors = lines[lines.index("VECTORS u double") + 1 :]
    assert len(vectors) == 64
    assert all(len(row.split()) == 3 for row in vectors)


def test_sidecar_rejects_bad_magic(grid4, rng):
    data = encode_sidecar(_make_state(grid4, rng))
    with pytest.raises(FieldFormatError):
        decode_sidecar(b"NOTBIOC1" + data[8:])
    with pytest.raises(FieldFormatError):
        decode_sidecar(b"BIO")


def test_sidecar_rejects_truncated_payload(grid4, rng):
    data = encode_sidecar(_make_state(grid4, rng))
    with pytest.raises(FieldFormatError, match="truncated"):
        decode_sidecar(data[:-8])


def test_sidecar_rejects_trailing_bytes(grid4, rng):
    data = encode_sidecar(_make_state(grid4, rng))
    with pytest.raises(FieldFormatError, match="trailing"):
        decode_sidecar(data + b"\x00" * 8)


def test_sidecar_rejects_garbled_header(grid4, rng):
    data = bytearray(encode_sidecar(_make_state(grid4, rng)))
    data[12] = 0xFF
    with pytest.raises(FieldFormatError):
        decode_sidecar(bytes(data))


def test_read_missing_file(tmp_path):
    with pytest.raises(FieldFormatError):
        read_fields(tmp_path / "missing.bioc")
