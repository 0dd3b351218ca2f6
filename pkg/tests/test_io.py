import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftsens import io, models
from driftsens.sde import Domain, TimeGrid, simulate_ensemble


@pytest.fixture
def ensemble():
    grid = TimeGrid.from_dt(0.55, 0.1, t0=0.25)
    return simulate_ensemble(models.double_well(0.7), Domain.box([-2.0], [2.0]), [0.3], None,
                             grid, 7, seed=123)


def test_header_layout(tmp_path, ensemble):
    f = tmp_path / "p.bin"
    io.write_paths(f, ensemble)
    raw = f.read_bytes()
    assert io.HEADER_SIZE == 56
    assert raw[:8] == b"DSPATH01"
    d, n_steps = struct.unpack_from("<II", raw, 8)
    dt, = struct.unpack_from("<d", raw, 16)
    n, seed = struct.unpack_from("<QQ", raw, 24)
    t0, = struct.unpack_from("<d", raw, 40)
    flags, reserved = struct.unpack_from("<II", raw, 48)
    assert (d, n_steps, n, seed, flags, reserved) == (1, 3, 7, 123, 0, 0)
    assert dt == pytest.approx(0.1) and t0 == 0.25
    assert len(raw) == 56 + 8 * 4 * 7
    # time-major: the first N values are every path's initial state
    first = np.frombuffer(raw, "<f8", count=7, offset=56)
    np.testing.assert_array_equal(first, 0.3)
    second = np.frombuffer(raw, "<f8", count=7, offset=56 + 56)
    np.testing.assert_array_equal(second, ensemble.paths[:, 1, 0])


@pytest.mark.parametrize("inc", [False, True])
def test_round_trip(tmp_path, ensemble, inc):
    f = tmp_path / "p.bin"
    io.write_paths(f, ensemble, include_increments=inc)
    back = io.read_paths(f)
    np.testing.assert_array_equal(back.paths, ensemble.paths)
    assert back.grid.n_steps == ensemble.grid.n_steps
    assert back.grid.t0 == ensemble.grid.t0
    assert back.grid.dt == pytest.approx(ensemble.grid.dt, rel=1e-15)
    assert back.seed == 123
    if inc:
        np.testing.assert_array_equal(back.increments, ensemble.increments)
    else:
        assert np.isnan(back.increments).all()


def test_bad_magic_and_truncation(tmp_path, ensemble):
    f = tmp_path / "p.bin"
    io.write_paths(f, ensemble)
    raw = f.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(ValueError, match="magic"):
        io.read_paths(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="bytes"):
        io.read_paths(tmp_path / "short.bin")
    (tmp_path / "tiny.bin").write_bytes(raw[:10])
    with pytest.raises(ValueError):
        io.read_paths(tmp_path / "tiny.bin")


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False))
def test_float_formatting_round_trips(x):
    assert float(io.format_value(x)) == x


def test_value_formatting():
    assert io.format_value(True) == "true"
    assert io.format_value(np.bool_(False)) == "false"
    assert io.format_value(np.int64(3)) == "3"
    assert io.format_value(0.1) == "0.10000000000000001"
    assert io.format_value("none") == "none"


def test_table_and_matrix(tmp_path):
    io.write_table(tmp_path / "t.csv", [{"a": 1, "b": 0.5}, {"a": 2, "b": float("nan")}])
    assert (tmp_path / "t.csv").read_text() == "a,b\n1,0.5\n2,nan\n"
    m = np.arange(6.0).reshape(2, 3) / 7
    io.write_matrix(tmp_path / "m.csv", m[:, :2], 1.0, "bump")
    data, meta = io.read_matrix(tmp_path / "m.csv")
    np.testing.assert_array_equal(data, m[:, :2])
    assert meta == {"n_cells": 2, "t": 1.0, "gamma_id": "bump"}
