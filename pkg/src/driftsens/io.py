"""Binary path dumps and CSV tables.

Path dump layout (all little-endian)::

    offset  size  field
    0       8     magic b"DSPATH01"
    8       4     uint32  d
    12      4     uint32  n_steps
    16      8     float64 dt
    24      8     uint64  N (paths)
    32      8     uint64  seed
    40      8     float64 t0
    48      4     uint32  flags (bit 0: Wiener increments follow the states)
    52      4     reserved, zero
    56      ...   float64 states, time-major: (n_steps + 1, N, d)
    ...     ...   float64 increments, time-major: (n_steps, N, d), if flagged
"""
from __future__ import annotations

import csv
import struct

import numpy as np

from .sde import PathEnsemble, TimeGrid

MAGIC = b"DSPATH01"
_HEADER = struct.Struct("<8sIIdQQdII")
HEADER_SIZE = _HEADER.size
FLAG_INCREMENTS = 1


def write_paths(path, ensemble, include_increments=False):
    n, steps1, d = ensemble.paths.shape
    flags = FLAG_INCREMENTS if include_increments else 0
    header = _HEADER.pack(MAGIC, d, steps1 - 1, ensemble.grid.dt, n,
                          int(ensemble.seed) & 0xFFFFFFFFFFFFFFFF, ensemble.grid.t0, flags, 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ensemble.paths.transpose(1, 0, 2), dtype="<f8").tobytes())
        if include_increments:
            fh.write(np.ascontiguousarray(ensemble.increments.transpose(1, 0, 2),
                                          dtype="<f8").tobytes())


def read_paths(path):
    """Read a dump back into a PathEnsemble (model and gamma tags are not stored)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_SIZE:
        raise ValueError("file too short for a path dump header")
    magic, d, n_steps, dt, n, seed, t0, flags, _ = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    n_states = (n_steps + 1) * n * d
    n_inc = n_steps * n * d if flags & FLAG_INCREMENTS else 0
    expected = HEADER_SIZE + 8 * (n_states + n_inc)
    if len(raw) != expected:
        raise ValueError(f"expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f8", offset=HEADER_SIZE)
    states = body[:n_states].reshape(n_steps + 1, n, d).transpose(1, 0, 2).copy()
    if n_inc:
        inc = body[n_states:].reshape(n_steps, n, d).transpose(1, 0, 2).copy()
    else:
        inc = np.full((n, n_steps, d), np.nan)
    grid = TimeGrid(t0 + n_steps * dt, n_steps, t0) if n_steps else TimeGrid(t0, 0, t0)
    return PathEnsemble(states, inc, grid, states[0, 0].copy(), seed, "unknown", "unknown")


def format_value(v):
    """Round-trippable text for a table cell."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_table(path, rows, columns=None):
    """Write a list of dicts as CSV with a header row."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(row.get(c, "")) for c in columns])


def read_table(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_matrix(path, matrix, t, gamma_id):
    """Dense row-major CSV; first line ``n_cells,t,gamma_id``, then one row per line."""
    matrix = np.asarray(matrix, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([matrix.shape[0], format_value(float(t)), gamma_id])
        for row in matrix:
            w.writerow([format_value(x) for x in row])


def read_matrix(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        head = next(r)
        data = np.array([[float(x) for x in row] for row in r])
    return data, {"n_cells": int(head[0]), "t": float(head[1]), "gamma_id": head[2]}


def write_spectrum(path, pairs):
    """Eigen or singular report: index, re, im, gap, residual."""
    rows = []
    for i, p in enumerate(pairs):
        value = complex(getattr(p, "value"))
        rows.append({"index": i, "re": value.real, "im": value.imag,
                     "gap": getattr(p, "gap", float("nan")),
                     "residual": getattr(p, "residual", float("nan"))})
    write_table(path, rows, ["index", "re", "im", "gap", "residual"])


def write_family(path, family):
    """Stationary family: one row per (phase, cell)."""
    centers = family.grid.centers
    cols = ["phase"] + [f"x{a}" for a in range(centers.shape[1])] + ["density"]
    rows = []
    for s, f in zip(family.phases, family.densities):
        for c, v in zip(centers, f):
            row = {"phase": float(s), "density": float(v)}
            row.update({f"x{a}": float(c[a]) for a in range(centers.shape[1])})
            rows.append(row)
    write_table(path, rows, cols)
