"""Field persistence.

Binary container (little-endian)::

    magic  b"WFLD"          4 bytes
    version uint32          currently 1
    n       uint32          dimension
    kind    uint32          0 conformal, 1 original
    R, h, time  float64 x3
    payload float64 x size  node values, row-major over (y_1, ..., y_n)

The shape is recomputed from (n, R, h), so a truncated payload is detected.
CSV dumps (small grids only) carry the coordinates and the value per row.
"""
from __future__ import annotations

import io
import struct

import numpy as np

from .grid import CONFORMAL, ORIGINAL, HalfSpaceGrid, WeightedField

MAGIC = b"WFLD"
VERSION = 1
_HEAD = struct.Struct("<4sIII3d")
_KINDS = {CONFORMAL: 0, ORIGINAL: 1}
_KIND_OF = {v: k for k, v in _KINDS.items()}

CSV_MAX_NODES = 200_000


def dumps(field: WeightedField) -> bytes:
    g = field.grid
    head = _HEAD.pack(MAGIC, VERSION, g.n, _KINDS[field.kind], g.R, g.h, float(field.time))
    return head + np.ascontiguousarray(field.values, dtype="<f8").tobytes()


def loads(blob: bytes) -> WeightedField:
    if len(blob) < _HEAD.size:
        raise ValueError("field blob too short")
    magic, version, n, kind, R, h, time = _HEAD.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError("not a field file")
    if version != VERSION:
        raise ValueError(f"unsupported field version {version}")
    grid = HalfSpaceGrid(n, R, h)
    payload = np.frombuffer(blob, dtype="<f8", offset=_HEAD.size)
    if payload.size != grid.size:
        raise ValueError(f"payload has {payload.size} values, grid needs {grid.size}")
    return WeightedField(grid, payload.reshape(grid.shape).astype(float), time, _KIND_OF[kind])


def save(field: WeightedField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(field))


def load(path) -> WeightedField:
    with open(path, "rb") as fh:
        return loads(fh.read())


def to_csv(field: WeightedField) -> str:
    g = field.grid
    if g.size > CSV_MAX_NODES:
        raise ValueError("grid too large for CSV; use the binary format")
    pts = g.points().reshape(-1, g.n)
    vals = field.values.reshape(-1)
    buf = io.StringIO()
    buf.write(",".join([f"y{i + 1}" for i in range(g.n)] + ["value"]) + "\n")
    for p, v in zip(pts, vals):
        buf.write(",".join(format(float(x), ".17g") for x in (*p, v)) + "\n")
    return buf.getvalue()


def from_csv(text: str, grid: HalfSpaceGrid, time: float = 0.0, kind: str = CONFORMAL) -> WeightedField:
    rows = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
    if rows.shape != (grid.size, grid.n + 1):
        raise ValueError("CSV does not match the grid")
    if not np.allclose(rows[:, :-1], grid.points().reshape(-1, grid.n), atol=1e-12):
        raise ValueError("CSV coordinates do not match the grid")
    return WeightedField(grid, rows[:, -1].reshape(grid.shape), time, kind)
