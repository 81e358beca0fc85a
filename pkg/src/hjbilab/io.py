"""Grid-function files: a compact little-endian binary layout and plain CSV.

Binary layout::

    magic    4 bytes   b"HJBG"
    version  uint32    1
    d        uint32
    shape    d x uint64
    lower    d x float64
    upper    d x float64
    values   prod(shape) x float64, C order

All fields are little-endian.
"""

from __future__ import annotations

import struct

import numpy as np

from .grid import BoxDomain, Grid, GridFunction

MAGIC = b"HJBG"
VERSION = 1


def write_binary(u: GridFunction, path) -> None:
    g = u.grid
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, g.d))
        fh.write(np.asarray(g.shape, dtype="<u8").tobytes())
        fh.write(np.asarray(g.box.lower, dtype="<f8").tobytes())
        fh.write(np.asarray(g.box.upper, dtype="<f8").tobytes())
        fh.write(np.asarray(u.values, dtype="<f8").tobytes())


def read_binary(path, exterior=None) -> GridFunction:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a grid-function file")
    version, d = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = 12
    shape = np.frombuffer(data, dtype="<u8", count=d, offset=off).astype(int)
    off += 8 * d
    lower = np.frombuffer(data, dtype="<f8", count=d, offset=off)
    off += 8 * d
    upper = np.frombuffer(data, dtype="<f8", count=d, offset=off)
    off += 8 * d
    n = int(np.prod(shape))
    if len(data) != off + 8 * n:
        raise ValueError(f"{path}: truncated or oversized payload")
    vals = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(float)
    grid = Grid(BoxDomain(tuple(lower), tuple(upper)), tuple(int(s) for s in shape))
    return GridFunction(grid, vals, exterior)


def write_csv(u: GridFunction, path) -> None:
    """One row per node: coordinates then value, full precision."""
    g = u.grid
    header = ",".join([f"x{i + 1}" for i in range(g.d)] + ["value"])
    np.savetxt(path, np.column_stack([g.nodes(), u.values]), delimiter=",", header=header,
               comments="", fmt="%.17g")


def read_csv(path, exterior=None) -> GridFunction:
    """Inverse of :func:`write_csv`; the lattice is recovered from the coordinates."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    d = data.shape[1] - 1
    axes = [np.unique(data[:, i]) for i in range(d)]
    shape = tuple(len(a) for a in axes)
    if int(np.prod(shape)) != len(data):
        raise ValueError(f"{path}: nodes do not form a full lattice")
    grid = Grid(BoxDomain(tuple(a[0] for a in axes), tuple(a[-1] for a in axes)), shape)
    order = np.lexsort(tuple(data[:, i] for i in reversed(range(d))))
    return GridFunction(grid, data[order, -1], exterior)


def write_series(path, header, rows) -> None:
    """CSV series for plotting (``header`` is a list of column names)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    np.savetxt(path, rows, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
