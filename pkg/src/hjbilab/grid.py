"""Uniform box lattices, grid functions with exterior data, regions and norms."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box ``[lower, upper]``."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise ValueError("box corners have different dimensions")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ValueError(f"box needs lower < upper componentwise, got {lo} and {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def diam(self) -> float:
        return float(np.linalg.norm(np.subtract(self.upper, self.lower)))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    def contains(self, x, strict=False) -> np.ndarray:
        x = np.atleast_2d(x)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        if strict:
            return np.all((x > lo) & (x < hi), axis=-1)
        return np.all((x >= lo) & (x <= hi), axis=-1)


@dataclass(frozen=True)
class Grid:
    """Uniform lattice on a box, boundary nodes included.

    Parameters
    ----------
    box : BoxDomain
    shape : tuple of int
        Number of nodes per axis (at least 2).
    """

    box: BoxDomain
    shape: tuple

    def __post_init__(self):
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        if len(shape) != self.box.d:
            raise ValueError("grid shape does not match the box dimension")
        if min(shape) < 2:
            raise ValueError("each axis needs at least two nodes")
        object.__setattr__(self, "shape", shape)

    @classmethod
    def uniform(cls, lower, upper, n):
        box = BoxDomain(lower, upper)
        return cls(box, (n,) * box.d if np.isscalar(n) else tuple(n))

    @property
    def d(self) -> int:
        return self.box.d

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.box.upper) - np.asarray(self.box.lower)) / (np.asarray(self.shape) - 1)

    @property
    def h(self) -> float:
        """Largest spacing over the axes."""
        return float(self.spacing.max())

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, n) for a, b, n in zip(self.box.lower, self.box.upper, self.shape)]

    def nodes(self) -> np.ndarray:
        """All lattice nodes, shape ``(size, d)`` in C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def boundary_mask(self) -> np.ndarray:
        idx = np.indices(self.shape)
        mask = np.zeros(self.shape, dtype=bool)
        for k, n in enumerate(self.shape):
            mask |= (idx[k] == 0) | (idx[k] == n - 1)
        return mask.ravel()

    def refine(self) -> "Grid":
        """Halve the spacing."""
        return Grid(self.box, tuple(2 * n - 1 for n in self.shape))


@dataclass(frozen=True)
class Region:
    """Predicate region evaluated at lattice nodes.

    ``kind`` is one of ``ball``, ``cube``, ``annulus``, ``box`` or ``custom``.
    Balls and annuli are open; cubes are the open ``(c - w, c + w)^d``.
    """

    kind: str
    center: tuple = ()
    radius: float = 0.0
    inner_radius: float = 0.0
    lower: tuple = ()
    upper: tuple = ()
    predicate: Callable | None = field(default=None, compare=False)
    closed: bool = False

    @classmethod
    def ball(cls, center, radius, closed=False):
        return cls("ball", center=tuple(np.atleast_1d(center).astype(float)),
                   radius=float(radius), closed=closed)

    @classmethod
    def cube(cls, center, half_width, closed=False):
        return cls("cube", center=tuple(np.atleast_1d(center).astype(float)),
                   radius=float(half_width), closed=closed)

    @classmethod
    def annulus(cls, center, inner, outer):
        return cls("annulus", center=tuple(np.atleast_1d(center).astype(float)),
                   radius=float(outer), inner_radius=float(inner))

    @classmethod
    def from_box(cls, box: BoxDomain, closed=False):
        return cls("box", lower=box.lower, upper=box.upper, closed=closed)

    @classmethod
    def custom(cls, predicate):
        """``predicate(points) -> bool array`` on an ``(m, d)`` array."""
        return cls("custom", predicate=predicate)

    @property
    def is_convex(self) -> bool:
        return self.kind in ("ball", "cube", "box")

    @property
    def diam(self) -> float:
        if self.kind in ("ball", "annulus"):
            return 2.0 * self.radius
        if self.kind == "cube":
            return 2.0 * self.radius * math.sqrt(len(self.center))
        if self.kind == "box":
            return BoxDomain(self.lower, self.upper).diam
        raise ValueError("diameter of a custom region is not defined")

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "custom":
            return np.asarray(self.predicate(x), dtype=bool)
        if self.kind == "box":
            lo, hi = np.asarray(self.lower), np.asarray(self.upper)
            if self.closed:
                return np.all((x >= lo) & (x <= hi), axis=-1)
            return np.all((x > lo) & (x < hi), axis=-1)
        c = np.asarray(self.center)
        if self.kind == "cube":
            dist = np.max(np.abs(x - c), axis=-1)
        else:
            dist = np.linalg.norm(x - c, axis=-1)
        if self.kind == "annulus":
            return (dist > self.inner_radius) & (dist < self.radius)
        return dist <= self.radius if self.closed else dist < self.radius

    def mask(self, grid: Grid) -> np.ndarray:
        return self.contains(grid.nodes())

    def measure(self, grid: Grid) -> float:
        return float(self.mask(grid).sum()) * grid.cell_volume


def _as_exterior(rule, d):
    if rule is None:
        return lambda p: np.zeros(len(p))
    if callable(rule):
        return rule
    value = float(rule)
    return lambda p: np.full(len(p), value)


class GridFunction:
    """Lattice values plus an exterior rule, giving a function on all of ``R^d``.

    Inside the box the function is the multilinear interpolant of the node
    values; outside it is ``exterior(points)``.

    Parameters
    ----------
    grid : Grid
    values : array_like
        Node values, flat or shaped like ``grid.shape``.
    exterior : callable or float, optional
        Vectorized rule ``(m, d) -> (m,)``; a float means a constant.
    """

    __slots__ = ("grid", "values", "exterior")

    def __init__(self, grid: Grid, values, exterior=None):
        vals = np.array(values, dtype=float).reshape(-1)
        if vals.size != grid.size:
            raise ValueError(f"expected {grid.size} node values, got {vals.size}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function values must be finite")
        vals.setflags(write=False)
        self.grid = grid
        self.values = vals
        self.exterior = _as_exterior(exterior, grid.d)

    @classmethod
    def from_function(cls, grid: Grid, fun, exterior="same"):
        """Sample ``fun`` at the nodes; by default ``fun`` also rules outside."""
        ext = fun if isinstance(exterior, str) and exterior == "same" else exterior
        return cls(grid, fun(grid.nodes()), ext)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values, self.exterior)

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def __call__(self, points) -> np.ndarray:
        return interpolate(self, points)

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())


def interpolate(u: GridFunction, x) -> np.ndarray | float:
    """Evaluate ``u`` at points: multilinear inside the box, exterior rule outside."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0 or (x.ndim == 1 and u.grid.d > 1) or (x.ndim == 1 and x.size == 1)
    pts = x.reshape(-1, u.grid.d)
    grid = u.grid
    lo = np.asarray(grid.box.lower)
    h = grid.spacing
    shape = np.asarray(grid.shape)
    # tiny slack so nodes on the box faces count as inside
    slack = 1e-12 * h
    inside = np.all((pts >= lo - slack) & (pts <= np.asarray(grid.box.upper) + slack), axis=1)
    out = np.empty(len(pts))
    if np.any(~inside):
        out[~inside] = u.exterior(pts[~inside])
    if np.any(inside):
        idx, w = _cell_weights(pts[inside], lo, h, shape)
        out[inside] = np.einsum("mk,mk->m", u.values[idx], w)
    return float(out[0]) if scalar else out


def _cell_weights(pts, lo, h, shape):
    """Flat node indices and weights of the ``2^d`` cell corners (both ``(m, 2^d)``)."""
    t = (pts - lo) / h
    base = np.clip(np.floor(t).astype(np.int64), 0, shape - 2)
    frac = np.clip(t - base, 0.0, 1.0)
    d = pts.shape[1]
    strides = np.array([int(np.prod(shape[k + 1:])) for k in range(d)], dtype=np.int64)
    corners = list(itertools.product((0, 1), repeat=d))
    idx = np.empty((len(pts), len(corners)), dtype=np.int64)
    w = np.empty((len(pts), len(corners)))
    for j, c in enumerate(corners):
        c = np.asarray(c)
        idx[:, j] = (base + c) @ strides
        w[:, j] = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
    return idx, w


def _region_values(u: GridFunction, R: Region) -> np.ndarray:
    mask = R.mask(u.grid)
    if not mask.any():
        raise ValueError("region contains no lattice nodes")
    return u.values[mask]


def lp_norm(u: GridFunction, p: float, R: Region) -> float:
    """``(sum |u|^p h^d)^(1/p)`` over the region nodes; ``p = inf`` gives the max."""
    if not p > 0:
        raise ValueError("p must be positive")
    vals = np.abs(_region_values(u, R))
    if math.isinf(p):
        return float(vals.max())
    return float((math.fsum(vals ** p) * u.grid.cell_volume) ** (1.0 / p))


def oscillation(u: GridFunction, R: Region) -> float:
    vals = _region_values(u, R)
    return float(vals.max() - vals.min())


def superlevel_measure(u: GridFunction, t: float, R: Region) -> float:
    """Node-count measure of ``{u > t}`` within the region."""
    vals = _region_values(u, R)
    return float(np.count_nonzero(vals > t)) * u.grid.cell_volume


def _neighbourhood_reduce(u: GridFunction, op) -> np.ndarray:
    arr = u.array
    pad = np.pad(arr, 1, mode="edge")
    out = arr.copy()
    for off in itertools.product((0, 1, 2), repeat=arr.ndim):
        sl = tuple(slice(o, o + n) for o, n in zip(off, arr.shape))
        out = op(out, pad[sl])
    return out.ravel()


def upper_envelope(u: GridFunction) -> GridFunction:
    """Discrete upper semicontinuous envelope: max over the ``3^d`` stencil."""
    return u.with_values(_neighbourhood_reduce(u, np.maximum))


def lower_envelope(u: GridFunction) -> GridFunction:
    return u.with_values(_neighbourhood_reduce(u, np.minimum))


def oscillation_gap(u: GridFunction) -> float:
    """``max(u^* - u_*)``, the discrete continuity witness."""
    return float((upper_envelope(u).values - lower_envelope(u).values).max())
