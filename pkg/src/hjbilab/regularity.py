"""Empirical weak Harnack ratios, superlevel decay and Hölder exponents of grid functions."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import GridFunction, Region

EPS3_SWEEP = (0.125, 0.25, 0.5, 1.0)


class InsufficientDataError(ValueError):
    """Fewer than three positive oscillations to fit."""


@dataclass
class HarnackReport:
    """Per-scale weak Harnack ratios for each candidate exponent.

    ``ratios[e]`` lists, for exponent ``e`` and each scale ``l``,
    ``(int_{Q_rho} u^e / rho^d)^(1/e) / (inf_{Q_rho} u + l ||f||_{L^d(Q_l)})``
    with ``rho = l / (9 sqrt d)``.
    """

    scales: list
    ratios: dict
    eps3: float
    max_ratio: float
    spread: float
    spreads: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"scales": [float(s) for s in self.scales],
                "ratios": {str(k): [float(x) for x in v] for k, v in self.ratios.items()},
                "spreads": {str(k): float(v) for k, v in self.spreads.items()},
                "eps3": float(self.eps3), "max_ratio": float(self.max_ratio),
                "spread": float(self.spread)}


@dataclass
class OscillationSeries:
    center: np.ndarray
    ratio: float
    radii: np.ndarray
    values: np.ndarray
    truncated: bool


@dataclass
class HolderReport:
    center: np.ndarray
    ratio: float
    sequence: np.ndarray
    alpha: float
    C: float
    residual: float

    def summary(self) -> dict:
        return {"center": [float(c) for c in self.center], "ratio": float(self.ratio),
                "sequence": [float(s) for s in self.sequence], "alpha": float(self.alpha),
                "C": float(self.C), "residual": float(self.residual)}


def _cube_integral(vals, half_width, d):
    """Node mean times the cube volume, exact for constants at any resolution."""
    return float(np.mean(vals)) * (2.0 * half_width) ** d


def _ld_norm(u: GridFunction, R: Region, p: float) -> float:
    vals = u.values[R.mask(u.grid)]
    if vals.size == 0:
        return 0.0
    if R.kind == "cube":
        return _cube_integral(np.abs(vals) ** p, R.radius, u.grid.d) ** (1.0 / p)
    return float((np.sum(np.abs(vals) ** p) * u.grid.cell_volume) ** (1.0 / p))


def harnack_ratio(u: GridFunction, f: GridFunction, l: float, eps: float, center=None) -> float:
    """Scaled weak Harnack ratio at one scale; ``0/0`` counts as ``0``."""
    d = u.grid.d
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    rho = l / (9.0 * math.sqrt(d))
    inner = Region.cube(c, rho, closed=True)
    outer = Region.cube(c, l, closed=True)
    m = inner.mask(u.grid)
    if not m.any():
        raise ValueError(f"scale {l} is not resolved by the grid")
    vals = u.values[m]
    num = (_cube_integral(vals ** eps, rho, d) / rho ** d) ** (1.0 / eps)
    den = float(vals.min()) + l * _ld_norm(f, outer, d)
    if num == 0.0:
        return 0.0
    if den <= 0.0:
        return math.inf
    return float(num / den)


def weak_harnack_check(u: GridFunction, f: GridFunction, scales, eps_grid=EPS3_SWEEP,
                       center=None, spread_bound: float = 5.0) -> HarnackReport:
    """Harnack ratios over scales and candidate exponents.

    The reported exponent is the largest one whose ratios stay within
    ``spread_bound`` (max over min across scales); if none does, the one with
    the smallest spread.

    Raises
    ------
    ValueError
        If ``u`` is negative on the largest outer cube.
    """
    d = u.grid.d
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    big = Region.cube(c, max(scales), closed=True)
    if u.values[big.mask(u.grid)].min(initial=0.0) < 0:
        raise ValueError("u must be nonnegative on the outer cube")
    ratios, spreads = {}, {}
    for e in eps_grid:
        r = [harnack_ratio(u, f, l, e, c) for l in scales]
        ratios[e] = r
        pos = [x for x in r if x > 0]
        spreads[e] = (max(pos) / min(pos)) if pos else 1.0
    good = [e for e in eps_grid if spreads[e] <= spread_bound]
    best = max(good) if good else min(eps_grid, key=lambda e: spreads[e])
    return HarnackReport(list(scales), ratios, best, max(ratios[best]), spreads[best], spreads)


def superlevel_decay(u: GridFunction, f: GridFunction, l: float, eps: float, t_grid=None,
                     center=None):
    """Measures ``|{u > t} cap B_l|`` against ``l^d (inf_{B_l} u + l ||f||_{L^d(B_2l)})^e t^-e``.

    Returns ``(table, C)`` where ``table`` rows are ``(t, measure, shape)`` and
    ``C`` is the smallest constant with ``measure <= C shape`` on the grid of
    levels.  The default levels scale with ``u``, so ``C`` is unchanged when
    ``u`` and ``f`` are multiplied by the same positive factor.
    """
    d = u.grid.d
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    ball = Region.ball(c, l)
    m = ball.mask(u.grid)
    if not m.any():
        raise ValueError("the ball is not resolved by the grid")
    big = Region.ball(c, 2 * l).mask(u.grid)
    if u.values[big].min(initial=0.0) < 0:
        raise ValueError("u must be nonnegative on the doubled ball")
    vals = u.values[m]
    top = float(vals.max())
    if t_grid is None:
        t_grid = np.geomspace(1e-3 * top, 2.0 * top, 48) if top > 0 else np.array([1.0])
    t_grid = np.asarray(t_grid, dtype=float)
    meas = np.array([(vals > t).sum() * u.grid.cell_volume for t in t_grid])
    base = float(vals.min()) + l * _ld_norm(f, Region.ball(c, 2 * l), d)
    shape = l ** d * base ** eps * t_grid ** (-eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(meas > 0, meas / shape, 0.0)
    C = float(np.max(q)) if len(q) else 0.0
    return np.column_stack([t_grid, meas, shape]), C


def oscillation_sequence(u: GridFunction, center, ratio: float = 8.0, kmax: int = 4,
                         radius0: float = 1.0) -> OscillationSeries:
    """``osc(u, B_k)`` on nested balls of radius ``radius0 ratio^-k`` around ``center``.

    Membership is by node distance.  Balls with fewer than five nodes across
    are dropped and the series is flagged as truncated.
    """
    if ratio <= 1:
        raise ValueError("ratio must exceed 1")
    g = u.grid
    c = np.asarray(center, dtype=float).reshape(g.d)
    dist = np.linalg.norm(g.nodes() - c, axis=1)
    radii, vals = [], []
    truncated = False
    for k in range(kmax + 1):
        rad = radius0 * ratio ** (-k)
        if 2 * rad / g.h < 4:
            truncated = True
            break
        m = dist < rad
        v = u.values[m]
        radii.append(rad)
        vals.append(float(v.max() - v.min()))
    if truncated:
        warnings.warn(f"oscillation sequence truncated at k = {len(vals) - 1}; refine the grid",
                      stacklevel=2)
    return OscillationSeries(c, ratio, np.array(radii), np.array(vals), truncated)


def holder_fit(seq, ratio: float | None = None):
    """Least-squares ``log osc_k = log C - alpha k log ratio``.

    Returns ``(alpha, C, residual)`` with ``C`` inflated by a factor 2 and the
    residual the RMS misfit in log space.  Trailing zeros are dropped.
    """
    if isinstance(seq, OscillationSeries):
        ratio = seq.ratio if ratio is None else ratio
        seq = seq.values
    if ratio is None or ratio <= 1:
        raise ValueError("ratio must exceed 1")
    s = np.asarray(seq, dtype=float)
    if np.any(s < 0):
        raise ValueError("oscillations are nonnegative")
    nz = np.flatnonzero(s > 0)
    s = s[: nz[-1] + 1] if len(nz) else s[:0]
    if len(s) < 3 or np.any(s <= 0):
        raise InsufficientDataError("need at least three positive oscillations")
    k = np.arange(len(s))
    y = np.log(s)
    x = -k * math.log(ratio)
    slope, intercept = np.polyfit(x, y, 1)
    res = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    alpha = max(float(slope), 0.0)
    if abs(alpha) < 1e-12:
        alpha = 0.0
    return alpha, 2.0 * math.exp(intercept), res


def holder_report(u: GridFunction, center, ratio: float = 8.0, kmax: int = 4,
                  radius0: float = 1.0) -> HolderReport:
    seq = oscillation_sequence(u, center, ratio, kmax, radius0)
    alpha, C, res = holder_fit(seq)
    return HolderReport(seq.center, ratio, seq.values, alpha, C, res)
