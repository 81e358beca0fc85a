"""Local and nonlocal extremal operators, the Lévy operator and the sup-inf operator.

Functions accept either a :class:`~hjbilab.grid.GridFunction` (derivatives by
central differences at the grid spacing) or any object exposing vectorized
``__call__``, ``gradient`` and ``hessian`` methods (exact derivatives, used for
closed-form barriers and manufactured solutions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import GridFunction
from .kernels import LevyKernel, scale
from .quadrature import QuadratureScheme, LevyRule

DEFAULT_SCHEME = QuadratureScheme()


@dataclass(frozen=True)
class EllipticityParams:
    """Ellipticity bounds ``lam I <= a <= Lam I`` and drift bound ``C0``."""

    lam: float
    Lam: float
    C0: float = 0.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not self.Lam >= self.lam:
            raise ValueError(f"Lam must be at least lam, got Lam={self.Lam} < lam={self.lam}")
        if not self.C0 >= 0:
            raise ValueError(f"C0 must be nonnegative, got {self.C0}")


@dataclass(frozen=True)
class JumpKernel:
    """Kernel with a multiplier field, ``N(x, z) = m(x, z) K(z)`` with ``0 <= m <= 1``."""

    kernel: LevyKernel
    multiplier: Callable | None = None


@dataclass(frozen=True)
class HessianEstimate:
    hessian: np.ndarray
    gradient: np.ndarray
    h: np.ndarray


# -- local Pucci operators ---------------------------------------------------

def _sym_eigvals(X):
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != X.shape[-2]:
        raise ValueError("matrix must be square")
    asym = np.abs(X - np.swapaxes(X, -1, -2)).max(initial=0.0)
    scale_ = np.abs(X).max(initial=0.0)
    if asym > 1e-9 * scale_:
        raise ValueError("matrix is not symmetric")
    d = X.shape[-1]
    if d == 1:
        return X[..., 0, :]
    if d == 2:
        a, b, c = X[..., 0, 0], 0.5 * (X[..., 0, 1] + X[..., 1, 0]), X[..., 1, 1]
        mean = 0.5 * (a + c)
        rad = np.hypot(0.5 * (a - c), b)
        return np.stack([mean - rad, mean + rad], axis=-1)
    return np.linalg.eigvalsh(0.5 * (X + np.swapaxes(X, -1, -2)))


def pucci_local_plus(X, P: EllipticityParams):
    """``Lam * sum(positive eigenvalues) + lam * sum(negative eigenvalues)``."""
    ev = _sym_eigvals(X)
    out = P.Lam * np.maximum(ev, 0).sum(-1) + P.lam * np.minimum(ev, 0).sum(-1)
    return float(out) if np.ndim(out) == 0 else out


def pucci_local_minus(X, P: EllipticityParams):
    ev = _sym_eigvals(X)
    out = P.lam * np.maximum(ev, 0).sum(-1) + P.Lam * np.minimum(ev, 0).sum(-1)
    return float(out) if np.ndim(out) == 0 else out


# -- derivatives -------------------------------------------------------------

def hessian_estimate(u, x, h=None) -> HessianEstimate:
    """Central-difference gradient and symmetrized Hessian at points ``x``.

    Cross terms use the four diagonal neighbours, so the matrix is symmetric
    by construction.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m, d = x.shape
    if h is None:
        h = u.grid.spacing
    h = np.broadcast_to(np.asarray(h, dtype=float), (d,))
    u0 = u(x)
    grad = np.empty((m, d))
    hess = np.empty((m, d, d))
    E = np.eye(d) * h
    plus = [u(x + E[i]) for i in range(d)]
    minus = [u(x - E[i]) for i in range(d)]
    for i in range(d):
        grad[:, i] = (plus[i] - minus[i]) / (2 * h[i])
        hess[:, i, i] = (plus[i] - 2 * u0 + minus[i]) / h[i] ** 2
        for j in range(i + 1, d):
            v = (u(x + E[i] + E[j]) + u(x - E[i] - E[j])
                 - u(x + E[i] - E[j]) - u(x - E[i] + E[j])) / (4 * h[i] * h[j])
            hess[:, i, j] = hess[:, j, i] = v
    return HessianEstimate(hess, grad, h)


def derivatives(u, x):
    """Gradient ``(m, d)`` and Hessian ``(m, d, d)``; exact when ``u`` provides them."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if hasattr(u, "gradient") and hasattr(u, "hessian"):
        return np.asarray(u.gradient(x)), np.asarray(u.hessian(x))
    est = hessian_estimate(u, x)
    return est.gradient, est.hessian


def _check_stencil(u, x):
    if isinstance(u, GridFunction):
        g = u.grid
        lo = np.asarray(g.box.lower) + g.spacing * (1 - 1e-9)
        hi = np.asarray(g.box.upper) - g.spacing * (1 - 1e-9)
        if not np.all((x >= lo) & (x <= hi)):
            raise ValueError("evaluation point lies on or outside the boundary stencil")


def _default_core(u, scheme):
    if isinstance(u, GridFunction):
        return scheme.core_radius(u.grid.h)
    return scheme.inner_radius if scheme.inner_radius is not None else 1e-3


def _rule(u, kernel, comp_radius, quad, inner_radius=None):
    quad = quad or DEFAULT_SCHEME
    if isinstance(quad, LevyRule):
        return quad
    rho = inner_radius if inner_radius is not None else _default_core(u, quad)
    return quad.build(kernel, comp_radius=comp_radius, inner_radius=rho)


def _points(u, x):
    x = np.asarray(x, dtype=float)
    d = u.grid.d if isinstance(u, GridFunction) else getattr(u, "d", None)
    if d is None:
        d = x.shape[-1] if x.ndim >= 1 else 1
    single = x.ndim == 0 or (x.ndim == 1 and (d > 1 or x.size == 1))
    return x.reshape(-1, d), single


def _out(v, single):
    return float(v[0]) if single else v


def nonlocal_parts(u, x, kernel, comp_radius=1.0, quad=None, multiplier=None):
    """``(levy, plus, minus)`` arrays at the points ``x`` for a given kernel."""
    pts, _ = _points(u, x)
    _check_stencil(u, pts)
    rule = _rule(u, kernel, comp_radius, quad)
    grad, hess = derivatives(u, pts)
    return rule.evaluate(u, pts, grad, hess, multiplier)


def levy_apply(u, x, N, r: float = 1.0, quad=None):
    """Compensated Lévy integral against ``N`` with indicator ``1_{B_{1/r}}``.

    ``N`` is a :class:`LevyKernel` or a :class:`JumpKernel`.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    pts, single = _points(u, x)
    jk = N if isinstance(N, JumpKernel) else JumpKernel(N)
    levy, _, _ = nonlocal_parts(u, pts, jk.kernel, 1.0 / r, quad, jk.multiplier)
    return _out(levy, single)


def nonlocal_pucci_plus(u, x, K: LevyKernel, r: float = 1.0, quad=None):
    """``int [compensated increment]^+ K_r``."""
    pts, single = _points(u, x)
    _, plus, _ = nonlocal_parts(u, pts, scale(K, r), 1.0 / r, quad)
    return _out(plus, single)


def nonlocal_pucci_minus(u, x, K: LevyKernel, r: float = 1.0, quad=None):
    """``-int [compensated increment]^- K_r`` (nonpositive)."""
    pts, single = _points(u, x)
    _, _, minus = nonlocal_parts(u, pts, scale(K, r), 1.0 / r, quad)
    return _out(minus, single)


def extremal_residual_minus(u, x, P: EllipticityParams, K: LevyKernel, r: float = 1.0,
                            quad=None):
    """``-P^-(D^2u) - P^-_{K,r}(u) + C0 r |Du|`` at ``x``."""
    pts, single = _points(u, x)
    _check_stencil(u, pts)
    grad, hess = derivatives(u, pts)
    val = -pucci_local_minus(hess, P) + P.C0 * r * np.linalg.norm(grad, axis=1)
    if not K.is_zero:
        rule = _rule(u, scale(K, r), 1.0 / r, quad)
        _, _, minus = rule.evaluate(u, pts, grad, hess)
        val = val - minus
    return _out(np.atleast_1d(val), single)


def extremal_residual_plus(u, x, P: EllipticityParams, K: LevyKernel, r: float = 1.0,
                           quad=None):
    """``P^+(D^2u) + P^+_{K,r}(u) + C0 |Du|``, the operator of the upper barriers."""
    pts, single = _points(u, x)
    _check_stencil(u, pts)
    grad, hess = derivatives(u, pts)
    val = pucci_local_plus(hess, P) + P.C0 * np.linalg.norm(grad, axis=1)
    if not K.is_zero:
        rule = _rule(u, scale(K, r), 1.0 / r, quad)
        _, plus, _ = rule.evaluate(u, pts, grad, hess)
        val = val + plus
    return _out(np.atleast_1d(val), single)


def linear_operator_eval(coef, u, x, kernel: LevyKernel, quad=None):
    """``-tr(a D^2u) - I[u] + b.Du + c u + f`` for one control pair."""
    pts, single = _points(u, x)
    _check_stencil(u, pts)
    grad, hess = derivatives(u, pts)
    a = coef.diffusion_at(pts)
    val = (-np.einsum("mij,mij->m", a, hess) + np.einsum("mi,mi->m", coef.drift_at(pts), grad)
           + coef.discount_at(pts) * u(pts) + coef.source_at(pts))
    if not kernel.is_zero:
        rule = _rule(u, kernel, 1.0, quad)
        levy, _, _ = rule.evaluate(u, pts, grad, hess, coef.jump_multiplier())
        val = val - levy
    return _out(np.atleast_1d(val), single)


def hjbi_eval(prob, u, x, quad=None):
    """``sup_a inf_b`` of the linear operators of ``prob`` applied to ``u`` at ``x``."""
    if not prob.controls:
        raise ValueError("control family is empty")
    pts, single = _points(u, x)
    vals = {}
    for (a, b), coef in prob.controls.items():
        vals[(a, b)] = np.atleast_1d(linear_operator_eval(coef, u, pts, prob.kernel, quad))
    best = None
    for a in prob.a_labels:
        inner = np.min([vals[(a, b)] for b in prob.b_labels], axis=0)
        best = inner if best is None else np.maximum(best, inner)
    return _out(best, single)
