"""Closed-form test functions with exact derivatives."""

from __future__ import annotations

import numpy as np


class ClosedForm:
    """A smooth function on ``R^d`` given by vectorized callables.

    Parameters
    ----------
    d : int
    value, gradient, hessian : callable
        ``(m, d) -> (m,)``, ``(m, d)`` and ``(m, d, d)`` respectively.
    """

    def __init__(self, d, value, gradient, hessian, name=""):
        self.d = d
        self._v, self._g, self._h = value, gradient, hessian
        self.name = name

    def _pts(self, x):
        return np.atleast_2d(np.asarray(x, dtype=float)).reshape(-1, self.d)

    def __call__(self, x):
        return self._v(self._pts(x))

    def gradient(self, x):
        return self._g(self._pts(x))

    def hessian(self, x):
        return self._h(self._pts(x))

    def scaled(self, factor: float) -> "ClosedForm":
        return ClosedForm(self.d, lambda p: factor * self._v(p), lambda p: factor * self._g(p),
                          lambda p: factor * self._h(p), self.name)


def quadratic(d, A=None, b=None, c=0.0) -> ClosedForm:
    """``x^T A x / 2 + b.x + c``."""
    A = np.eye(d) if A is None else np.asarray(A, dtype=float)
    b = np.zeros(d) if b is None else np.asarray(b, dtype=float)
    return ClosedForm(d, lambda p: 0.5 * np.einsum("mi,ij,mj->m", p, A, p) + p @ b + c,
                      lambda p: p @ A.T + b,
                      lambda p: np.broadcast_to(A, (len(p), d, d)).copy(), "quadratic")


def gaussian(d, width=1.0, amplitude=1.0, center=None) -> ClosedForm:
    """``amplitude * exp(-|x - c|^2 / width^2)``."""
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    s = 1.0 / width ** 2

    def v(p):
        y = p - c
        return amplitude * np.exp(-s * np.einsum("mi,mi->m", y, y))

    def g(p):
        return (-2.0 * s * v(p))[:, None] * (p - c)

    def h(p):
        y = p - c
        e = v(p)
        return (4.0 * s * s * e)[:, None, None] * np.einsum("mi,mj->mij", y, y) \
            - (2.0 * s * e)[:, None, None] * np.eye(d)[None]

    return ClosedForm(d, v, g, h, "gaussian")


def cosine_product(d, k=np.pi / 2, amplitude=1.0) -> ClosedForm:
    """``amplitude * prod cos(k x_i)``, bounded and smooth on all of ``R^d``."""

    def v(p):
        return amplitude * np.prod(np.cos(k * p), axis=1)

    def g(p):
        c, s = np.cos(k * p), np.sin(k * p)
        out = np.empty_like(p)
        for i in range(d):
            out[:, i] = -k * s[:, i] * np.prod(np.delete(c, i, axis=1), axis=1)
        return amplitude * out

    def h(p):
        c, s = np.cos(k * p), np.sin(k * p)
        out = np.empty((len(p), d, d))
        for i in range(d):
            for j in range(d):
                if i == j:
                    out[:, i, i] = -k * k * np.prod(c, axis=1)
                else:
                    rest = np.prod(np.delete(c, [i, j], axis=1), axis=1) if d > 2 else 1.0
                    out[:, i, j] = k * k * s[:, i] * s[:, j] * rest
        return amplitude * out

    return ClosedForm(d, v, g, h, "cosine")
