"""Explicit barrier functions and numerical verification of their inequalities.

Four constructions are provided:

``special``
    ``Psi = M (phi - exp(-2 sqrt(d) eta))`` where ``phi = exp(-eta |x|)`` outside
    ``B_{1/3}`` with a smooth radial core.  It satisfies
    ``P^-(D^2 Psi) + P^-_{K,r}(Psi) - C0 |D Psi| >= -C xi`` uniformly in ``r``.
``rescaled``
    ``Psi(x / r0)`` with ``r0 = 1 / (9 sqrt(d))``.
``boundary``
    ``psi_r``, vanishing on ``B_r`` and a strict supersolution of the maximal
    operator on a thin annulus outside it.
``global``
    ``psi_g = 2 - exp(-eta x_1)`` (1 for ``x_1 < 0``) after shifting the domain
    to the right half space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, interpolate as spi, optimize

from .grid import BoxDomain, Region
from .kernels import (LevyKernel, beta_closed, beta_primitive, scale,
                      second_moment_unit_ball, tail_mass)
from .operators import EllipticityParams, pucci_local_minus, pucci_local_plus
from .quadrature import QuadratureScheme

ETA_CEILING = 2.0 ** 40

#: quadrature used for verification of closed-form barriers
VERIFY_SCHEME = QuadratureScheme(inner_radius=0.01, shells=2, nodes_per_shell=4,
                                 angular_nodes=16)


class BarrierConstructionError(RuntimeError):
    pass


# -- closed-form radial functions --------------------------------------------

class RadialFunction:
    """``F(x) = f(|x - c|)`` with exact gradient and Hessian.

    ``f``, ``df`` and ``d2f`` act on arrays of radii; ``df(0)`` must vanish.
    """

    def __init__(self, d, f, df, d2f, center=None):
        self.d = d
        self.f, self.df, self.d2f = f, df, d2f
        self.center = np.zeros(d) if center is None else np.asarray(center, dtype=float)

    def _rho(self, x):
        y = np.atleast_2d(np.asarray(x, dtype=float)).reshape(-1, self.d) - self.center
        return y, np.linalg.norm(y, axis=1)

    def __call__(self, x):
        _, rho = self._rho(x)
        return self.f(rho)

    def gradient(self, x):
        y, rho = self._rho(x)
        safe = np.where(rho > 0, rho, 1.0)
        return (self.df(rho) / safe)[:, None] * y

    def hessian(self, x):
        y, rho = self._rho(x)
        d = self.d
        small = rho < 1e-12
        safe = np.where(small, 1.0, rho)
        e = y / safe[:, None]
        f1, f2 = self.df(rho), self.d2f(rho)
        radial = np.einsum("mi,mj->mij", e, e)
        tang = np.eye(d)[None] - radial
        ratio = np.where(small, f2, f1 / safe)
        H = f2[:, None, None] * radial + ratio[:, None, None] * tang
        H[small] = f2[small, None, None] * np.eye(d)
        return H


def _sextic_core(eta: float):
    """Coefficients of ``c0 + c2 t^2 + c4 t^4 + c6 t^6`` (``t = 3 rho``).

    The polynomial matches ``exp(-eta rho)`` and three derivatives at
    ``rho = 1/3``, so the glued profile is ``C^3``.
    """
    a = eta / 3.0
    A = np.array([[1.0, 1.0, 1.0, 1.0],
                  [0.0, 2.0, 4.0, 6.0],
                  [0.0, 2.0, 12.0, 30.0],
                  [0.0, 0.0, 24.0, 120.0]])
    rhs = math.exp(-a) * np.array([1.0, -a, a * a, -a ** 3])
    return np.linalg.solve(A, rhs)


def special_profile(eta: float):
    """``(phi, phi', phi'')`` as vectorized functions of the radius."""
    c0, c2, c4, c6 = _sextic_core(eta)

    def f(rho):
        t = 3.0 * rho
        return np.where(rho >= 1 / 3, np.exp(-eta * rho), c0 + t * t * (c2 + t * t * (c4 + c6 * t * t)))

    def df(rho):
        t = 3.0 * rho
        core = 3.0 * t * (2 * c2 + t * t * (4 * c4 + 6 * c6 * t * t))
        return np.where(rho >= 1 / 3, -eta * np.exp(-eta * rho), core)

    def d2f(rho):
        t = 3.0 * rho
        core = 9.0 * (2 * c2 + t * t * (12 * c4 + 30 * c6 * t * t))
        return np.where(rho >= 1 / 3, eta * eta * np.exp(-eta * rho), core)

    return f, df, d2f


def cutoff_xi(x, d_cut: float = 2.0, scale_: float = 1.0):
    """Smooth bump ``exp(1 - 1/(1 - |2x/d_cut|^2))`` with ``0 <= xi <= 1``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    q = (np.linalg.norm(x / scale_, axis=1) * 2.0 / d_cut) ** 2
    out = np.zeros(len(x))
    inside = q < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - q[inside]))
    return out


# -- barrier specification ---------------------------------------------------

@dataclass
class BarrierSpec:
    """A constructed barrier with its constants and closed-form evaluator.

    Attributes
    ----------
    kind : str
        ``special``, ``rescaled``, ``boundary`` or ``global``.
    eta : float
    d : int
    constants : dict
        ``tau``, ``M``, ``r0``, ``delta1``, ``delta2``, ``eps5``, ``eps6``, ...
        as applicable.
    function : object
        Vectorized evaluator with ``gradient`` and ``hessian``.
    """

    kind: str
    eta: float
    d: int
    constants: dict
    function: object = field(repr=False)

    def __call__(self, x):
        return self.function(x)

    def gradient(self, x):
        return self.function.gradient(x)

    def hessian(self, x):
        return self.function.hessian(x)

    @property
    def sup_norm(self) -> float:
        return float(self.constants["sup_norm"])

    def xi(self, x):
        """Cutoff weight of the special barriers (zero for the others)."""
        if self.kind == "special":
            return cutoff_xi(x)
        if self.kind == "rescaled":
            return cutoff_xi(x, scale_=self.constants["r0"])
        return np.zeros(len(np.atleast_2d(x)))


def special_certificate(eta: float, P: EllipticityParams, J: float, T: float, d: int) -> float:
    """Bracket that makes the exponential profile a subsolution outside ``B_1``."""
    L = math.log(eta)
    return (P.lam * eta ** 2 - P.Lam * (d - 1) * eta - 2.0 * eta ** 1.5 * J
            - 4.0 * eta ** 2 * J / L ** 2 - T - 2.0 * eta ** 2 * J / L - P.C0 * eta)


def build_special(P: EllipticityParams, K: LevyKernel) -> BarrierSpec:
    """Smallest power-of-two ``eta`` passing the certificate, then ``Psi``.

    ``M`` is the smallest power of two with ``Psi >= 2`` on the cube of side 3
    centred at the origin.
    """
    d = K.d
    J, T = second_moment_unit_ball(K), tail_mass(K, 1.0)
    eta = 2.0
    while special_certificate(eta, P, J, T, d) < 0.0:
        eta *= 2.0
        if eta > ETA_CEILING:
            raise BarrierConstructionError(
                f"no admissible eta below 2^40 (J={J:.3g}, T={T:.3g})")
    f, df, d2f = special_profile(eta)
    floor = math.exp(-2.0 * math.sqrt(d) * eta)
    corner = float(f(np.array([1.5 * math.sqrt(d)]))[0])
    if not corner > floor:
        raise BarrierConstructionError("exponential profile underflows on the side-3 cube")
    M = 2.0 ** math.ceil(math.log2(2.0 / (corner - floor)))
    fun = RadialFunction(d, lambda r: M * (f(r) - floor), lambda r: M * df(r),
                         lambda r: M * d2f(r))
    consts = dict(tau=math.log(eta) / (2 * eta), M=M, J=J, T=T,
                  certificate=special_certificate(eta, P, J, T, d),
                  sup_norm=M * max(1.0 - floor, floor), floor=floor)
    return BarrierSpec("special", eta, d, consts, fun)


def rescale_special(B: BarrierSpec) -> BarrierSpec:
    """``Psi(x / r0)`` with ``r0 = 1 / (9 sqrt(d))``."""
    if B.kind != "special":
        raise ValueError("only the special barrier can be rescaled")
    r0 = 1.0 / (9.0 * math.sqrt(B.d))
    g = B.function
    fun = RadialFunction(B.d, lambda r: g.f(r / r0), lambda r: g.df(r / r0) / r0,
                         lambda r: g.d2f(r / r0) / r0 ** 2)
    consts = dict(B.constants, r0=r0)
    return BarrierSpec("rescaled", B.eta, B.d, consts, fun)


# -- boundary barrier ---------------------------------------------------------

class _Profile1D:
    """``psi_tilde`` on ``[0, delta2]`` with exact first and second derivatives."""

    def __init__(self, K: LevyKernel, eta: float, delta2: float):
        self.K, self.eta, self.delta2 = K, eta, delta2
        s = np.union1d(np.linspace(0.0, delta2, 1025), np.geomspace(delta2 * 1e-9, delta2, 400))
        gx, gw = np.polynomial.legendre.leggauss(8)
        a, b = s[:-1], s[1:]
        nodes = 0.5 * (b - a)[:, None] * gx[None] + 0.5 * (b + a)[:, None]
        vals = self.d1(nodes.ravel()).reshape(nodes.shape)
        pieces = (0.5 * (b - a)[:, None] * gw[None] * vals).sum(axis=1)
        values = np.concatenate([[0.0], np.cumsum(pieces)])
        self._spline = spi.CubicHermiteSpline(s, values, self.d1(s))

    def exponent(self, s):
        return self.eta * s + self.eta * beta_primitive(self.K, s)

    def d1(self, s):
        s = np.asarray(s, dtype=float)
        return 2.0 * np.exp(-self.exponent(s.ravel())).reshape(s.shape) - 1.0

    def d2(self, s):
        """Second derivative for ``s > 0`` (it blows up at 0 for singular kernels)."""
        s = np.asarray(s, dtype=float).ravel()
        return -2.0 * self.eta * (1.0 + beta_closed(self.K, s)) * np.exp(-self.exponent(s))

    def __call__(self, s):
        return self._spline(np.clip(s, 0.0, self.delta2))


def _s_of_eta(K, eta):
    """Largest ``s <= 1`` with ``psi_tilde'(s) >= 1/2``."""
    g = lambda s: eta * s + eta * beta_primitive(K, s)[0] - math.log(4.0 / 3.0)
    if g(1.0) <= 0:
        return 1.0
    return optimize.brentq(g, 0.0, 1.0, xtol=1e-15, rtol=1e-13)


def boundary_eta_seed(r: float, P: EllipticityParams, K: LevyKernel) -> float:
    """``(C + 1) / lam`` with ``C`` collecting the curvature, drift and jump bounds."""
    J, T = second_moment_unit_ball(K), tail_mass(K, 1.0)
    C = P.Lam * (K.d - 1) / r + P.C0 + 2.0 * (J + T)
    return (C + 1.0) / P.lam


def boundary_barrier_with_eta(r: float, eta: float, K: LevyKernel) -> BarrierSpec:
    s_eta = _s_of_eta(K, eta)
    delta2 = 0.5 * s_eta
    if not delta2 > 1e-12:
        raise BarrierConstructionError("psi_tilde' drops below 1/2 immediately")
    delta1 = min(delta2 / 4.0, 1.0)
    prof = _Profile1D(K, eta, delta2)
    eps5 = float(prof(delta1))
    top = float(prof(delta2))

    def f(rho):
        s = np.maximum(rho - r, 0.0) / r
        return np.where(rho <= r, 0.0, prof(s))

    def df(rho):
        s = (rho - r) / r
        inside = (s > 0) & (s < delta2)
        out = np.zeros_like(rho)
        out[inside] = prof.d1(s[inside]) / r
        return out

    def d2f(rho):
        s = (rho - r) / r
        inside = (s > 0) & (s < delta2)
        out = np.zeros_like(rho)
        out[inside] = prof.d2(s[inside]) / r ** 2
        return out

    fun = RadialFunction(K.d, f, df, d2f)
    consts = dict(r=r, delta2=delta2, delta1=delta1, eps5=eps5, s_eta=s_eta,
                  sup_norm=top, lipschitz=1.0 / r)
    spec = BarrierSpec("boundary", eta, K.d, consts, fun)
    spec.profile = prof
    return spec


def build_boundary_barrier(r: float, P: EllipticityParams, K: LevyKernel,
                           quad: QuadratureScheme | None = None, n_check: int = 64,
                           max_doublings: int = 12) -> BarrierSpec:
    """Boundary barrier for the ball ``B_r``.

    ``eta`` starts at :func:`boundary_eta_seed` and doubles until a numerical
    check on ``n_check`` radial samples in the annulus gives ``<= -1``.
    """
    if not 0 < r < 1:
        raise ValueError("boundary barrier radius must lie in (0, 1)")
    eta = boundary_eta_seed(r, P, K)
    for _ in range(max_doublings + 1):
        B = boundary_barrier_with_eta(r, eta, K)
        pts = annulus_samples(B, n_check, seed=0)
        rep = verify_inequality(B, "supersolution-plus", None, P, K, 1.0, quad, samples=pts)
        if rep.passed:
            B.constants["seed_eta"] = boundary_eta_seed(r, P, K)
            return B
        eta *= 2.0
    raise BarrierConstructionError("boundary barrier check failed after eta doublings")


def annulus_samples(B: BarrierSpec, n: int, seed: int = 0) -> np.ndarray:
    """Points with ``0 < d(x, B_r)/r < delta1``; radial offsets are log-spread."""
    r, delta1 = B.constants["r"], B.constants["delta1"]
    rng = np.random.default_rng(seed)
    s = delta1 * np.geomspace(1e-3, 1.0, n, endpoint=False)
    dirs = rng.normal(size=(n, B.d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return (r * (1.0 + s))[:, None] * dirs


# -- global barrier ------------------------------------------------------------

class _GlobalFunction:
    """``psi_g - shift``; increments do not depend on the additive shift."""

    def __init__(self, d, eta, offset, shift=0.0):
        self.d, self.eta, self.offset, self.shift = d, eta, offset, shift

    def shifted(self, shift):
        return _GlobalFunction(self.d, self.eta, self.offset, shift)

    def _t(self, x):
        return np.atleast_2d(np.asarray(x, dtype=float)).reshape(-1, self.d)[:, 0] - self.offset

    def __call__(self, x):
        t = self._t(x)
        base = 2.0 - self.shift
        return np.where(t >= 0, base - np.exp(-self.eta * np.maximum(t, 0.0)), 1.0 - self.shift)

    def gradient(self, x):
        t = self._t(x)
        g = np.zeros((len(t), self.d))
        g[:, 0] = np.where(t > 0, self.eta * np.exp(-self.eta * np.maximum(t, 0.0)), 0.0)
        return g

    def hessian(self, x):
        t = self._t(x)
        H = np.zeros((len(t), self.d, self.d))
        H[:, 0, 0] = np.where(t > 0, -self.eta ** 2 * np.exp(-self.eta * np.maximum(t, 0.0)), 0.0)
        return H


def global_certificate(eta, P, J, T, tau):
    return -P.lam * eta ** 2 + P.C0 * eta + 2.0 * eta / tau * J + T


def _domain_extent(omega):
    if isinstance(omega, BoxDomain):
        return omega.center, omega.diam, 0.5 * (omega.upper[0] - omega.lower[0])
    if isinstance(omega, Region) and omega.kind in ("ball", "cube"):
        c = np.asarray(omega.center)
        return c, omega.diam, omega.radius
    if isinstance(omega, Region) and omega.kind == "box":
        b = BoxDomain(omega.lower, omega.upper)
        return b.center, b.diam, 0.5 * (b.upper[0] - b.lower[0])
    raise ValueError("global barrier needs a box or ball domain")


def build_global_barrier(omega, P: EllipticityParams, K: LevyKernel) -> BarrierSpec:
    """``psi_g`` for ``omega`` in its own coordinates.

    The half-space edge sits at ``x_1 = c_1 - 2 R0`` where ``c`` is the centre of
    ``omega`` and ``R0`` its diameter, so ``omega`` lies in ``B_{R0}`` of a point
    at distance ``2 R0`` from the edge.
    """
    center, R0, half = _domain_extent(omega)
    tau = min(1.0, R0)
    J, T = second_moment_unit_ball(K), tail_mass(K, 1.0)
    eta = 1.0
    while global_certificate(eta, P, J, T, tau) >= 0.0:
        eta *= 2.0
        if eta > ETA_CEILING:
            raise BarrierConstructionError("no admissible eta below 2^40 for the global barrier")
    offset = float(center[0] - 2.0 * R0)
    x1_max = 2.0 * R0 + half
    bracket = global_certificate(eta, P, J, T, tau)
    eps6 = math.exp(-eta * x1_max) * abs(bracket)
    fun = _GlobalFunction(K.d, eta, offset)
    consts = dict(tau=tau, R0=R0, offset=offset, x1_max=x1_max, eps6=eps6,
                  bracket=bracket, J=J, T=T, sup_norm=2.0)
    return BarrierSpec("global", eta, K.d, consts, fun)


# -- verification --------------------------------------------------------------

@dataclass
class VerificationReport:
    """Per-point residual margins of a checked inequality.

    ``margins[i] >= -budgets[i]`` at every point is the pass condition; the
    budget is the Richardson estimate of the quadrature error plus ``1e-8``.
    """

    points: np.ndarray
    scales: np.ndarray
    residuals: np.ndarray
    margins: np.ndarray
    budgets: np.ndarray
    constant: float
    passed: bool
    form: str = ""
    per_scale_constant: dict = field(default_factory=dict)

    @property
    def worst_margin(self) -> float:
        return float(self.margins.min()) if self.margins.size else math.inf

    @property
    def worst_slack(self) -> float:
        return float((self.margins + self.budgets).min()) if self.margins.size else math.inf

    def summary(self) -> dict:
        return dict(form=self.form, n_points=int(self.margins.size), passed=bool(self.passed),
                    worst_margin=self.worst_margin, worst_slack=self.worst_slack,
                    constant=float(self.constant), max_residual=float(self.residuals.max()),
                    min_residual=float(self.residuals.min()),
                    per_scale_constant={str(k): float(v) for k, v in self.per_scale_constant.items()})


def _extremal_values(B, pts, P, K, r, scheme, form, core=None):
    """Local plus nonlocal extremal operator of the barrier at ``pts``."""
    grad = B.gradient(pts)
    hess = B.hessian(pts)
    fun = B.function
    if B.kind == "global":
        # psi_g is close to 2 where the residual is tiny; work with psi_g - 2
        fun = fun.shifted(2.0)
    gnorm = np.linalg.norm(grad, axis=1)
    Ks = scale(K, r)
    if form == "subsolution-minus":
        local = pucci_local_minus(hess, P) - P.C0 * gnorm
    else:
        local = pucci_local_plus(hess, P) + P.C0 * gnorm
    if K.is_zero:
        return np.atleast_1d(local)
    out = np.empty(len(pts))
    if core is None:
        rule = scheme.build(Ks, comp_radius=1.0 / r)
        _, plus, minus = rule.evaluate(fun, pts, grad, hess)
        nl = minus if form == "subsolution-minus" else plus
        return np.atleast_1d(local) + nl
    # point-dependent core radius (kinked barriers)
    for i, rho in enumerate(core):
        rule = scheme.build(Ks, comp_radius=1.0 / r, inner_radius=rho)
        _, plus, minus = rule.evaluate(fun, pts[i:i + 1], grad[i:i + 1], hess[i:i + 1])
        out[i] = (minus if form == "subsolution-minus" else plus)[0]
    return np.atleast_1d(local) + out


def _kink_core(B, pts):
    if B.kind != "boundary":
        return None
    r = B.constants["r"]
    dist = np.abs(np.linalg.norm(pts, axis=1) - r)
    outer = np.abs(np.linalg.norm(pts, axis=1) - r * (1 + B.constants["delta2"]))
    return 0.25 * np.minimum(dist, outer)


def _residual_with_budget(B, pts, P, K, r, quad, form):
    quad = quad or VERIFY_SCHEME
    core = _kink_core(B, pts)
    coarse = _extremal_values(B, pts, P, K, r, quad, form, core)
    if K.is_zero:
        return coarse, np.full(len(pts), 1e-8)
    fine_core = None if core is None else 0.5 * core
    fine = _extremal_values(B, pts, P, K, r, quad.refined(), form, fine_core)
    return fine, np.abs(fine - coarse) + 1e-8


def verify_inequality(B: BarrierSpec, form: str, region, P: EllipticityParams, K: LevyKernel,
                      r: float = 1.0, quad: QuadratureScheme | None = None, samples=None,
                      target: float | None = None, n_samples: int = 1000, seed: int = 0
                      ) -> VerificationReport:
    """Check a one-sided extremal inequality of a barrier at sample points.

    Parameters
    ----------
    form : {"supersolution-plus", "subsolution-minus"}
        ``supersolution-plus`` checks ``P^+ + P^+_{K,r} + C0|D| <= target``;
        ``subsolution-minus`` checks ``P^- + P^-_{K,r} - C0|D| >= target``.
    region : Region or None
        Sampling region; ignored when ``samples`` is given.  For boundary
        barriers ``None`` means the annulus ``r < |x| < (1 + delta1) r``.
    target : float, optional
        Defaults to ``-1`` (boundary), ``-eps6`` (global) or ``0``.
    """
    if form not in ("supersolution-plus", "subsolution-minus"):
        raise ValueError(f"unknown inequality form {form!r}")
    if samples is None:
        if region is None and B.kind == "boundary":
            samples = annulus_samples(B, n_samples, seed)
        elif region is None:
            raise ValueError("a sampling region or explicit samples are required")
        else:
            samples = sample_region(region, B.d, n_samples, seed)
    pts = np.atleast_2d(np.asarray(samples, dtype=float)).reshape(-1, B.d)
    if target is None:
        target = {"boundary": -1.0, "global": -B.constants.get("eps6", 0.0)}.get(B.kind, 0.0)
    res, budget = _residual_with_budget(B, pts, P, K, r, quad, form)
    margins = (target - res) if form == "supersolution-plus" else (res - target)
    passed = bool(np.all(margins >= -budget))
    return VerificationReport(pts, np.full(len(pts), r), res, margins, budget,
                              constant=float(target), passed=passed, form=form)


def special_samples(d: int, n: int, K: LevyKernel, seed: int = 0, r0: float = 1.0) -> np.ndarray:
    """Sample points for the special barrier: half in ``Q_1``, the rest outward."""
    rng = np.random.default_rng(seed)
    n_in = n // 2
    inner = rng.uniform(-1.0, 1.0, size=(n_in, d))
    reach = 2.0 * math.sqrt(d) + min(K.support_radius(), 4.0) + 1.0
    radii = np.geomspace(0.5, reach, n - n_in)
    dirs = rng.normal(size=(n - n_in, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return r0 * np.vstack([inner, radii[:, None] * dirs])


def verify_special(B: BarrierSpec, P: EllipticityParams, K: LevyKernel, scales, sample,
                   quad: QuadratureScheme | None = None) -> VerificationReport:
    """Check ``P^- + P^-_{K,r} - C0|D| >= -C xi`` with one ``C`` for all scales.

    The empirical ``C`` is the largest ratio ``-(residual + budget) / xi`` over
    points where ``xi > 0``.  Points where ``xi = 0`` must satisfy the
    inequality with ``C`` absent, i.e. residual ``>= -budget``.
    """
    if B.kind not in ("special", "rescaled"):
        raise ValueError("verify_special needs a special or rescaled barrier")
    pts = np.atleast_2d(np.asarray(sample, dtype=float)).reshape(-1, B.d)
    xi = B.xi(pts)
    all_pts, all_r, all_res, all_budget, all_xi = [], [], [], [], []
    per_scale = {}
    for r in scales:
        res, budget = _residual_with_budget(B, pts, P, K, float(r), quad, "subsolution-minus")
        deficit = np.maximum(-(res + budget), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(xi > 0, deficit / np.where(xi > 0, xi, 1.0), 0.0)
        per_scale[float(r)] = float(ratio.max(initial=0.0))
        all_pts.append(pts)
        all_r.append(np.full(len(pts), float(r)))
        all_res.append(res)
        all_budget.append(budget)
        all_xi.append(xi)
    res = np.concatenate(all_res)
    budget = np.concatenate(all_budget)
    xis = np.concatenate(all_xi)
    # inflate slightly so the maximizing point is not lost to rounding
    C = max(per_scale.values(), default=0.0) * (1.0 + 1e-9)
    margins = res + C * xis
    passed = bool(np.all(margins >= -budget)) and math.isfinite(C)
    return VerificationReport(np.vstack(all_pts), np.concatenate(all_r), res, margins, budget,
                              constant=C, passed=passed, form="subsolution-minus",
                              per_scale_constant=per_scale)


def sample_region(region: Region, d: int, n: int, seed: int = 0) -> np.ndarray:
    """Seeded uniform samples inside a region by rejection from its bounding box."""
    rng = np.random.default_rng(seed)
    if region.kind in ("ball", "cube", "annulus"):
        c = np.asarray(region.center)
        lo, hi = c - region.radius, c + region.radius
    elif region.kind == "box":
        lo, hi = np.asarray(region.lower), np.asarray(region.upper)
    else:
        raise ValueError("cannot sample a custom region without a bounding box")
    out = []
    count = 0
    while count < n:
        cand = rng.uniform(lo, hi, size=(max(2 * n, 64), d))
        keep = cand[region.contains(cand)]
        out.append(keep)
        count += len(keep)
    return np.vstack(out)[:n]
