"""Monotone discretization of the Dirichlet problem and three solution drivers.

The discrete equation at an interior node ``x`` and control pair ``(a, b)`` is

    F_ab(u)(x) = (L_ab u)(x) + q_ab(x),

where ``L_ab`` acts on the unknown interior values and ``q_ab`` collects the
source and every contribution of the exterior data ``g``.  The sup-inf
equation is ``max_a min_b F_ab(u) = 0``.  Assembly certifies that every
``L_ab`` has nonpositive off-diagonal entries (positive type), which is what
the monotone iterations rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as spla

from .grid import BoxDomain, Grid, GridFunction, Region, _cell_weights
from .kernels import LevyKernel
from .operators import EllipticityParams, derivatives
from .quadrature import QuadratureScheme

CHUNK_ENTRIES = 2_000_000
DENSE_LIMIT = 8192
SPARSE_DIRECT_NNZ = 1_000_000

#: assembly default: core radius ``h^(1/2) / 2``
ASSEMBLY_SCHEME = QuadratureScheme(inner_radius_cells=0.5, core_exponent=0.5)


class MonotonicityError(ValueError):
    """Assembled stencil has a positive off-diagonal weight."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=math.nan):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class OrderingError(RuntimeError):
    """Monotone iteration lost its ordering; the assembly is not monotone."""


def _field(value, shape_tail):
    """Turn a constant or callable into a vectorized evaluator."""
    if callable(value):
        return value
    arr = np.asarray(value, dtype=float)
    return lambda p: np.broadcast_to(arr, (len(p), *shape_tail)).copy()


@dataclass
class ControlCoefficients:
    """Coefficients of one linear operator ``-tr(a D^2) - I_N + b.D + c + f``.

    Each field is a constant or a vectorized callable of the points.  A scalar
    diffusion means ``a I``.  ``jump`` is the multiplier ``m(x, z)`` in
    ``N = m K``: a constant in ``[0, 1]`` or a callable ``(x, z) -> (m, n)``.
    """

    diffusion: object = 1.0
    drift: object = 0.0
    discount: object = 0.0
    source: object = 0.0
    jump: object = 1.0

    def diffusion_at(self, p):
        p = np.atleast_2d(p)
        m, d = p.shape
        a = np.asarray(self.diffusion(p) if callable(self.diffusion) else self.diffusion, dtype=float)
        if a.ndim == 0:
            a = a * np.eye(d)
        elif a.ndim == 1:
            # one scalar per point
            a = a[:, None, None] * np.eye(d)
        return np.broadcast_to(a, (m, d, d)).copy()

    def drift_at(self, p):
        p = np.atleast_2d(p)
        b = np.asarray(self.drift(p) if callable(self.drift) else self.drift, dtype=float)
        if b.ndim == 1 and b.shape[0] == len(p) and p.shape[1] == 1:
            b = b[:, None]
        return np.broadcast_to(b, p.shape).copy()

    def discount_at(self, p):
        p = np.atleast_2d(p)
        return np.broadcast_to(_field(self.discount, ())(p), (len(p),)).astype(float)

    def source_at(self, p):
        p = np.atleast_2d(p)
        return np.broadcast_to(_field(self.source, ())(p), (len(p),)).astype(float)

    def jump_multiplier(self):
        if callable(self.jump):
            return self.jump
        m = float(self.jump)
        if m == 1.0:
            return None
        return lambda x, z: np.full((len(x), len(z)), m)

    def replace(self, **kw) -> "ControlCoefficients":
        data = dict(diffusion=self.diffusion, drift=self.drift, discount=self.discount,
                    source=self.source, jump=self.jump)
        data.update(kw)
        return ControlCoefficients(**data)


@dataclass
class HJBIProblem:
    """Dirichlet problem for the sup-inf operator on a box or ball.

    Parameters
    ----------
    domain : BoxDomain or Region
        ``Omega``; a Region must be a ball.
    kernel : LevyKernel
        The majorant ``K``; each pair uses ``N_ab = m_ab K``.
    controls : dict
        ``{(a, b): ControlCoefficients}`` over the full product ``A x B``.
    exterior : callable
        ``g``, vectorized, used on the whole complement of ``Omega``.
    params : EllipticityParams
    """

    domain: object
    kernel: LevyKernel
    controls: dict
    exterior: Callable
    params: EllipticityParams
    a_labels: list = field(init=False)
    b_labels: list = field(init=False)

    def __post_init__(self):
        if not self.controls:
            raise ValueError("control family is empty")
        self.a_labels = list(dict.fromkeys(k[0] for k in self.controls))
        self.b_labels = list(dict.fromkeys(k[1] for k in self.controls))
        missing = [(a, b) for a in self.a_labels for b in self.b_labels if (a, b) not in self.controls]
        if missing:
            raise ValueError(f"control pairs missing from the product family: {missing}")
        if isinstance(self.domain, Region) and self.domain.kind not in ("ball", "box"):
            raise ValueError("domain must be a box or a ball")

    @property
    def d(self) -> int:
        return self.kernel.d

    def interior_mask(self, grid: Grid) -> np.ndarray:
        nodes = grid.nodes()
        if isinstance(self.domain, BoxDomain):
            return self.domain.contains(nodes, strict=True)
        return self.domain.contains(nodes)

    def with_sources(self, sources: dict) -> "HJBIProblem":
        ctrl = {k: c.replace(source=sources[k]) for k, c in self.controls.items()}
        return HJBIProblem(self.domain, self.kernel, ctrl, self.exterior, self.params)

    def validate(self, grid: Grid, require_nonneg_discount: bool = False, n_jump_samples: int = 64):
        """Check ellipticity, drift bound, discount sign and multiplier range at the nodes."""
        P = self.params
        pts = grid.nodes()[self.interior_mask(grid)]
        rng = np.random.default_rng(0)
        for key, c in self.controls.items():
            a = c.diffusion_at(pts)
            if np.abs(a - np.swapaxes(a, 1, 2)).max(initial=0.0) > 1e-12:
                raise ValueError(f"diffusion of control {key} is not symmetric")
            ev = np.linalg.eigvalsh(a)
            tol = 1e-12 * max(1.0, P.Lam)
            if ev.min() < P.lam - tol or ev.max() > P.Lam + tol:
                raise ValueError(f"diffusion of control {key} violates lam I <= a <= Lam I "
                                 f"(eigenvalues in [{ev.min():.4g}, {ev.max():.4g}])")
            bn = np.linalg.norm(c.drift_at(pts), axis=1)
            if bn.max(initial=0.0) > P.C0 + 1e-12:
                raise ValueError(f"drift of control {key} exceeds C0 = {P.C0}")
            if require_nonneg_discount and c.discount_at(pts).min(initial=0.0) < 0:
                raise ValueError(f"discount of control {key} is negative")
            mult = c.jump_multiplier()
            if mult is not None and len(pts):
                z = rng.normal(size=(n_jump_samples, self.d))
                m = mult(pts[: min(len(pts), 256)], z)
                if m.min() < 0 or m.max() > 1:
                    raise ValueError(f"jump multiplier of control {key} leaves [0, 1]")


class DiscreteOperator:
    """Assembled per-pair sparse operators ``L_ab`` and constant vectors ``q_ab``."""

    def __init__(self, prob, grid, unknown, known_values, mats, consts, source_norm, rule,
                 precs=None):
        self.prob = prob
        self.grid = grid
        self.unknown = unknown
        self.known_values = known_values
        self.pairs = list(prob.controls)
        self.mats = mats
        self.consts = consts
        self.rule = rule
        self.a_labels = prob.a_labels
        self.b_labels = prob.b_labels
        self.diag = {k: m.diagonal() for k, m in mats.items()}
        self.max_diag = np.max([self.diag[k] for k in self.pairs], axis=0)
        self.source_norm = source_norm
        # local stencil plus nonlocal diagonal, a cheap preconditioner
        self.precs = precs or mats

    @property
    def n(self) -> int:
        return len(self.unknown)

    def default_tol(self) -> float:
        return 1e-8 * (1.0 + self.source_norm)

    def pair_residuals(self, v) -> np.ndarray:
        """Array ``(n_a, n_b, n)`` of ``L_ab v + q_ab``."""
        out = np.empty((len(self.a_labels), len(self.b_labels), self.n))
        for i, a in enumerate(self.a_labels):
            for j, b in enumerate(self.b_labels):
                out[i, j] = self.mats[(a, b)] @ v + self.consts[(a, b)]
        return out

    def residual(self, v) -> np.ndarray:
        return self.pair_residuals(v).min(axis=1).max(axis=0)

    def interior_values(self, u) -> np.ndarray:
        if isinstance(u, GridFunction):
            return u.values[self.unknown]
        return np.asarray(u(self.grid.nodes()[self.unknown]), dtype=float)

    def to_grid_function(self, v) -> GridFunction:
        vals = self.known_values.copy()
        vals[self.unknown] = v
        return GridFunction(self.grid, vals, self.prob.exterior)

    def stability_bound(self) -> float:
        return 1.0 / float(self.max_diag.max())


# -- assembly ------------------------------------------------------------------

def _local_entries(a, b, c, h, d, strides, rows, nodes_idx, drift_mode):
    """COO triplets (row, lattice column, value) of the local stencil."""
    R, C, V = [rows], [nodes_idx], [c.copy()]
    for i in range(d):
        aii = a[:, i, i] / h[i] ** 2
        if drift_mode == "upwind":
            bp, bm = np.maximum(b[:, i], 0) / h[i], np.minimum(b[:, i], 0) / h[i]
            plus_w = -aii + bm
            minus_w = -aii - bp
            centre = 2 * aii + bp - bm
        else:
            half = b[:, i] / (2 * h[i])
            plus_w = -aii + half
            minus_w = -aii - half
            centre = 2 * aii
        R += [rows, rows]
        C += [nodes_idx + strides[i], nodes_idx - strides[i]]
        V += [plus_w, minus_w]
        V[0] = V[0] + centre
    for i in range(d):
        for j in range(i + 1, d):
            aij = a[:, i, j]
            w = np.abs(aij) / (h[i] * h[j])
            sgn = np.where(aij >= 0, 1, -1)
            # diagonal pair along (e_i + sgn e_j), axial corrections
            R += [rows] * 6
            C += [nodes_idx + strides[i] + sgn * strides[j], nodes_idx - strides[i] - sgn * strides[j],
                  nodes_idx + strides[i], nodes_idx - strides[i],
                  nodes_idx + strides[j], nodes_idx - strides[j]]
            V += [-w, -w, w, w, w, w]
            V[0] = V[0] - 2 * w
    return np.concatenate(R), np.concatenate(C), np.concatenate(V)


def discretize(prob: HJBIProblem, grid: Grid, quad: QuadratureScheme | None = None,
               drift: str = "central", validate: bool = True) -> DiscreteOperator:
    """Assemble the monotone scheme on ``grid``.

    Parameters
    ----------
    drift : {"central", "upwind"}
        Central differences are second order but need ``h |b_i| <= 2 a_ii``.

    Raises
    ------
    MonotonicityError
        Names the first node and control pair with a positive off-diagonal
        weight.
    """
    if grid.d != prob.d:
        raise ValueError("grid and problem dimensions differ")
    if drift not in ("central", "upwind"):
        raise ValueError("drift must be 'central' or 'upwind'")
    if validate:
        prob.validate(grid)
    quad = quad or ASSEMBLY_SCHEME
    d = grid.d
    h = grid.spacing
    shape = np.asarray(grid.shape)
    strides = np.array([int(np.prod(shape[k + 1:])) for k in range(d)], dtype=np.int64)
    nodes = grid.nodes()
    mask = prob.interior_mask(grid)
    # local stencils must stay on the lattice
    if np.any(mask & grid.boundary_mask()):
        raise ValueError("interior nodes touch the grid boundary; enlarge the grid box")
    unknown = np.flatnonzero(mask)
    n = len(unknown)
    pos = np.full(grid.size, -1, dtype=np.int64)
    pos[unknown] = np.arange(n)
    known_values = np.zeros(grid.size)
    known_values[~mask] = prob.exterior(nodes[~mask])
    xs = nodes[unknown]

    K = prob.kernel
    rule = None
    if not K.is_zero:
        rule = quad.build(K, comp_radius=1.0, h=grid.h)

    mats, consts, precs = {}, {}, {}
    unit = None
    source_norm = 0.0
    for key, coef in prob.controls.items():
        a = coef.diffusion_at(xs)
        b = coef.drift_at(xs)
        c = coef.discount_at(xs)
        q = coef.source_at(xs).copy()
        source_norm = max(source_norm, float(np.abs(q).max(initial=0.0)))
        centre_extra = 0.0
        nonlocal_part = None
        if rule is not None:
            if callable(coef.jump):
                blk = _nonlocal_block(prob, grid, rule, coef.jump, xs, pos, known_values)
                m = 1.0
            else:
                # a constant multiplier only rescales the m = 1 block
                if unit is None:
                    unit = _nonlocal_block(prob, grid, rule, None, xs, pos, known_values)
                blk, m = unit, float(coef.jump)
            a = a + m * blk[0]
            b = b + m * blk[1]
            centre_extra = m * blk[2]
            nonlocal_part = m * blk[3]
            q += m * blk[4]
        R, Cn, V = _local_entries(a, b, c + centre_extra, h, d, strides, np.arange(n),
                                  unknown, drift)
        local, qk = _split_known(R, Cn, V, pos, known_values, n)
        q += qk
        if nonlocal_part is None:
            L, M = local.tocsr(), local.tocsr()
        else:
            L = (local + nonlocal_part).tocsr()
            M = (local + sparse.diags(nonlocal_part.diagonal())).tocsr()
        L.sum_duplicates()
        _certify(L, xs, key, grid.h)
        mats[key] = L
        consts[key] = q
        precs[key] = M
    return DiscreteOperator(prob, grid, unknown, known_values, mats, consts, source_norm, rule, precs)


def _nonlocal_block(prob, grid, rule, mult, xs, pos, known_values):
    """Lévy part of the stencil for one multiplier.

    Returns the core diffusion ``(n, d, d)``, the compensation drift
    ``(n, d)``, the diagonal mass ``(n,)``, the off-node block on the unknowns
    and the constant vector carrying exterior and known-node values.
    """
    n, d = xs.shape
    h = grid.spacing
    shape = np.asarray(grid.shape)
    sw = rule.dir_weights
    mc = np.ones((n, len(sw))) if mult is None else mult(xs, 0.5 * rule.inner_radius * rule.dirs)
    core = 0.5 * rule.core_m2 * np.einsum("mk,k,ki,kj->mij", mc, sw, rule.dirs, rule.dirs)
    Z, W, Cm = rule.z, rule.weights, rule.compensated
    if rule.tail_mass > 0:
        Z = np.vstack([Z, rule.tail_radius * rule.dirs])
        W = np.concatenate([W, rule.tail_mass * sw / sw.sum()])
        Cm = np.concatenate([Cm, np.full(len(sw), rule.tail_compensated)])
    nz = len(W)
    lo = np.asarray(grid.box.lower)
    hi = np.asarray(grid.box.upper)
    drift = np.zeros((n, d))
    centre = np.zeros(n)
    q = np.zeros(n)
    block = sparse.csr_matrix((n, n))
    step = max(1, CHUNK_ENTRIES // max(1, nz * 2 ** d))
    for s in range(0, n, step):
        sl = slice(s, min(n, s + step))
        xc = xs[sl]
        wm = W[None, :] if mult is None else W[None, :] * mult(xc, Z)
        wm = np.broadcast_to(wm, (len(xc), nz))
        # compensation turns into an effective drift
        drift[sl] = (wm * Cm[None, :]) @ Z
        centre[sl] = wm.sum(axis=1)
        pts = (xc[:, None, :] + Z[None, :, :]).reshape(-1, d)
        wflat = wm.ravel()
        rows = np.repeat(np.arange(sl.start, sl.stop), nz)
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        out = ~inside
        if out.any():
            q -= np.bincount(rows[out], wflat[out] * prob.exterior(pts[out]), minlength=n)
        if inside.any():
            idx, cw = _cell_weights(pts[inside], lo, h, shape)
            part, qk = _split_known(np.repeat(rows[inside], idx.shape[1]), idx.ravel(),
                                    -(wflat[inside][:, None] * cw).ravel(), pos, known_values, n)
            block = block + part
            q += qk
    return core, drift, centre, block, q


def _split_known(R, C, V, pos, known_values, n):
    """Sparse block on the unknowns and the vector moved to the constant term."""
    col = pos[C]
    isk = col < 0
    qk = np.bincount(R[isk], V[isk] * known_values[C[isk]], minlength=n) if isk.any() else 0.0
    keep = ~isk
    return sparse.csr_matrix((V[keep], (R[keep], col[keep])), shape=(n, n)), qk


def _certify(L, xs, key, h):
    coo = L.tocoo()
    off = coo.row != coo.col
    vals = coo.data[off]
    scale_ = np.abs(L.diagonal()).max(initial=1.0)
    bad = vals > 1e-12 * scale_
    if bad.any():
        i = int(coo.row[off][bad][0])
        raise MonotonicityError(
            f"positive off-diagonal weight {vals[bad][0]:.3e} at node {xs[i].tolist()} for control "
            f"pair {key}; the drift or cross-diffusion is too large for the grid "
            "(use drift='upwind' or refine)")
    if (L.diagonal() <= 0).any():
        i = int(np.flatnonzero(L.diagonal() <= 0)[0])
        raise MonotonicityError(f"nonpositive diagonal at node {xs[i].tolist()} for control pair {key}")


# -- drivers -------------------------------------------------------------------

def _select(D, policy_a, policy_b):
    """Rows of the operator and of its preconditioner picked by a policy."""
    n = D.n
    A = M = None
    q = np.zeros(n)
    for i, a in enumerate(D.a_labels):
        for j, b in enumerate(D.b_labels):
            rows = (policy_a == i) & (policy_b == j)
            if not rows.any():
                continue
            S = sparse.diags(rows.astype(float))
            part, mpart = S @ D.mats[(a, b)], S @ D.precs[(a, b)]
            A = part if A is None else A + part
            M = mpart if M is None else M + mpart
            q[rows] = D.consts[(a, b)][rows]
    return A.tocsr(), M.tocsc(), q


def _linear_solve(A, M, rhs, method, x0, tol):
    """Solve ``A x = rhs`` to an infinity-norm residual below ``tol / 10``."""
    n = A.shape[0]
    if method == "auto":
        if n <= DENSE_LIMIT and A.nnz > 0.02 * n * n:
            method = "dense"
        elif A.nnz <= SPARSE_DIRECT_NNZ:
            method = "direct"
        else:
            method = "krylov"
    if method == "dense":
        return scipy.linalg.solve(A.toarray(), rhs, check_finite=False)
    if method == "direct":
        return spla.spsolve(A.tocsc(), rhs)
    if method == "krylov":
        lu = spla.splu(M)
        prec = spla.LinearOperator(A.shape, lu.solve)
        x, status = spla.gmres(A, rhs, x0=x0, rtol=0.0, atol=0.1 * tol, M=prec, restart=50,
                               maxiter=200)
        r = float(np.abs(rhs - A @ x).max())
        if status != 0 and r > 0.1 * tol:
            raise ConvergenceError("preconditioned GMRES did not converge", r)
        return x
    if method != "jacobi":
        raise ValueError(f"unknown linear solver {method!r}")
    # damped Jacobi, matrix-free apart from the diagonal
    dinv = 1.0 / A.diagonal()
    x = x0.copy()
    for _ in range(1_000_000):
        r = rhs - A @ x
        if np.abs(r).max() <= 0.1 * tol:
            return x
        x += 0.8 * dinv * r
    raise ConvergenceError("Jacobi inner solve did not converge", float(np.abs(r).max()))


def solve_policy_iteration(D: DiscreteOperator, tol: float | None = None, max_outer: int = 100,
                           u0=None, linear_solver: str = "auto", max_inner: int = 100,
                           info: dict | None = None) -> GridFunction:
    """Howard iteration: outer loop over the sup policy, inner loop over the inf policy."""
    tol = D.default_tol() if tol is None else tol
    v = np.zeros(D.n) if u0 is None else D.interior_values(u0).copy()
    total_inner = 0
    res = math.inf
    for outer in range(max_outer + 1):
        F = D.pair_residuals(v)
        inner_min = F.min(axis=1)
        res = float(np.abs(inner_min.max(axis=0)).max(initial=0.0))
        if res <= tol:
            if info is not None:
                info.update(outer=outer, inner=total_inner, residual=res)
            return D.to_grid_function(v)
        if outer == max_outer:
            break
        pa = inner_min.argmax(axis=0)
        pb = F[pa, :, np.arange(D.n)].argmin(axis=1)
        for _ in range(max_inner):
            A, M, q = _select(D, pa, pb)
            v = _linear_solve(A, M, -q, linear_solver, v, tol)
            total_inner += 1
            Fa = D.pair_residuals(v)[pa, :, np.arange(D.n)]
            new_pb = Fa.argmin(axis=1)
            # keep the current choice on ties to avoid cycling
            same = Fa[np.arange(D.n), pb] <= Fa[np.arange(D.n), new_pb] + 1e-14 * (1 + np.abs(Fa).max())
            new_pb = np.where(same, pb, new_pb)
            if np.array_equal(new_pb, pb):
                break
            pb = new_pb
    raise ConvergenceError("policy iteration exceeded max_outer", res)


def solve_pseudo_time(D: DiscreteOperator, dt: float | None = None, tol: float | None = None,
                      max_steps: int = 2_000_000, u0=None, info: dict | None = None) -> GridFunction:
    """Explicit monotone time marching ``u <- u - dt F(u)`` to the steady state."""
    bound = D.stability_bound()
    if dt is None:
        dt = bound
    if dt > bound * (1 + 1e-12):
        raise ValueError(f"dt = {dt:.3e} exceeds the monotone stability bound {bound:.3e}")
    tol = D.default_tol() if tol is None else tol
    v = np.zeros(D.n) if u0 is None else D.interior_values(u0).copy()
    res = math.inf
    for step in range(max_steps + 1):
        F = D.residual(v)
        res = float(np.abs(F).max(initial=0.0))
        if res <= tol:
            if info is not None:
                info.update(steps=step, residual=res)
            return D.to_grid_function(v)
        v = v - dt * F
    raise ConvergenceError("pseudo-time marching exceeded max_steps", res)


def perron_iterate(D: DiscreteOperator, lower, upper, tol: float | None = None,
                   max_iter: int = 5_000_000, check_barriers: bool = True,
                   info: dict | None = None) -> GridFunction:
    """Monotone nonlinear Jacobi iteration from a subsolution, capped by a supersolution.

    Each sweep is ``u <- min(upper, u - F(u) / max_ab diag_ab)``, which is a
    nondecreasing map; starting from ``lower`` the iterates increase to the
    smallest discrete solution above ``lower``.
    """
    tol = D.default_tol() if tol is None else tol
    lo = D.interior_values(lower).astype(float)
    up = D.interior_values(upper).astype(float)
    if np.any(lo > up + 1e-12 * (1 + np.abs(up))):
        raise ValueError("lower barrier exceeds upper barrier")
    if check_barriers:
        fl, fu = D.residual(lo), D.residual(up)
        if fl.max(initial=-math.inf) > tol:
            raise ValueError(f"lower barrier is not a discrete subsolution (max residual {fl.max():.3e})")
        if fu.min(initial=math.inf) < -tol:
            raise ValueError(f"upper barrier is not a discrete supersolution (min residual {fu.min():.3e})")
    step = 1.0 / D.max_diag
    v = lo.copy()
    res = math.inf
    for it in range(max_iter + 1):
        F = D.residual(v)
        res = float(np.abs(F).max(initial=0.0))
        if res <= tol:
            if info is not None:
                info.update(iterations=it, residual=res, monotone=True)
            return D.to_grid_function(v)
        new = np.minimum(up, v - step * F)
        if np.any(new < v - 1e-12 * (1.0 + np.abs(v))):
            i = int(np.argmin(new - v))
            raise OrderingError(f"iterate decreased at node {D.grid.nodes()[D.unknown[i]].tolist()}")
        v = new
    raise ConvergenceError("Perron iteration exceeded max_iter", res)


# -- manufactured solutions and barrier pairs ----------------------------------

def manufactured_rhs(prob: HJBIProblem, u_exact, quad: QuadratureScheme | None = None) -> dict:
    """Sources ``f_ab`` that make ``u_exact`` solve every linear equation exactly.

    ``u_exact`` is a GridFunction or a closed-form object with ``gradient`` and
    ``hessian``; the Lévy term is integrated with a fine scheme.
    """
    quad = quad or QuadratureScheme(inner_radius=2e-3, shells=4, nodes_per_shell=6,
                                    angular_nodes=32, tail_tol=1e-12, r_inf_cap=1024.0)

    def make(coef):
        def f(p):
            p = np.atleast_2d(p)
            grad, hess = derivatives(u_exact, p)
            a = coef.diffusion_at(p)
            val = (np.einsum("mij,mij->m", a, hess) - np.einsum("mi,mi->m", coef.drift_at(p), grad)
                   - coef.discount_at(p) * u_exact(p))
            if not prob.kernel.is_zero:
                rule = quad.build(prob.kernel, comp_radius=1.0, h=None)
                levy, _, _ = rule.evaluate(u_exact, p, grad, hess, coef.jump_multiplier())
                val = val + levy
            return val
        return f

    return {k: make(c) for k, c in prob.controls.items()}


def barrier_pair(D: DiscreteOperator, eps6: float, psi_g, amplitude: float | None = None,
                 max_doublings: int = 60):
    """Discrete sub/supersolutions ``g`` outside and ``-+(G + A psi_g)`` inside.

    ``A`` starts at ``2 (||f|| + ||c|| G) / eps6`` and doubles until the discrete
    residual signs hold.  Returns ``(lower, upper, A)`` as GridFunctions.
    """
    nodes = D.grid.nodes()[D.unknown]
    G = float(np.abs(D.known_values).max(initial=0.0))
    coefs = D.prob.controls.values()
    cmax = max(float(np.abs(c.discount_at(nodes)).max(initial=0.0)) for c in coefs)
    A = amplitude if amplitude is not None else 2.0 * (D.source_norm + cmax * G + 1e-300) / eps6
    shape = psi_g(nodes)
    for _ in range(max_doublings):
        up = G + A * shape
        lo = -up
        if D.residual(up).min() >= 0 and D.residual(lo).max() <= 0:
            return D.to_grid_function(lo), D.to_grid_function(up), A
        A *= 2.0
    raise RuntimeError("could not certify the barrier pair")
