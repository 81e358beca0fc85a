"""Convex envelopes, contact sets, sup-convolutions and the ABP inequality on grids."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .grid import Grid, GridFunction, Region
from .kernels import LevyKernel
from .operators import EllipticityParams, extremal_residual_minus


class DomainError(ValueError):
    """The region is not convex, or is not supported by the operation."""


@dataclass
class ContactMask:
    """Boolean mask over grid nodes and supporting slopes where defined.

    ``slopes`` has shape ``(n_nodes, d)``; rows outside the mask are NaN.
    """

    grid: Grid
    mask: np.ndarray
    slopes: np.ndarray
    tol: float
    variant: str

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def to_csv(self, path):
        nodes = self.grid.nodes()
        d = self.grid.d
        header = ",".join([f"x{i + 1}" for i in range(d)] + ["flag"] + [f"p{i + 1}" for i in range(d)])
        data = np.column_stack([nodes, self.mask.astype(float), self.slopes])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


@dataclass
class ParaboloidMask:
    """Nodes touched from below by a concave paraboloid of opening bound ``M``."""

    grid: Grid
    mask: np.ndarray
    M: float
    radius: float

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def _require_convex(O: Region):
    if not isinstance(O, Region) or not O.is_convex:
        raise DomainError("the convex envelope needs a convex region (ball, cube or box)")


# -- lower convex hulls --------------------------------------------------------

def _hull_planes_1d(x, v):
    """Monotone-chain lower hull; returns the supporting lines as ``(slope, intercept)``."""
    order = np.lexsort((v, x))
    xs, vs = x[order], v[order]
    # keep the lowest value per abscissa
    first = np.concatenate([[True], np.diff(xs) > 0])
    xs, vs = xs[first], vs[first]
    if len(xs) == 1:
        return np.zeros((1, 1)), vs[:1].copy()
    hull = []
    for i in range(len(xs)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (xs[b] - xs[a]) * (vs[i] - vs[a]) - (vs[b] - vs[a]) * (xs[i] - xs[a])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    h = np.array(hull)
    s = np.diff(vs[h]) / np.diff(xs[h])
    c = vs[h[:-1]] - s * xs[h[:-1]]
    return s[:, None], c


def _hull_planes_nd(x, v):
    """Lower facets of the hull of ``{(x_i, v_i)}`` as affine functions ``A x + c``."""
    pts = np.column_stack([x, v])
    # an affine cloud has no full-dimensional hull
    X = np.column_stack([x, np.ones(len(x))])
    coef, *_ = np.linalg.lstsq(X, v, rcond=None)
    scale_ = 1.0 + np.abs(v).max()
    if np.abs(X @ coef - v).max() <= 1e-12 * scale_:
        return coef[None, :-1], coef[-1:]
    try:
        hull = ConvexHull(pts)
    except QhullError:
        hull = ConvexHull(pts, qhull_options="QJ")
    eq = hull.equations
    lower = eq[:, -2] < -1e-12
    eq = eq[lower]
    # n.x + n_v v + off = 0  ->  v = -(n.x + off) / n_v
    A = -eq[:, :-2] / eq[:, -2:-1]
    c = -eq[:, -1] / eq[:, -2]
    return A, c


def _hull_planes(x, v):
    if x.shape[1] == 1:
        return _hull_planes_1d(x[:, 0], v)
    return _hull_planes_nd(x, v)


def _envelope_at(A, c, q, chunk=2048):
    """``max_f (A_f . q + c_f)`` and the maximizing facet, in chunks."""
    val = np.empty(len(q))
    arg = np.empty(len(q), dtype=np.int64)
    for s in range(0, len(q), chunk):
        m = q[s:s + chunk] @ A.T + c
        arg[s:s + chunk] = m.argmax(axis=1)
        val[s:s + chunk] = m.max(axis=1)
    return val, arg


def convex_envelope(u: GridFunction, O: Region) -> GridFunction:
    """Largest convex function below ``u`` on the nodes of ``O``.

    The value at each node of ``O`` is the lower convex hull of the cloud
    ``{(x, u(x))}`` restricted to ``O``; nodes outside ``O`` keep ``u``.
    """
    _require_convex(O)
    mask = O.mask(u.grid)
    out = u.values.copy()
    if mask.any():
        x = u.grid.nodes()[mask]
        v = u.values[mask]
        A, c = _hull_planes(x, v)
        env, _ = _envelope_at(A, c, x)
        out[mask] = np.minimum(env, v)
    return GridFunction(u.grid, out, u.exterior)


def default_contact_tol(u: GridFunction) -> float:
    return 10.0 * u.grid.h ** 2 * (1.0 + u.sup_norm())


def _collar_samples(u: GridFunction, O: Region, width: float):
    """Exterior-rule samples on lattice points within ``width`` of ``O`` but off the grid."""
    g = u.grid
    h = g.spacing
    pad = np.ceil(width / h).astype(int) + 1
    axes = [np.arange(-pad[i], g.shape[i] + pad[i]) * h[i] + g.box.lower[i] for i in range(g.d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, g.d)
    off = ~g.box.contains(mesh)
    mesh = mesh[off]
    dist = _distance_to_region(mesh, O)
    mesh = mesh[dist < width]
    return mesh, (u.exterior(mesh) if len(mesh) else np.zeros(0))


def _distance_to_region(p, O: Region):
    if O.kind == "ball":
        return np.maximum(np.linalg.norm(p - np.asarray(O.center), axis=1) - O.radius, 0.0)
    if O.kind == "cube":
        lo = np.asarray(O.center) - O.radius
        hi = np.asarray(O.center) + O.radius
    elif O.kind == "box":
        lo, hi = np.asarray(O.lower), np.asarray(O.upper)
    else:
        raise DomainError("collar distance needs a ball, cube or box")
    gap = np.maximum(np.maximum(lo - p, p - hi), 0.0)
    return np.linalg.norm(gap, axis=1)


def contact_set(u: GridFunction, O: Region, variant: str = "local", tol: float | None = None
                ) -> ContactMask:
    """Nodes of ``O`` that admit a supporting affine function from below.

    ``variant="local"`` tests support over ``O``.  ``variant="nonlocal"``
    tests support over ``O`` together with its ``diam O`` neighbourhood
    (grid nodes plus exterior-rule samples on a bounded collar) and also
    requires ``u(x) < inf`` of ``u`` outside ``O``.
    """
    _require_convex(O)
    if variant not in ("local", "nonlocal"):
        raise ValueError("variant must be 'local' or 'nonlocal'")
    tol = default_contact_tol(u) if tol is None else tol
    g = u.grid
    nodes = g.nodes()
    inside = O.mask(g)
    slopes = np.full((g.size, g.d), np.nan)
    mask = np.zeros(g.size, dtype=bool)
    if not inside.any():
        return ContactMask(g, mask, slopes, tol, variant)
    xs, vs = nodes[inside], u.values[inside]
    if variant == "local":
        cx, cv = xs, vs
    else:
        width = O.diam
        near = (~inside) & (_distance_to_region(nodes, O) < width)
        far_x, far_v = _collar_samples(u, O, width)
        outside_v = np.concatenate([u.values[~inside], far_v])
        ext_inf = outside_v.min() if len(outside_v) else math.inf
        cx = np.vstack([xs, nodes[near], far_x])
        cv = np.concatenate([vs, u.values[near], far_v])
    A, c = _hull_planes(cx, cv)
    env, arg = _envelope_at(A, c, xs)
    ok = vs - env <= tol
    if variant == "nonlocal":
        ok &= vs < ext_inf
    idx = np.flatnonzero(inside)
    mask[idx[ok]] = True
    slopes[idx[ok]] = A[arg[ok]]
    return ContactMask(g, mask, slopes, tol, variant)


# -- sup-convolution -------------------------------------------------------------

def _extended_lattice(u: GridFunction, pad: int):
    g = u.grid
    h = g.spacing
    axes = [np.arange(-pad, g.shape[i] + pad) * h[i] + g.box.lower[i] for i in range(g.d)]
    shape = tuple(len(a) for a in axes)
    vals = np.empty(shape)
    core = tuple(slice(pad, pad + n) for n in g.shape)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, g.d)
    full = u.exterior(mesh).reshape(shape) if pad else np.empty(shape)
    vals[...] = full
    vals[core] = u.array
    return vals, core


def sup_convolution(u: GridFunction, eps: float) -> GridFunction:
    """``u^eps(x) = max_y [u(y) - |x - y|^2 / (2 eps)]`` on the nodes of ``u``.

    The search is truncated at radius ``2 sqrt(eps osc u)``, beyond which the
    penalty exceeds any possible gain.  Candidates beyond the grid box come
    from the exterior rule.  In one dimension the maximum is taken exactly
    over the piecewise-linear interpolant, cell by cell; in higher dimensions
    it is taken over lattice nodes.  The exterior rule of the result is that
    of ``u``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    g = u.grid
    h = g.spacing
    # oscillation over the grid and a generous collar
    probe_pad = int(np.ceil(2.0 * math.sqrt(eps * max(u.values.max() - u.values.min(), 1e-300))
                            / h.min())) + 1
    vals0, _ = _extended_lattice(u, probe_pad)
    osc = float(vals0.max() - vals0.min())
    radius = 2.0 * math.sqrt(eps * osc)
    pad = int(np.ceil(radius / h.min())) + 1
    vals, core = _extended_lattice(u, pad) if pad != probe_pad else (vals0, tuple(
        slice(probe_pad, probe_pad + n) for n in g.shape))
    out = u.array.copy()
    if osc == 0.0:
        return GridFunction(g, out.ravel(), u.exterior)
    if g.d == 1:
        n = g.shape[0]
        ext = vals
        xs = np.arange(n) * h[0]  # node positions relative to the first node
        w = int(np.ceil(radius / h[0])) + 1
        for j in range(-w, w):
            # cell [k, k+1] in extended indices, k = i + pad + j
            k = np.arange(n) + pad + j
            ok = (k >= 0) & (k + 1 < len(ext))
            if not ok.any():
                continue
            kk = k[ok]
            y0 = (kk - pad) * h[0]
            s = (ext[kk + 1] - ext[kk]) / h[0]
            t = np.clip(xs[ok] + eps * s, y0, y0 + h[0])
            val = ext[kk] + s * (t - y0) - (xs[ok] - t) ** 2 / (2.0 * eps)
            out[ok] = np.maximum(out[ok], val)
        return GridFunction(g, out, u.exterior)
    w = int(np.ceil(radius / h.min()))
    rng = [np.arange(-w, w + 1)] * g.d
    offsets = np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, g.d)
    dist2 = ((offsets * h) ** 2).sum(axis=1)
    offsets, dist2 = offsets[dist2 <= radius ** 2], dist2[dist2 <= radius ** 2]
    for off, d2 in zip(offsets, dist2):
        sl = tuple(slice(c.start + o, c.stop + o) for c, o in zip(core, off))
        np.maximum(out, vals[sl] - d2 / (2.0 * eps), out=out)
    return GridFunction(g, out.ravel(), u.exterior)


def min_hessian_eigenvalue(u: GridFunction, method: str = "directions") -> np.ndarray:
    """Smallest discrete Hessian eigenvalue at interior nodes (NaN elsewhere).

    ``method="directions"`` takes the least second difference along the
    lattice directions ``e_i`` and ``e_i +- e_j``, normalized by their
    length.  This is the estimate that semiconvexity controls: a function
    whose sum with ``|x|^2 / (2 eps)`` is convex has every such difference at
    least ``-1/eps``.  ``method="stencil"`` uses the eigenvalues of the
    symmetrized central-difference Hessian, which can dip well below that
    bound next to kinks.
    """
    from .operators import hessian_estimate

    g = u.grid
    inner = ~g.boundary_mask()
    out = np.full(g.size, np.nan)
    if not inner.any():
        return out
    if method == "stencil":
        est = hessian_estimate(u, g.nodes()[inner])
        H = 0.5 * (est.hessian + np.swapaxes(est.hessian, 1, 2))
        out[inner] = np.linalg.eigvalsh(H)[:, 0]
        return out
    if method != "directions":
        raise ValueError("method must be 'directions' or 'stencil'")
    d, h = g.d, g.spacing
    dirs = [np.eye(d, dtype=int)[i] for i in range(d)]
    for i in range(d):
        for j in range(i + 1, d):
            for sgn in (1, -1):
                v = np.zeros(d, dtype=int)
                v[i], v[j] = 1, sgn
                dirs.append(v)
    arr = u.array
    core = tuple(slice(1, n - 1) for n in g.shape)

    def shifted(v):
        return arr[tuple(slice(1 + o, n - 1 + o) for o, n in zip(v, g.shape))]

    best = np.full(arr[core].shape, np.inf)
    for v in dirs:
        step2 = float(((v * h) ** 2).sum())
        np.minimum(best, (shifted(v) + shifted(-v) - 2.0 * arr[core]) / step2, out=best)
    full = np.full(g.shape, np.nan)
    full[core] = best
    out[inner] = full.ravel()[inner]
    return out


# -- paraboloid touching -----------------------------------------------------------

def opening_sweep(M: float, n: int = 33) -> np.ndarray:
    """``0`` followed by ``n - 1`` logarithmically spaced openings up to ``M``."""
    if M <= 0:
        return np.zeros(1)
    return np.concatenate([[0.0], np.geomspace(1e-4 * M, M, n - 1)])


def paraboloid_touch_set(u: GridFunction, M: float, region: Region, radius: float,
                         n_sweep: int = 33) -> ParaboloidMask:
    """Nodes ``x`` of ``region`` where ``u`` is touched from below on ``B_radius(x)``.

    A node qualifies when some ``(B, C)`` with ``|u(x)| + |B| + C <= M`` and
    ``C`` from :func:`opening_sweep` gives
    ``u(x) + B.(y-x) - C |y-x|^2 / 2 <= u(y)`` at every node ``y`` of the
    ball.  In one dimension the slope feasibility is an exact interval test;
    in two dimensions candidate slopes (central and one-sided differences and
    zero) are tried, so the mask is conservative.
    """
    g = u.grid
    if radius < 2 * g.h * (1 - 1e-12):
        raise ValueError("radius must be at least two grid spacings")
    if M < 0:
        raise ValueError("M must be nonnegative")
    h = g.spacing
    arr = u.array
    w = np.ceil(radius / h).astype(int)
    rng = [np.arange(-w[i], w[i] + 1) for i in range(g.d)]
    offsets = np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, g.d)
    dz = offsets * h
    dist2 = (dz ** 2).sum(axis=1)
    keep = (dist2 <= radius ** 2 * (1 + 1e-12)) & (dist2 > 0)
    offsets, dz, dist2 = offsets[keep], dz[keep], dist2[keep]
    in_region = region.mask(g).reshape(g.shape)
    idx = np.argwhere(in_region)
    mask = np.zeros(g.shape, dtype=bool)
    if len(idx) == 0:
        return ParaboloidMask(g, mask.ravel(), M, radius)
    shape = np.asarray(g.shape)
    ux = arr[tuple(idx.T)]
    # neighbour values, NaN-free: off-grid neighbours come from the exterior rule
    nb = idx[:, None, :] + offsets[None, :, :]
    on = np.all((nb >= 0) & (nb < shape), axis=2)
    vals = np.empty(on.shape)
    vals[on] = arr[tuple(nb[on].T)]
    if (~on).any():
        pts = np.asarray(g.box.lower) + nb[~on] * h
        vals[~on] = u.exterior(pts)
    delta0 = vals - ux[:, None]
    budget0 = M - np.abs(ux)
    found = np.zeros(len(idx), dtype=bool)
    for C in opening_sweep(M, n_sweep):
        bmax = budget0 - C
        todo = (~found) & (bmax >= 0)
        if not todo.any():
            continue
        delta = delta0[todo] + 0.5 * C * dist2[None, :]
        if g.d == 1:
            z = dz[:, 0]
            pos = z > 0
            upper = np.min(delta[:, pos] / z[pos], axis=1, initial=np.inf)
            lower = np.max(delta[:, ~pos] / z[~pos], axis=1, initial=-np.inf)
            lo = np.maximum(lower, -bmax[todo])
            hi = np.minimum(upper, bmax[todo])
            ok = lo <= hi + 1e-12 * (1 + np.abs(hi))
        else:
            ok = np.zeros(todo.sum(), dtype=bool)
            for B in _candidate_slopes(arr, idx[todo], h, g):
                norm_ok = np.linalg.norm(B, axis=1) <= bmax[todo]
                fit = np.all(B @ dz.T <= delta + 1e-12 * (1 + np.abs(delta)), axis=1)
                ok |= norm_ok & fit
        found[np.flatnonzero(todo)[ok]] = True
    mask[tuple(idx[found].T)] = True
    return ParaboloidMask(g, mask.ravel(), M, radius)


def _candidate_slopes(arr, idx, h, g):
    """Central, forward and backward difference slopes, and zero."""
    shape = np.asarray(g.shape)
    d = g.d

    def val(off):
        nb = np.clip(idx + off, 0, shape - 1)
        return arr[tuple(nb.T)]

    u0 = val(np.zeros(d, dtype=int))
    diffs = {"c": [], "f": [], "b": []}
    for i in range(d):
        e = np.zeros(d, dtype=int)
        e[i] = 1
        up, dn = val(e), val(-e)
        diffs["c"].append((up - dn) / (2 * h[i]))
        diffs["f"].append((up - u0) / h[i])
        diffs["b"].append((u0 - dn) / h[i])
    yield np.zeros((len(idx), d))
    for key in ("c", "f", "b"):
        yield np.stack(diffs[key], axis=1)
    # mixed one-sided choices
    if d == 2:
        yield np.stack([diffs["f"][0], diffs["b"][1]], axis=1)
        yield np.stack([diffs["b"][0], diffs["f"][1]], axis=1)


# -- ABP ------------------------------------------------------------------------------

@dataclass
class ABPReport:
    """Terms of ``-inf_O u <= -inf_{O^c} u + C diam ||f^-||_{L^d(contact)}``."""

    lhs: float
    exterior_term: float
    diam: float
    f_norm: float
    constant: float
    passed: bool
    residual_slack: float
    contact_nodes: int

    def summary(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                for k, v in self.__dict__.items()}


def _ld_norm(values, cell_volume, d):
    return float((np.sum(np.abs(values) ** d) * cell_volume) ** (1.0 / d))


def abp_check(u: GridFunction, f: GridFunction, omega: Region, P: EllipticityParams,
              K: LevyKernel, r: float = 1.0, quad=None, residual_tol: float | None = None,
              tol: float | None = None, check_residual: bool = True) -> ABPReport:
    """Empirical ABP constant for a discrete supersolution.

    ``u`` must satisfy ``-P^-(D^2u) - P^-_{K,r}(u) + C0 r |Du| >= f`` in
    ``omega``; this is re-checked at nodes at least one cell inside the grid
    box, with slack ``residual_tol``.  The contact set is the nonlocal contact
    set of ``min(u, 0)``.
    """
    g = u.grid
    inside = omega.mask(g)
    if not inside.any():
        raise ValueError("omega contains no grid nodes")
    tol = 1e-8 * (1.0 + u.sup_norm()) if tol is None else tol
    slack = math.inf
    if check_residual:
        usable = inside & ~g.boundary_mask()
        pts = g.nodes()[usable]
        res = np.atleast_1d(extremal_residual_minus(u, pts, P, K, r, quad))
        slack = float((res - f.values[usable]).min(initial=math.inf))
        if residual_tol is None:
            residual_tol = 0.05 * (1.0 + np.abs(f.values[inside]).max())
        if slack < -residual_tol:
            raise ValueError(f"u is not a supersolution: residual falls short of f by {-slack:.3e}")
    lhs = -float(u.values[inside].min())
    width = omega.diam
    far_x, far_v = _collar_samples(u, omega, width)
    outside = np.concatenate([u.values[~inside], far_v])
    ext = -float(outside.min()) if len(outside) else -math.inf
    neg = u.with_values(np.minimum(u.values, 0.0))
    neg = GridFunction(g, neg.values, lambda p: np.minimum(u.exterior(p), 0.0))
    contact = contact_set(neg, omega, "nonlocal")
    fneg = np.maximum(-f.values[contact.mask], 0.0)
    fn = _ld_norm(fneg, g.cell_volume, g.d)
    diam = omega.diam
    gap = lhs - ext
    if diam * fn > 0:
        C = max(gap, 0.0) / (diam * fn)
        passed = True
    else:
        C = 0.0
        passed = gap <= tol
    return ABPReport(lhs, ext, diam, fn, C, bool(passed), slack, contact.count)
