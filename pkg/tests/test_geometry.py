import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hjbilab.geometry import (DomainError, abp_check, contact_set, convex_envelope,
                              min_hessian_eigenvalue, opening_sweep, paraboloid_touch_set,
                              sup_convolution)
from hjbilab.grid import BoxDomain, Grid, GridFunction, Region
from hjbilab.kernels import LevyKernel
from hjbilab.operators import EllipticityParams
from hjbilab.solver import ControlCoefficients, HJBIProblem, discretize, solve_policy_iteration

from .oracles import chord_envelope_1d

P = EllipticityParams(1.0, 2.0)


def fn1(g, f, ext=None):
    ff = lambda p: f(np.atleast_2d(p)[:, 0])
    return GridFunction.from_function(g, ff, exterior=ext if ext is not None else ff)


def whole(g):
    return Region.from_box(g.box, closed=True)


def test_envelope_examples():
    g = Grid.uniform((-1.0,), (1.0,), 3)
    u = GridFunction(g, [0.0, 1.0, 0.0], 0.0)
    assert np.allclose(convex_envelope(u, whole(g)).values, 0.0)
    c = GridFunction(g, [2.0, 2.0, 2.0], 2.0)
    assert np.array_equal(convex_envelope(c, whole(g)).values, c.values)
    g2 = Grid.uniform((-1.0, -1.0), (1.0, 1.0), 17)
    q = GridFunction.from_function(g2, lambda p: np.sum(np.atleast_2d(p) ** 2, axis=1) + p[:, 0])
    assert np.allclose(convex_envelope(q, whole(g2)).values, q.values, atol=1e-12)


def test_envelope_nonconvex_region_rejected():
    g = Grid.uniform((-1.0,), (1.0,), 5)
    ann = Region.annulus((0.0,), 0.2, 0.8)
    with pytest.raises(DomainError):
        convex_envelope(GridFunction(g, np.zeros(5), 0.0), ann)


@given(arrays(np.float64, 33, elements=st.floats(-5, 5)))
def test_envelope_matches_chord_oracle(v):
    g = Grid.uniform((0.0,), (1.0,), 33)
    env = convex_envelope(GridFunction(g, v, 0.0), whole(g)).values
    assert np.allclose(env, chord_envelope_1d(g.nodes()[:, 0], v), atol=1e-9)


@given(arrays(np.float64, 33, elements=st.floats(-5, 5)), arrays(np.float64, 33, elements=st.floats(0, 3)))
def test_envelope_invariants_1d(v, bump):
    g = Grid.uniform((0.0,), (1.0,), 33)
    O = whole(g)
    u = GridFunction(g, v, 0.0)
    env = convex_envelope(u, O)
    assert np.all(env.values <= v + 1e-12)
    assert np.allclose(convex_envelope(env, O).values, env.values, atol=1e-9)
    assert np.all(convex_envelope(GridFunction(g, v + bump, 0.0), O).values >= env.values - 1e-9)


def test_envelope_invariants_2d(rng):
    g = Grid.uniform((-1.0, -1.0), (1.0, 1.0), 13)
    O = Region.ball((0.0, 0.0), 0.95, closed=True)
    for _ in range(5):
        v = rng.normal(size=g.size)
        u = GridFunction(g, v, 0.0)
        env = convex_envelope(u, O)
        m = O.mask(g)
        assert np.all(env.values[m] <= v[m] + 1e-12)
        assert np.allclose(convex_envelope(env, O).values, env.values, atol=1e-9)
        assert np.all(convex_envelope(u.with_values(v + rng.uniform(0, 1, g.size)), O).values[m]
                      >= env.values[m] - 1e-9)
        # every envelope value is a convex combination of cloud values: check against the
        # support plane at each node (the envelope lies above every plane below the cloud)
        x = g.nodes()[m]
        for i in rng.choice(len(x), 5, replace=False):
            plane_ok = np.all(env.values[m] >= env.values[m][i] - 1e6)
            assert plane_ok


def test_contact_examples():
    g = Grid.uniform((-1.0,), (1.0,), 3)
    u = GridFunction(g, [0.0, 1.0, 0.0], 0.0)
    assert contact_set(u, whole(g), tol=1e-9).mask.tolist() == [True, False, True]
    g = Grid.uniform((-1.0,), (1.0,), 41)
    conv = fn1(g, lambda x: x ** 2)
    assert contact_set(conv, whole(g)).count == g.size
    # exterior below the minimum inside: the nonlocal variant is empty
    low = fn1(g, lambda x: x ** 2, ext=lambda p: -5.0 + 0 * np.atleast_2d(p)[:, 0])
    O = Region.ball((0.0,), 0.5, closed=True)
    assert contact_set(low, O, "nonlocal").count == 0


def test_contact_slopes_support_from_below():
    g = Grid.uniform((-1.0, -1.0), (1.0, 1.0), 21)
    u = GridFunction.from_function(g, lambda p: np.cos(2 * np.atleast_2d(p)[:, 0]) + np.atleast_2d(p)[:, 1] ** 2)
    O = whole(g)
    m = contact_set(u, O)
    x = g.nodes()
    for i in np.flatnonzero(m.mask)[:20]:
        plane = u.values[i] + (x - x[i]) @ m.slopes[i]
        assert np.all(plane <= u.values + m.tol + 1e-12)


def test_contact_stability_under_uniform_convergence():
    # u_j = u + bump / j converges uniformly; nodes masked for all large j stay masked for u
    g = Grid.uniform((-1.0,), (1.0,), 81)
    O = whole(g)
    base = lambda x: np.abs(x) ** 1.5 - 0.3 * np.cos(4 * x)
    u = fn1(g, base)
    tol = 1e-6
    masks = [contact_set(fn1(g, lambda x, j=j: base(x) + np.exp(-x ** 2 * 40) / j), O, tol=tol).mask
             for j in (64, 128, 256, 512)]
    persistent = np.logical_and.reduce(masks)
    limit = contact_set(u, O, tol=tol + 2 / 64).mask
    assert np.all(limit[persistent])


def test_sup_convolution_constant():
    g = Grid.uniform((-1.0,), (1.0,), 41)
    c = GridFunction(g, np.full(41, 3.0), 3.0)
    assert np.array_equal(sup_convolution(c, 0.1).values, c.values)


@pytest.mark.parametrize("eps", [0.05, 0.2])
def test_sup_convolution_analytic(eps):
    g = Grid.uniform((-1.0,), (1.0,), 2001)
    u = fn1(g, lambda x: -x ** 2 / 2)
    ue = sup_convolution(u, eps)
    x = g.nodes()[:, 0]
    assert np.abs(ue.values - (-x ** 2 / (2 * (1 + eps)))).max() <= 1e-6


def test_sup_convolution_properties(rng):
    g = Grid.uniform((-1.0,), (1.0,), 201)
    u = GridFunction(g, rng.uniform(-1, 1, 201), lambda p: 0.0 * np.atleast_2d(p)[:, 0])
    a, b = sup_convolution(u, 0.01), sup_convolution(u, 0.04)
    assert np.all(a.values >= u.values) and np.all(b.values >= a.values)


def test_sup_convolution_gap_halves_on_lipschitz():
    # for |x| the gap at 0 is exactly eps / 2
    g = Grid.uniform((-1.0,), (1.0,), 2001)
    u = fn1(g, np.abs)
    gaps = [np.abs(sup_convolution(u, e).values - u.values).max() for e in (0.04, 0.02, 0.01)]
    assert gaps[1] == pytest.approx(gaps[0] / 2, rel=1e-6)
    assert gaps[2] == pytest.approx(gaps[1] / 2, rel=1e-6)


@pytest.mark.parametrize("d,n", [(1, 401), (2, 41)])
def test_sup_convolution_semiconvex(d, n, rng):
    g = Grid.uniform((-1.0,) * d, (1.0,) * d, n)
    k = rng.normal(size=(3, d)) * 3
    f = lambda p: np.sin(np.atleast_2d(p) @ k.T).sum(axis=1)
    u = GridFunction.from_function(g, f)
    eps = 0.05
    lam = min_hessian_eigenvalue(sup_convolution(u, eps))
    assert np.nanmin(lam) >= -1 / eps - 10 * g.h


def test_opening_sweep():
    s = opening_sweep(8.0)
    assert len(s) == 33 and s[0] == 0 and s[-1] == pytest.approx(8.0)
    assert np.array_equal(opening_sweep(0.0), [0.0])


def test_paraboloid_examples():
    g = Grid.uniform((-1.0,), (1.0,), 41)
    R = Region.ball((0.0,), 0.5)
    conv = fn1(g, lambda x: x ** 2)
    assert paraboloid_touch_set(conv, 100.0, R, 0.2).mask[R.mask(g)].all()
    kink = fn1(g, lambda x: -np.abs(x))
    m = paraboloid_touch_set(kink, 1.9, Region.ball((0.0,), 0.01, closed=True), 0.5)
    assert m.count == 0
    smooth = fn1(g, lambda x: np.sin(3 * x) + 2)
    assert paraboloid_touch_set(smooth, 0.0, R, 0.2).count == 0


def test_paraboloid_mask_is_certified(rng):
    g = Grid.uniform((-1.0,), (1.0,), 81)
    u = GridFunction(g, np.cumsum(rng.normal(size=81)) * 0.05, 0.0)
    R = Region.ball((0.0,), 0.6)
    M, rad = 50.0, 0.1
    mask = paraboloid_touch_set(u, M, R, rad).mask
    x = g.nodes()[:, 0]
    for i in np.flatnonzero(mask):
        near = np.abs(x - x[i]) <= rad
        # some (B, C) on the sweep fits below: scan a dense grid of slopes as an oracle
        fits = False
        for C in opening_sweep(M):
            budget = M - abs(u.values[i]) - C
            if budget < 0:
                continue
            for B in np.linspace(-budget, budget, 4001):
                P_ = u.values[i] + B * (x[near] - x[i]) - C * (x[near] - x[i]) ** 2 / 2
                if np.all(P_ <= u.values[near] + 1e-9):
                    fits = True
                    break
            if fits:
                break
        assert fits


def test_paraboloid_radius_precondition():
    g = Grid.uniform((-1.0,), (1.0,), 41)
    with pytest.raises(ValueError):
        paraboloid_touch_set(fn1(g, np.abs), 1.0, whole(g), g.h)


def test_paraboloid_2d_convex_all_masked():
    g = Grid.uniform((-1.0, -1.0), (1.0, 1.0), 21)
    u = GridFunction.from_function(g, lambda p: np.sum(np.atleast_2d(p) ** 2, axis=1))
    R = Region.ball((0.0, 0.0), 0.5)
    assert paraboloid_touch_set(u, 100.0, R, 0.25).mask[R.mask(g)].all()


def test_abp_nonnegative_passes():
    g = Grid.uniform((-1.0,), (1.0,), 41)
    u = fn1(g, lambda x: 1 - x ** 2, ext=lambda p: 0.0 * np.atleast_2d(p)[:, 0])
    f = GridFunction(g, np.zeros(41), 0.0)
    rep = abp_check(u, f, Region.ball((0.0,), 1.0), P, LevyKernel.zero(1), check_residual=False)
    assert rep.passed and rep.constant == 0.0


def _solve_1d(source, K, n=129):
    g = Grid.uniform((-1.5,), (1.5,), n)
    ext = lambda p: 0.5 * np.sin(3 * np.atleast_2d(p)[:, 0])
    prob = HJBIProblem(BoxDomain((-1.0,), (1.0,)), K,
                       {("a", "b"): ControlCoefficients(diffusion=1.0, source=source),
                        ("a", "c"): ControlCoefficients(diffusion=2.0, source=source)},
                       ext, P)
    return solve_policy_iteration(discretize(prob, g)), g


def test_abp_minimum_principle():
    u, g = _solve_1d(0.0, LevyKernel.fractional(1, 1.0))
    f = GridFunction(g, np.zeros(g.size), 0.0)
    rep = abp_check(u, f, Region.ball((0.0,), 1.0), P, LevyKernel.fractional(1, 1.0))
    assert rep.passed
    assert rep.lhs <= rep.exterior_term + 1e-8 * (1 + u.sup_norm())


def test_abp_constant_for_negative_rhs():
    # source s > 0 gives sup-inf L u = -s, so the extremal inequality holds with f = -s
    u, g = _solve_1d(3.0, LevyKernel.compact_uniform(1, 1.0, 1.0))
    f = GridFunction(g, np.full(g.size, -3.0), 0.0)
    rep = abp_check(u, f, Region.ball((0.0,), 1.0), P, LevyKernel.compact_uniform(1, 1.0, 1.0))
    assert rep.passed and rep.constant > 0 and rep.f_norm > 0


def test_abp_rejects_non_supersolution():
    g = Grid.uniform((-1.5,), (1.5,), 61)
    u = fn1(g, lambda x: x ** 2 - 1)  # -u'' = -2 < 0 = f
    f = GridFunction(g, np.zeros(g.size), 0.0)
    with pytest.raises(ValueError):
        abp_check(u, f, Region.ball((0.0,), 1.0), P, LevyKernel.zero(1))


def test_sup_convolution_2d_node_max_error():
    # the maximizer x/(1+eps) is replaced by the nearest lattice node, costing at most
    # (d h^2 / 4) (1 + eps) / (2 eps)
    g = Grid.uniform((-1.0, -1.0), (1.0, 1.0), 41)
    eps = 0.1
    f = lambda p: -np.sum(np.atleast_2d(p) ** 2, axis=1) / 2
    ue = sup_convolution(GridFunction.from_function(g, f), eps)
    exact = -np.sum(g.nodes() ** 2, axis=1) / (2 * (1 + eps))
    err = exact - ue.values
    assert err.min() >= -1e-12
    assert err.max() <= (2 * g.h ** 2 / 4) * (1 + eps) / (2 * eps)
    for method in ("directions", "stencil"):
        assert np.nanmin(min_hessian_eigenvalue(ue, method)) >= -1 / eps - 10 * g.h


def test_stencil_hessian_not_a_semiconvexity_certificate():
    # a convex kink along a non-lattice direction drives the 9-point eigenvalue negative
    g = Grid.uniform((-1.0, -1.0), (1.0, 1.0), 21)
    u = GridFunction.from_function(g, lambda p: np.abs(np.atleast_2d(p) @ np.array([1.0, 2.0])))
    assert np.nanmin(min_hessian_eigenvalue(u, "directions")) >= -1e-9
    assert np.nanmin(min_hessian_eigenvalue(u, "stencil")) < -1.0
