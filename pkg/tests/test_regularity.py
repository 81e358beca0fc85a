import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjbilab.grid import BoxDomain, Grid, GridFunction
from hjbilab.kernels import LevyKernel
from hjbilab.operators import EllipticityParams
from hjbilab.regularity import (EPS3_SWEEP, InsufficientDataError, harnack_ratio, holder_fit,
                                holder_report, oscillation_sequence, superlevel_decay,
                                weak_harnack_check)
from hjbilab.solver import ControlCoefficients, HJBIProblem, discretize, solve_policy_iteration


def const(g, c):
    return GridFunction(g, np.full(g.size, float(c)), float(c))


def test_harnack_constant_ratio_is_two():
    # inner cube of half-width 1 needs l = 9 in one dimension
    g = Grid.uniform((-10.0,), (10.0,), 401)
    assert harnack_ratio(const(g, 1.0), const(g, 0.0), 9.0, 1.0) == pytest.approx(2.0, rel=1e-14)


@pytest.mark.parametrize("eps", EPS3_SWEEP)
def test_harnack_constant_ratio_any_exponent(eps):
    # (2 rho)^(1/e) / rho^(1/e) = 2^(1/e) for u = 1, at any resolved scale
    g = Grid.uniform((-1.0, -1.0), (1.0, 1.0), 65)
    r = harnack_ratio(const(g, 1.0), const(g, 0.0), 0.5, eps)
    assert r == pytest.approx(4.0 ** (1 / eps), rel=1e-12)


def test_harnack_zero_over_zero():
    g = Grid.uniform((-1.0,), (1.0,), 65)
    assert harnack_ratio(const(g, 0.0), const(g, 0.0), 1.0, 0.5) == 0.0
    rep = weak_harnack_check(const(g, 0.0), const(g, 0.0), [1.0, 0.5])
    assert rep.max_ratio == 0.0


def test_harnack_rejects_negative():
    g = Grid.uniform((-1.0,), (1.0,), 65)
    u = GridFunction.from_function(g, lambda p: np.atleast_2d(p)[:, 0])
    with pytest.raises(ValueError, match="nonnegative"):
        weak_harnack_check(u, const(g, 0.0), [1.0])


def test_harnack_unresolved_scale():
    g = Grid.uniform((-1.0,), (1.0,), 9)
    with pytest.raises(ValueError, match="resolved"):
        harnack_ratio(const(g, 1.0), const(g, 0.0), 0.1, 1.0, center=(0.12,))


def test_harnack_on_computed_supersolution():
    g = Grid.uniform((-1.5,), (1.5,), 241)
    P = EllipticityParams(1.0, 2.0)
    prob = HJBIProblem(BoxDomain((-1.0,), (1.0,)), LevyKernel.fractional(1, 1.0),
                       {("a", "b"): ControlCoefficients(diffusion=1.0, source=-1.0),
                        ("a", "c"): ControlCoefficients(diffusion=2.0, source=-1.0)},
                       lambda p: np.zeros(len(np.atleast_2d(p))), P)
    u = solve_policy_iteration(discretize(prob, g))
    assert u.values.min() >= -1e-12
    u = u.with_values(np.maximum(u.values, 0.0))
    rep = weak_harnack_check(u, const(g, 1.0), [1.0, 0.5, 0.25])
    for e, rs in rep.ratios.items():
        assert all(0 < r < math.inf for r in rs)
    assert rep.eps3 in EPS3_SWEEP
    s = rep.summary()
    assert set(s) >= {"scales", "ratios", "eps3", "max_ratio", "spread"}


# -- superlevel sets --------------------------------------------------------------

def bump(g):
    return GridFunction.from_function(g, lambda p: np.exp(-4 * np.sum(np.atleast_2d(p) ** 2, axis=1)))


@pytest.mark.parametrize("factor", [2.0, 10.0])
def test_superlevel_constant_scale_invariant(factor):
    g = Grid.uniform((-1.0, -1.0), (1.0, 1.0), 41)
    u, f = bump(g), const(g, 0.3)
    _, C = superlevel_decay(u, f, 0.4, 0.5)
    _, Cs = superlevel_decay(u.with_values(factor * u.values), f.with_values(factor * f.values), 0.4, 0.5)
    assert Cs == pytest.approx(C, rel=1e-12)


def test_superlevel_step_function():
    g = Grid.uniform((-1.0,), (1.0,), 201)
    c, l = 2.0, 0.5
    t = np.array([0.5, 1.0, 1.999, 2.0, 3.0])
    table, C = superlevel_decay(const(g, c), const(g, 0.0), l, 1.0, t)
    n_ball = np.sum(np.abs(g.nodes()[:, 0]) < l)
    full = n_ball * g.cell_volume
    assert np.allclose(table[:3, 1], full) and np.all(table[3:, 1] == 0)
    # the bound with inf = c dominates once C reaches |B_l| / l^d
    assert C == pytest.approx(full / l * 1.999 / c, rel=1e-12)
    assert np.all(table[:, 1] <= C * table[:, 2] * (1 + 1e-12))


def test_superlevel_vanishes_at_large_levels():
    g = Grid.uniform((-1.0,), (1.0,), 101)
    table, _ = superlevel_decay(bump(g), const(g, 0.0), 0.5, 0.5, [1e3, 1e6])
    assert np.all(table[:, 1] == 0)


def test_superlevel_rejects_negative():
    g = Grid.uniform((-1.0,), (1.0,), 101)
    with pytest.raises(ValueError):
        superlevel_decay(const(g, -1.0), const(g, 0.0), 0.25, 0.5)


# -- oscillation and Hölder fits ----------------------------------------------------

def test_oscillation_of_square_root():
    g = Grid.uniform((-1.0,), (1.0,), 20001)
    u = GridFunction.from_function(g, lambda p: np.sqrt(np.abs(np.atleast_2d(p)[:, 0])))
    seq = oscillation_sequence(u, (0.0,), 8.0, 3)
    assert not seq.truncated
    q = seq.values[1:] / seq.values[:-1]
    assert np.allclose(q, 8 ** -0.5, rtol=0.05)
    alpha, _, _ = holder_fit(seq)
    assert alpha == pytest.approx(0.5, rel=0.02)


def test_oscillation_of_affine_function():
    # with h = 8^-4 the ball B_{8^-k} holds the nodes up to distance 8^-k - h
    g = Grid.uniform((-1.0,), (1.0,), 2 * 8 ** 4 + 1)
    u = GridFunction.from_function(g, lambda p: 3.0 * np.atleast_2d(p)[:, 0] + 1.0)
    seq = oscillation_sequence(u, (0.0,), 8.0, 3)
    r = 8.0 ** -np.arange(4)
    assert np.allclose(seq.values, 6.0 * (r - g.h), rtol=0, atol=1e-12)


def test_oscillation_of_constant():
    g = Grid.uniform((-1.0, -1.0), (1.0, 1.0), 65)
    seq = oscillation_sequence(const(g, 4.0), (0.0, 0.0), 2.0, 3)
    assert np.all(seq.values == 0)
    with pytest.raises(InsufficientDataError):
        holder_fit(seq)


def test_oscillation_truncates_with_warning():
    g = Grid.uniform((-1.0,), (1.0,), 33)
    with pytest.warns(UserWarning, match="truncated"):
        seq = oscillation_sequence(const(g, 1.0), (0.0,), 8.0, 4)
    assert seq.truncated and len(seq.values) < 5


def test_holder_fit_exact_geometric():
    alpha, C, res = holder_fit(8.0 ** (-np.arange(6) / 2), 8.0)
    assert alpha == pytest.approx(0.5, abs=1e-12)
    assert C == pytest.approx(2.0, rel=1e-12)
    assert res < 1e-12


def test_holder_fit_constant_and_short():
    assert holder_fit(np.full(5, 0.7), 8.0)[0] == 0.0
    with pytest.raises(InsufficientDataError):
        holder_fit([1.0, 0.5], 8.0)
    with pytest.raises(InsufficientDataError):
        holder_fit([1.0, 0.5, 0.0, 0.0], 8.0)


# bounded log-noise delta moves the least-squares slope by at most
# delta sum|k - kbar| / sum (k - kbar)^2 / log(ratio) = 0.0038 / log(ratio) for k = 0..7,
# which is 2% of alpha once alpha >= 0.19 / log(2)
@given(st.floats(0.3, 1.5), st.floats(0.1, 10.0), st.sampled_from([2.0, 4.0, 8.0]),
       st.integers(0, 2 ** 32 - 1))
def test_holder_fit_recovers_alpha_under_noise(alpha, C, ratio, seed):
    rng = np.random.default_rng(seed)
    k = np.arange(8)
    seq = C * ratio ** (-alpha * k) * (1 + rng.uniform(-0.01, 0.01, size=8))
    assert holder_fit(seq, ratio)[0] == pytest.approx(alpha, rel=0.02)


def test_holder_report_summary():
    g = Grid.uniform((-1.0,), (1.0,), 4097)
    u = GridFunction.from_function(g, lambda p: np.abs(np.atleast_2d(p)[:, 0]) ** 0.3)
    rep = holder_report(u, (0.0,), 4.0, 4)
    assert rep.alpha == pytest.approx(0.3, rel=0.05)
    assert rep.summary()["ratio"] == 4.0
