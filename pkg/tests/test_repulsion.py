import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapflow import geometry, loss, repulsion
from gapflow.exceptions import InvalidInputError


def scale_rate_fd(X, Y, nu, h=1e-6):
    # d scale/dt = scale * d nu/dt = -scale * d loss / d nu
    f = lambda v: loss.sym_ce_loss(math.exp(v) * X @ Y.T)
    return -math.exp(nu) * (f(nu + h) - f(nu - h)) / (2 * h)


def test_dscale_matches_finite_difference():
    X = geometry.sample_uniform_sphere(5, 4, 0, 0)
    Y = geometry.sample_uniform_sphere(5, 4, 0, 1)
    for nu in (-1.0, 0.5, 2.0):
        assert repulsion.dscale_dt(X, Y, nu) == pytest.approx(scale_rate_fd(X, Y, nu), rel=1e-6)


def test_single_pair_has_zero_rate():
    x = np.array([[1.0, 0.0]])
    assert repulsion.dscale_dt(x, x, 1.0) == 0.0


def test_matched_rate_positive():
    lift = geometry.init_etf(4, 5, 0.3)
    assert repulsion.dscale_dt(lift.X, lift.Y, 1.0) > 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 6), st.floats(-1.0, 3.0))
def test_matching_raises_scale_rate(seed, n, nu):
    rng = geometry.make_rng(seed)
    Y = geometry.sample_uniform_sphere(n, 4, seed, 1)
    Xp = geometry.renormalize(Y + 0.05 * rng.standard_normal(Y.shape))
    if not (Xp @ Y.T).diagonal().min() > 0 or repulsion._margin_unchecked(Xp @ Y.T) <= 0:
        return
    perm = np.roll(np.arange(n), 1)
    X = np.empty_like(Xp)
    X[perm] = Xp
    d_mis, d_mat = repulsion.compare_matched(X, Y, perm, nu)
    assert d_mat > d_mis


def test_compare_matched_accepts_matrix_and_validates():
    lift = geometry.init_etf(3, 4, 0.2)
    perm = np.array([1, 2, 0])
    X = np.empty_like(lift.X)
    X[perm] = lift.X
    P = np.eye(3, dtype=int)[perm]
    assert repulsion.compare_matched(X, lift.Y, P) == repulsion.compare_matched(X, lift.Y, perm)
    with pytest.raises(InvalidInputError):
        repulsion.compare_matched(lift.X, lift.Y, np.arange(3))
    with pytest.raises(InvalidInputError):
        repulsion.compare_matched(X, lift.Y, np.array([0, 0, 1]))


@pytest.mark.parametrize("seed", range(5))
def test_coupling_identity(seed):
    lift = geometry.random_lift(6, 4, 0.35, seed)
    residual, lhs, rhs = repulsion.dim_gap_coupling_check(lift, 1.1)
    assert residual <= 1e-12 * max(1.0, abs(lhs))


def test_scenarios():
    matched = geometry.init_etf(4, 5, 0.3)
    assert repulsion.classify_scenario(matched, 1.0).scenario == "closing"
    crossed = geometry.init_crossed_pairs(5, 3, 0.3, seed=42)
    rep = repulsion.classify_scenario(crossed, math.log(1 / 0.07))
    assert rep.scenario == "enlarging" and rep.dscale_dt < 0 and rep.delta_c == 0.6
    assert repulsion.classify_scenario(matched.with_gamma(0.0), 1.0).scenario == "stuck"
    state = repulsion.classify_state(crossed.X, crossed.Y, math.log(1 / 0.07))
    assert state.scenario == "enlarging" and state.delta_c == pytest.approx(0.6)


def test_type_checks():
    with pytest.raises(InvalidInputError):
        repulsion.dim_gap_coupling_check(np.eye(2), 0.0)
    with pytest.raises(InvalidInputError):
        repulsion.classify_scenario(np.eye(2), 0.0)
