import math

import numpy as np
import pytest

from gapflow import geometry, mitigate
from gapflow.exceptions import InvalidInputError
from gapflow.mitigate import SwapScheme, TemperatureScheme


@pytest.mark.parametrize("kind", ["learned_exp", "learned_scaled_exp", "learned_softplus", "scaled_lr"])
def test_learned_derivative_matches_finite_difference(kind):
    scheme = TemperatureScheme(kind=kind, s=3.0, lr=0.5, beta_max=None)
    h = 1e-6
    for nu in (-2.0, 0.3, 2.5):
        beta, dbeta, lr = scheme.value(nu)
        fd = (scheme.value(nu + h)[0] - scheme.value(nu - h)[0]) / (2 * h)
        assert dbeta == pytest.approx(fd, rel=1e-8)
        assert lr == (0.5 if kind == "scaled_lr" else 1.0)


@pytest.mark.parametrize("kind", ["learned_exp", "learned_scaled_exp", "learned_softplus", "scaled_lr"])
def test_nu_for_beta_round_trip(kind):
    scheme = TemperatureScheme(kind=kind, s=2.0, beta_max=None)
    for beta in (0.5, 1.0, 14.2857):
        assert scheme.value(mitigate.nu_for_beta(scheme, beta))[0] == pytest.approx(beta, rel=1e-12)


def test_fixed_and_linear_schedule_freeze_nu():
    assert TemperatureScheme(kind="fixed", tau_star=0.04).value(5.0) == (25.0, 0.0, 0.0)
    lin = TemperatureScheme(kind="linear_schedule", tau0=0.01, tau1=0.05)
    assert lin.value(0.0, t=0.0, horizon=10.0)[0] == pytest.approx(100.0)
    assert lin.value(0.0, t=10.0, horizon=10.0)[0] == pytest.approx(20.0)
    assert lin.value(0.0, t=5.0, horizon=10.0)[1:] == (0.0, 0.0)
    with pytest.raises(InvalidInputError):
        lin.value(0.0, t=1.0)


def test_cap_binds():
    scheme = TemperatureScheme(beta_max=100.0)
    assert scheme.value(math.log(50.0))[1] > 0
    assert scheme.value(math.log(200.0)) == (100.0, 0.0, 0.0)


def test_scheme_validation():
    with pytest.raises(InvalidInputError):
        TemperatureScheme(kind="cosine")
    with pytest.raises(InvalidInputError):
        TemperatureScheme(s=0.5)
    with pytest.raises(InvalidInputError):
        SwapScheme(kind="hard", p=1.5)


def test_hard_swap_exchanges_entries():
    X = geometry.sample_uniform_sphere(6, 4, seed=0, stream=0)
    Y = geometry.sample_uniform_sphere(6, 4, seed=0, stream=1)
    Xs, Ys = mitigate.hard_swap(X, Y, seed=3, renorm=False)
    from_x = np.isclose(Xs, X)
    assert np.all(from_x | np.isclose(Xs, Y))
    assert np.allclose(Xs + Ys, X + Y)
    assert 0 < from_x.sum() < X.size
    Xr, Yr = mitigate.hard_swap(X, Y, seed=3)
    assert np.allclose(np.linalg.norm(Xr, axis=1), 1.0)


def test_soft_swap_half_mix_collapses_pairs():
    X = geometry.sample_uniform_sphere(5, 3, seed=1, stream=0)
    Y = geometry.sample_uniform_sphere(5, 3, seed=1, stream=1)
    Xs, Ys = mitigate.soft_swap(X, Y, lam=0.5)
    assert np.allclose(Xs, Ys)
    Xi, Yi = mitigate.soft_swap(X, Y, active=False)
    assert np.array_equal(Xi, X) and np.array_equal(Yi, Y)


def test_soft_swap_weights_uniform():
    lam = mitigate.swap_weights("soft", (20000,), geometry.make_rng(0))
    assert lam.min() >= 0.0 and lam.max() < 1.0
    assert lam.mean() == pytest.approx(0.5, abs=0.01)


def test_swap_mask_rate_and_determinism():
    a = mitigate.swap_step_mask(0.1, 20000, seed=5)
    b = mitigate.swap_step_mask(0.1, 20000, seed=5)
    assert np.array_equal(a, b)
    assert a.mean() == pytest.approx(0.1, abs=0.01)
    assert not mitigate.swap_step_mask(0.0, 100, seed=5).any()
