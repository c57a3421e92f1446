import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import sqrtm

from gapflow import geometry, metrics
from gapflow.exceptions import InvalidInputError


def w2_gaussian(X, Y):
    """W2 between N(mean, cov) of the stacked rows and N(0, I/m), via sqrtm."""
    Z = np.vstack([X, Y])
    m = Z.shape[1]
    mean = Z.mean(axis=0)
    cov = np.cov(Z.T, bias=True)
    ref = np.eye(m) / m
    root = sqrtm(sqrtm(ref) @ cov @ sqrtm(ref))
    return np.sqrt(max(mean @ mean + np.trace(cov) + 1.0 - 2.0 * np.trace(root).real, 0.0))


def test_uniformity_against_sqrtm_oracle():
    for seed in range(5):
        X = geometry.sample_uniform_sphere(12, 4, seed, 0)
        Y = geometry.sample_uniform_sphere(12, 4, seed, 1)
        assert metrics.uniformity(X, Y) == pytest.approx(-w2_gaussian(X, Y), abs=1e-10)


def test_uniformity_of_isotropic_cross_is_zero():
    E = np.vstack([np.eye(3), -np.eye(3)])
    assert metrics.uniformity(E, E) == pytest.approx(0.0, abs=1e-12)


def test_uniformity_of_collapsed_points():
    X = np.tile([1.0, 0.0, 0.0], (4, 1))
    # mean e1, zero covariance: W2^2 = 1 + 1
    assert metrics.uniformity(X, X) == pytest.approx(-np.sqrt(2.0), rel=1e-14)


def test_modality_gap_parallel_lift():
    lift = geometry.init_etf(4, 5, 0.25)
    rep = metrics.modality_gap(lift)
    # ETF rows sum to zero, so only the shared coordinate contributes
    assert rep.delta == pytest.approx(0.5, abs=1e-13)
    assert rep.gamma_lower == 0.5
    assert metrics.per_dim_gap(lift) == 0.5


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(2, 5), st.floats(0.0, 0.99), st.integers(0, 1000))
def test_gap_bounded_below_by_twice_gamma(n, d, gamma, seed):
    lift = geometry.random_lift(n, d, gamma, seed)
    rep = metrics.modality_gap(lift)
    assert rep.delta >= rep.gamma_lower - 1e-12


def test_margin_and_violations():
    Z = geometry.etf_gram(4)
    assert metrics.margin(Z) == pytest.approx(1 + 1 / 3)
    assert metrics.violated_pairs(Z) == 0
    P = Z[[1, 0, 2, 3]]
    assert metrics.margin(P) < 0
    assert metrics.violated_pairs(P) > 0


def test_margin_brute_force():
    rng = np.random.default_rng(4)
    Z = rng.uniform(-1, 1, size=(5, 5))
    ref = min(min(Z[i, i], Z[j, j]) - Z[i, j] for i in range(5) for j in range(5) if i != j)
    assert metrics.margin(Z) == ref


def test_margin_needs_two_pairs():
    with pytest.raises(InvalidInputError):
        metrics.margin(np.ones((1, 1)))


def test_gap_input_validation():
    with pytest.raises(InvalidInputError):
        metrics.modality_gap(np.ones((3, 2)), np.ones((2, 2)))
    with pytest.raises(InvalidInputError):
        metrics.per_dim_gap(np.ones((2, 2)))
