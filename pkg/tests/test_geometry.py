import numpy as np
import pytest
from scipy import stats

from gapflow import geometry
from gapflow.exceptions import DegenerateStateError, InvalidInputError
from gapflow.metrics import margin


def test_sphere_samples_are_unit_and_deterministic():
    A = geometry.sample_uniform_sphere(50, 4, seed=7)
    B = geometry.sample_uniform_sphere(50, 4, seed=7)
    C = geometry.sample_uniform_sphere(50, 4, seed=7, stream=1)
    assert np.allclose(np.linalg.norm(A, axis=1), 1.0, atol=1e-15)
    assert np.array_equal(A, B)
    assert not np.allclose(A, C)


def test_sphere_last_coordinate_uniform_in_3d():
    # on S^2 every coordinate is uniform on [-1, 1]
    pts = geometry.sample_uniform_sphere(20000, 3, seed=0)
    counts, _ = np.histogram(pts[:, 2], bins=20, range=(-1, 1))
    assert stats.chisquare(counts).pvalue > 1e-3


def test_sphere_inner_products_follow_beta_law():
    # (1 + z) / 2 ~ Beta((d-1)/2, (d-1)/2) for independent uniform points
    d = 6
    U = geometry.sample_uniform_sphere(5000, d, seed=1, stream=0)
    V = geometry.sample_uniform_sphere(5000, d, seed=1, stream=1)
    z = np.einsum("ij,ij->i", U, V)
    dist = stats.beta((d - 1) / 2, (d - 1) / 2)
    assert stats.kstest((1 + z) / 2, dist.cdf).pvalue > 1e-3


def test_renormalize_rejects_zero_row():
    with pytest.raises(DegenerateStateError):
        geometry.renormalize(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_riemannian_direction_is_tangent():
    rng = np.random.default_rng(0)
    X = geometry.sample_uniform_sphere(8, 5, seed=2)
    E = rng.normal(size=X.shape)
    D = geometry.riemannian_direction(X, E)
    assert np.allclose(np.einsum("ij,ij->i", D, X), 0.0, atol=1e-14)
    # projection of -E onto the tangent space
    ref = np.stack([-(np.eye(5) - np.outer(x, x)) @ e for x, e in zip(X, E)])
    assert np.allclose(D, ref, atol=1e-14)


@pytest.mark.parametrize("n,dim", [(2, 1), (3, 2), (5, 4), (10, 12)])
def test_simplex_etf_gram(n, dim):
    E = geometry.simplex_etf(n, dim)
    assert E.shape == (n, dim)
    assert np.allclose(E @ E.T, geometry.etf_gram(n), atol=1e-13)


def test_simplex_etf_needs_room():
    with pytest.raises(InvalidInputError):
        geometry.simplex_etf(5, 3)


def test_parallel_lift_rows_and_heights():
    lift = geometry.random_lift(6, 3, 0.4, seed=0)
    assert lift.X.shape == (6, 4)
    assert np.allclose(np.linalg.norm(lift.X, axis=1), 1.0)
    assert np.allclose(np.linalg.norm(lift.Y, axis=1), 1.0)
    assert np.allclose(lift.X[:, -1], 0.4) and np.allclose(lift.Y[:, -1], -0.4)
    # lifted gram = (1 - gamma^2) base gram - gamma^2
    assert np.allclose(lift.X @ lift.Y.T, 0.84 * lift.base_gram - 0.16, atol=1e-14)


def test_init_etf_is_matched():
    lift = geometry.init_etf(5, 6, 0.3)
    Z = lift.X @ lift.Y.T
    assert margin(Z) > 0
    assert np.allclose(lift.base_gram, geometry.etf_gram(5), atol=1e-13)


def test_bipolar_circulant_identity():
    n, theta0 = 7, 0.4
    X, Y, u = geometry.init_bipolar_circulant(n, theta0)
    s2, c2 = np.sin(theta0) ** 2, np.cos(theta0) ** 2
    ref = np.array([[s2 * u[(i - j) % n] - c2 for j in range(n)] for i in range(n)])
    assert np.allclose(X @ Y.T, ref, atol=1e-14)
    assert np.allclose(np.linalg.norm(X, axis=1), 1.0)


def test_bipolar_circulant_allows_equator():
    X, Y, _ = geometry.init_bipolar_circulant(4, np.pi / 2)
    assert np.allclose(X, Y)


@pytest.mark.parametrize("d", [3, 5])
def test_crossed_pairs_are_fully_mismatched(d):
    lift = geometry.init_crossed_pairs(5, d, 0.3, seed=42)
    Z = lift.X @ lift.Y.T
    assert margin(Z) <= 0
    # every modality-one sample prefers a wrong partner
    assert np.all(np.argmax(Z, axis=1) != np.arange(5))


def test_crossed_pairs_rejects_trivial_shift():
    with pytest.raises(InvalidInputError):
        geometry.init_crossed_pairs(5, 3, 0.3, seed=0, shift=5)


def test_make_rng_accepts_generator():
    g = np.random.default_rng(0)
    assert geometry.make_rng(g) is g
    with pytest.raises(InvalidInputError):
        geometry.make_rng(-1)
