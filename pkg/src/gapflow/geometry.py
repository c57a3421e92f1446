"""Sampling, structured initializers and sphere operations.

Random streams
--------------
All randomness goes through :func:`make_rng`, which builds a numpy ``PCG64``
generator from ``SeedSequence(seed, spawn_key=(stream,))``. Every random
matrix of an experiment draws from its own stream index, so adding a new
random quantity never shifts the values of the existing ones.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_int, check_matrix, check_pair, check_scalar
from .exceptions import DegenerateStateError, InvalidInputError

RNG_NAME = "numpy.PCG64/SeedSequence"
RNG_VERSION = 1

# stream indices used by the package; one per random matrix
STREAM_X = 0
STREAM_Y = 1
STREAM_PERM = 2
STREAM_SWAP_MASK = 3
STREAM_SWAP_VALUES = 4
STREAM_TRIALS = 5


def make_rng(seed, stream=0):
    """Return an independent ``numpy.random.Generator`` for ``(seed, stream)``."""
    if isinstance(seed, np.random.Generator):
        return seed
    seed = check_int(seed, "seed", low=0)
    stream = check_int(stream, "stream", low=0)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def sample_uniform_sphere(n, d, seed, stream=STREAM_X):
    """Draw ``n`` i.i.d. points uniformly on the unit sphere in ``R^d``."""
    n = check_int(n, "n", low=1)
    d = check_int(d, "d", low=2)
    G = make_rng(seed, stream).standard_normal((n, d))
    return renormalize(G)


def renormalize(X):
    """Divide every row by its Euclidean norm (retraction onto the sphere)."""
    X = check_matrix(X, "X")
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateStateError("cannot renormalize a zero-norm row")
    return X / norms


def riemannian_direction(X, euclid_grad):
    """Negative Riemannian gradient on the product of spheres.

    Row ``i`` is ``-(I - x_i x_i^T) euclid_grad_i``.
    """
    X = check_matrix(X, "X")
    euclid_grad = check_matrix(euclid_grad, "euclid_grad")
    if X.shape != euclid_grad.shape:
        raise InvalidInputError("X and euclid_grad shapes differ")
    return _tangent_descent(X, euclid_grad)


def _tangent_descent(X, E):
    radial = np.einsum("ij,ij->i", X, E)
    return radial[:, None] * X - E


@dataclass(frozen=True)
class ParallelLift:
    """Two modalities sharing a last coordinate ``+gamma`` / ``-gamma``.

    Lifted rows are ``[sqrt(1 - gamma^2) * h, +gamma]`` for the first
    modality and ``[sqrt(1 - gamma^2) * h, -gamma]`` for the second, so the
    lifted dimension is one more than the base dimension.
    """

    base_X: np.ndarray
    base_Y: np.ndarray
    gamma: float

    def __post_init__(self):
        bx, by = check_pair(self.base_X, self.base_Y)
        g = check_scalar(self.gamma, "gamma", low=-1.0, high=1.0)
        object.__setattr__(self, "base_X", bx)
        object.__setattr__(self, "base_Y", by)
        object.__setattr__(self, "gamma", g)

    def _lift(self, H, last):
        scale = np.sqrt(1.0 - self.gamma**2)
        return np.hstack([scale * H, np.full((H.shape[0], 1), last)])

    @property
    def X(self):
        return self._lift(self.base_X, self.gamma)

    @property
    def Y(self):
        return self._lift(self.base_Y, -self.gamma)

    @property
    def base_gram(self):
        return self.base_X @ self.base_Y.T

    def with_gamma(self, gamma):
        return ParallelLift(self.base_X, self.base_Y, gamma)


def init_bipolar_circulant(n, theta0):
    """Equally spaced bipolar initialization in ``R^3``.

    ``x_i = (s cos phi_i, s sin phi_i, c)`` and ``y_i`` equal except for the
    last coordinate ``-c``, with ``s = sin(theta0)``, ``c = cos(theta0)`` and
    ``phi_i = 2 pi i / n``. Returns ``(X, Y, u)`` where ``u_i = cos(phi_i)``
    is the first row of the circulant cross-section gram, so that
    ``<x_i, y_j> = s^2 u[(i - j) % n] - c^2``.
    """
    n = check_int(n, "n", low=2)
    theta0 = check_scalar(theta0, "theta0", low=0.0, high=np.pi / 2, low_open=True)
    phi = 2.0 * np.pi * np.arange(n) / n
    s, c = np.sin(theta0), np.cos(theta0)
    ring = np.column_stack([s * np.cos(phi), s * np.sin(phi)])
    X = np.column_stack([ring, np.full(n, c)])
    Y = np.column_stack([ring, np.full(n, -c)])
    return X, Y, np.cos(phi)


def etf_gram(n):
    """Exact simplex-ETF gram: ones on the diagonal, ``-1/(n-1)`` elsewhere."""
    n = check_int(n, "n", low=2)
    Z = np.full((n, n), -1.0 / (n - 1))
    np.fill_diagonal(Z, 1.0)
    return Z


def simplex_etf(n, dim):
    """``n`` unit vectors in ``R^dim`` with pairwise inner product ``-1/(n-1)``.

    Built from an orthonormal basis of the range of the centering matrix
    ``I - 11^T/n`` (rank ``n - 1``), zero-padded to ``dim`` coordinates.
    """
    n = check_int(n, "n", low=2)
    dim = check_int(dim, "dim", low=1)
    if dim < n - 1:
        raise InvalidInputError(f"a simplex ETF of {n} points needs dim >= {n - 1}, got {dim}")
    C = np.eye(n) - np.full((n, n), 1.0 / n)
    Q, _ = np.linalg.qr(C[:, : n - 1])
    E = np.sqrt(n / (n - 1)) * (C @ Q)
    out = np.zeros((n, dim))
    out[:, : n - 1] = E
    return renormalize(out)


def init_etf(n, d, gamma0):
    """Perfectly matched ETF configuration lifted to ``R^d`` at height ``gamma0``."""
    n = check_int(n, "n", low=2)
    d = check_int(d, "d", low=2)
    if d < n:
        raise InvalidInputError(f"init_etf needs d >= n, got d={d}, n={n}")
    E = simplex_etf(n, d - 1)
    return ParallelLift(E, E.copy(), gamma0)


def random_lift(n, d, gamma0, seed):
    """Lift of two independent uniform samples on ``S^{d-1}``; lifted dim is ``d + 1``."""
    return ParallelLift(
        sample_uniform_sphere(n, d, seed, STREAM_X),
        sample_uniform_sphere(n, d, seed, STREAM_Y),
        gamma0,
    )


def init_crossed_pairs(n, d, gamma0, seed, shift=1):
    """Parallel configuration in which every ground-truth pair is mismatched.

    Base points ``b_k`` are equally spaced on a circle (``d = 3``) or drawn
    uniformly from ``S^{d-2}``; the first modality sits on ``b_k`` and the second on the
    cyclically shifted ``b_{k + shift}``, so sample ``i`` of one modality is
    closest to sample ``i - shift`` of the other. A small seeded rotation of
    the ring breaks exact symmetries.
    """
    n = check_int(n, "n", low=2)
    d = check_int(d, "d", low=3)
    shift = check_int(shift, "shift")
    if shift % n == 0:
        raise InvalidInputError("shift must not be a multiple of n")
    rng = make_rng(seed, STREAM_X)
    if d == 3:
        phase = rng.uniform(0.0, 2.0 * np.pi)
        jitter = rng.uniform(-0.15, 0.15, size=n) * (2.0 * np.pi / n)
        phi = phase + 2.0 * np.pi * np.arange(n) / n + jitter
        base = np.column_stack([np.cos(phi), np.sin(phi)])
    else:
        base = sample_uniform_sphere(n, d - 1, seed, STREAM_X)
    base_y = np.roll(base, -shift, axis=0)
    return ParallelLift(base, base_y, gamma0)
