"""Scalar observables of a two-modality configuration."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import check_matrix, check_pair, check_square
from .exceptions import InvalidInputError
from .geometry import ParallelLift

#: normalization of the sample covariance used by :func:`uniformity`
COVARIANCE_NORMALIZATION = "population (1/N)"


@dataclass(frozen=True)
class GapReport:
    delta: float
    per_dim: np.ndarray
    gamma_lower: Optional[float] = None


def modality_gap(X, Y=None):
    """Distance between the modality centers.

    ``X`` may also be a :class:`~gapflow.geometry.ParallelLift`, in which
    case the report also carries the lower bound ``2 * gamma``.
    """
    gamma_lower = None
    if isinstance(X, ParallelLift):
        gamma_lower = 2.0 * X.gamma
        X, Y = X.X, X.Y
    X, Y = check_pair(X, Y, unit=False)
    diff = X.mean(axis=0) - Y.mean(axis=0)
    return GapReport(float(np.linalg.norm(diff)), diff, gamma_lower)


def margin(Z):
    """``min_{i != j} min(Z_ii - Z_ij, Z_jj - Z_ij)``; positive iff perfectly matched."""
    Z = check_square(Z, "Z")
    n = Z.shape[0]
    if n < 2:
        raise InvalidInputError("margin is undefined for fewer than two pairs")
    return _margin_unchecked(Z)


def _margin_unchecked(Z):
    diag = np.diag(Z)
    gaps = np.minimum.outer(diag, diag) - Z
    np.fill_diagonal(gaps, np.inf)
    return float(gaps.min())


def violated_pairs(Z):
    """Number of ordered off-diagonal entries that beat their row or column diagonal."""
    Z = check_square(Z, "Z")
    diag = np.diag(Z)
    bad = (Z >= diag[:, None]) | (Z >= diag[None, :])
    np.fill_diagonal(bad, False)
    return int(bad.sum())


def uniformity(X, Y):
    """Negated quadratic Wasserstein distance to the isotropic Gaussian ``N(0, I/m)``.

    Mean and covariance are estimated from the 2n stacked embeddings; the
    covariance square root uses a symmetric eigendecomposition with negative
    eigenvalues clamped to zero.
    """
    X = check_matrix(X, "X")
    Y = check_matrix(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise InvalidInputError("X and Y must share the feature dimension")
    return _uniformity_unchecked(np.vstack([X, Y]))


def _uniformity_unchecked(Zall):
    m = Zall.shape[1]
    mean = Zall.mean(axis=0)
    centered = Zall - mean
    cov = centered.T @ centered / Zall.shape[0]
    try:
        eig = np.linalg.eigvalsh(cov)
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(f"covariance eigendecomposition failed: {exc}") from exc
    sqrt_trace = np.sqrt(np.clip(eig, 0.0, None)).sum()
    w2_sq = mean @ mean + 1.0 + np.trace(cov) - 2.0 / np.sqrt(m) * sqrt_trace
    return -float(np.sqrt(max(w2_sq, 0.0)))


def per_dim_gap(lift):
    """Gap along the shared coordinate, ``gamma_X - gamma_Y = 2 gamma``."""
    if not isinstance(lift, ParallelLift):
        raise InvalidInputError("per_dim_gap expects a ParallelLift")
    return 2.0 * lift.gamma
