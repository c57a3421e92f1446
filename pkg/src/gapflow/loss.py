"""Symmetric contrastive cross-entropy loss and the alignment functionals.

Conventions: ``M`` is an n x n logit matrix whose row ``i`` holds the scaled
similarities of sample ``i`` of the first modality against every sample of
the second one. Indices are 0-based.
"""

import math
from collections import Counter

import numpy as np
from scipy.special import logsumexp, softmax

from ._validation import check_int, check_scalar, check_square
from .exceptions import InvalidInputError


def sym_ce_loss(M):
    """Mean of the row-wise and column-wise CE losses with diagonal targets.

    ``l(M) = 1/(2n) * sum_i [CE(M[:, i], e_i) + CE(M[i, :], e_i)]``.
    Log-sum-exp is max-shifted, so logits of magnitude several hundred are safe.
    """
    M = check_square(M)
    n = M.shape[0]
    diag = np.diag(M)
    rows = logsumexp(M, axis=1) - diag
    cols = logsumexp(M, axis=0) - diag
    return float((rows.sum() + cols.sum()) / (2 * n))


def _softmaxes(M):
    return softmax(M, axis=0), softmax(M, axis=1)


def grad_loss_parts(M):
    """Split of the loss gradient into a row-softmax and a column-softmax part.

    Returns ``(P, Q)`` with ``P = (rowsoftmax(M) - I) / 2n`` and
    ``Q = (colsoftmax(M) - I) / 2n``, so ``grad_loss(M) = P + Q``. Every row
    of ``P`` and every column of ``Q`` sums to zero.
    """
    M = check_square(M)
    n = M.shape[0]
    col, row = _softmaxes(M)
    eye = np.eye(n)
    return (row - eye) / (2 * n), (col - eye) / (2 * n)


def grad_loss(M):
    """Exact gradient of :func:`sym_ce_loss` with respect to ``M``."""
    M = check_square(M)
    n = M.shape[0]
    col, row = _softmaxes(M)
    G = (col + row) / (2 * n)
    G[np.diag_indices(n)] -= 1.0 / n
    return G


def _grad_unchecked(M):
    n = M.shape[0]
    G = (softmax(M, axis=0) + softmax(M, axis=1)) / (2 * n)
    G[np.diag_indices(n)] -= 1.0 / n
    return G


def mu(z, i, a):
    """``<z, e_i - softmax(a z)>`` for a single logit direction ``z``."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size < 1 or not np.all(np.isfinite(z)):
        raise InvalidInputError("z must be a finite 1-D vector")
    i = check_int(i, "i", low=0)
    if i >= z.size:
        raise InvalidInputError(f"index {i} out of range for length {z.size}")
    a = check_scalar(a, "a", low=0.0)
    return float(z[i] - np.dot(z, softmax(a * z)))


def g_align(Z, a):
    """Alignment functional ``g_a(Z) = -<Z, grad_loss(a Z)>``.

    Computed from the row/column decomposition
    ``1/(2n) * sum_i [mu_i(Z[:, i], a) + mu_i(Z[i, :], a)]``.
    Nonnegative whenever every diagonal entry dominates its row and column.
    """
    Z = check_square(Z, "Z")
    a = check_scalar(a, "a", low=0.0)
    return _g_align_unchecked(Z, a)


def _g_align_unchecked(Z, a):
    n = Z.shape[0]
    col, row = _softmaxes(a * Z)
    diag = np.diag(Z)
    # weighted sums of (Z_ii - Z_ij) avoid cancelling two nearly equal numbers
    mu_cols = np.einsum("ji,ji->i", diag[None, :] - Z, col)
    mu_rows = np.einsum("ij,ij->i", diag[:, None] - Z, row)
    return float((mu_cols.sum() + mu_rows.sum()) / (2 * n))


class FrozenAlignment:
    """Fast evaluator of ``a -> g_a(Z)`` for a fixed correlation matrix.

    Each of the 2n row/column terms depends only on the diagonal entry and on
    the multiset of entries of that row or column, so identical terms are
    grouped once up front. Structured matrices (ETF grams, constant
    off-diagonals) collapse to a handful of scalar exponentials per call;
    anything else falls back to the dense computation.
    """

    #: grouped evaluation is used only below this many distinct (value, count) pairs
    max_compressed_terms = 256

    def __init__(self, Z):
        self.Z = check_square(Z, "Z")
        n = self.Z.shape[0]
        self.n = n
        groups = Counter()
        for i in range(n):
            for vec in (self.Z[i, :], self.Z[:, i]):
                key = (float(vec[i]), tuple(sorted(Counter(vec.tolist()).items())))
                groups[key] += 1
        n_terms = sum(len(values) for _, values in groups)
        self.compressed = n_terms <= self.max_compressed_terms
        if self.compressed:
            self._groups = [
                (weight / (2 * n), diag, [v for v, _ in values], [c for _, c in values])
                for (diag, values), weight in groups.items()
            ]

    def __call__(self, a):
        if not self.compressed:
            return _g_align_unchecked(self.Z, a)
        total = 0.0
        for weight, diag, values, counts in self._groups:
            top = max(values)
            num = 0.0
            den = 0.0
            for v, c in zip(values, counts):
                e = c * math.exp(a * (v - top))
                num += (diag - v) * e
                den += e
            total += weight * num / den
        return total
