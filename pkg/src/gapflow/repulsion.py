"""Instantaneous scale and gap dynamics for matched and mismatched pairs.

Matrices hold one sample per row. The similarity multiplier (the inverse
temperature) is called ``scale`` here and is parameterized as
``scale = exp(nu)``.
"""

from dataclasses import dataclass

import numpy as np

from . import loss as _loss
from ._validation import check_pair, check_scalar
from .exceptions import InvalidInputError
from .geometry import ParallelLift, _tangent_descent
from .metrics import _margin_unchecked

#: |dscale_dt| below this counts as zero when classifying
ZERO_THRESHOLD = 1e-12

SCENARIOS = ("enlarging", "stuck", "closing")


def _trace_form(X, Y, scale):
    Z = X @ Y.T
    return float(np.vdot(Z, _loss._grad_unchecked(scale * Z)))


def dscale_dt(X, Y, nu):
    """Rate of change of ``scale = exp(nu)`` under gradient flow on ``nu``.

    ``dscale/dt = scale * dnu/dt = -scale^2 <X Y^T, grad_loss(scale X Y^T)>``.
    Zero for a single pair, positive whenever every pair is matched.
    """
    X, Y = check_pair(X, Y)
    nu = check_scalar(nu, "nu")
    scale = float(np.exp(nu))
    return -scale * scale * _trace_form(X, Y, scale)


def _as_permutation(P, n):
    P = np.asarray(P)
    if P.ndim == 2:
        if P.shape != (n, n) or not np.all((P == 0) | (P == 1)):
            raise InvalidInputError("P must be an n x n 0/1 permutation matrix")
        if not (np.all(P.sum(axis=0) == 1) and np.all(P.sum(axis=1) == 1)):
            raise InvalidInputError("P is not a permutation matrix")
        return np.argmax(P, axis=1)
    if P.shape != (n,) or not np.issubdtype(P.dtype, np.integer):
        raise InvalidInputError("P must be an integer index array of length n")
    if not np.array_equal(np.sort(P), np.arange(n)):
        raise InvalidInputError("P is not a permutation of 0..n-1")
    return P


def compare_matched(X, Y, P, nu=0.0):
    """Scale rates of a mismatched arrangement and of its matched reordering.

    ``P`` (index array or permutation matrix) reorders the rows of ``X`` so
    that ``X[P]`` is perfectly matched with ``Y`` while ``X`` is not.
    Returns ``(d_mismatched, d_matched)``; the matched rate is the larger.
    """
    X, Y = check_pair(X, Y)
    perm = _as_permutation(P, X.shape[0])
    Xp = X[perm]
    if X.shape[0] < 2:
        raise InvalidInputError("need at least two pairs")
    if not _margin_unchecked(Xp @ Y.T) > 0:
        raise InvalidInputError("X[P] is not perfectly matched with Y")
    if _margin_unchecked(X @ Y.T) > 0:
        raise InvalidInputError("X is already perfectly matched with Y")
    return dscale_dt(X, Y, nu), dscale_dt(Xp, Y, nu)


def _flow_velocity(X, Y, scale):
    Z = X @ Y.T
    G = _loss._grad_unchecked(scale * Z)
    return _tangent_descent(X, scale * (G @ Y)), _tangent_descent(Y, scale * (G.T @ X))


def dim_gap_coupling_check(lift, nu):
    """Residual of the coupling between the parallel-coordinate gap and the scale.

    The left side is ``d(gamma_X - gamma_Y)/dt`` read off the Riemannian flow
    of the lifted embeddings (mean velocity of the last coordinate); the
    right side is ``Delta_c / (n scale) * (-dscale/dt)``. Returns
    ``(residual, lhs, rhs)``.
    """
    if not isinstance(lift, ParallelLift):
        raise InvalidInputError("dim_gap_coupling_check expects a ParallelLift")
    nu = check_scalar(nu, "nu")
    X, Y = lift.X, lift.Y
    n = X.shape[0]
    scale = float(np.exp(nu))
    dX, dY = _flow_velocity(X, Y, scale)
    lhs = float(dX[:, -1].mean() - dY[:, -1].mean())
    delta_c = 2.0 * lift.gamma
    rhs = delta_c / (n * scale) * (scale * scale * _trace_form(X, Y, scale))
    return abs(lhs - rhs), lhs, rhs


@dataclass(frozen=True)
class ScaleDynamicsReport:
    s: float
    dscale_dt: float
    delta_c: float
    scenario: str


def _scenario(rate, delta_c):
    if abs(rate) < ZERO_THRESHOLD or delta_c == 0.0:
        return "stuck"
    return "enlarging" if rate < 0 else "closing"


def classify_scenario(lift, nu):
    """Sign pattern of the scale and gap dynamics at a parallel configuration.

    ``enlarging`` when the scale shrinks with a nonzero gap, ``closing`` when
    the scale grows, ``stuck`` when either the scale rate or the gap is zero.
    """
    if not isinstance(lift, ParallelLift):
        raise InvalidInputError("classify_scenario expects a ParallelLift")
    nu = check_scalar(nu, "nu")
    X, Y = lift.X, lift.Y
    scale = float(np.exp(nu))
    trace = _trace_form(X, Y, scale)
    rate = -scale * scale * trace
    delta_c = 2.0 * lift.gamma
    return ScaleDynamicsReport(trace, rate, delta_c, _scenario(rate, delta_c))


def classify_state(X, Y, nu):
    """:func:`classify_scenario` for general embeddings, using the last-coordinate gap."""
    X, Y = check_pair(X, Y)
    scale = float(np.exp(check_scalar(nu, "nu")))
    trace = _trace_form(X, Y, scale)
    rate = -scale * scale * trace
    delta_c = float(X[:, -1].mean() - Y[:, -1].mean())
    return ScaleDynamicsReport(trace, rate, delta_c, _scenario(rate, delta_c))
