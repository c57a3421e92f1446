"""Input validation helpers shared by the functional API and the estimators."""

import numbers

import numpy as np

from .exceptions import InvalidInputError

UNIT_NORM_TOL = 1e-9


def check_square(M, name="M"):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise InvalidInputError(f"{name} must be a non-empty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return M


def check_matrix(X, name="X", min_rows=1, min_cols=1):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got ndim={X.ndim}")
    if X.shape[0] < min_rows or X.shape[1] < min_cols:
        raise InvalidInputError(f"{name} has shape {X.shape}; need at least ({min_rows}, {min_cols})")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return X


def check_feature_matrix(X, name="X", tol=UNIT_NORM_TOL):
    """Validate an n x d matrix of unit-norm rows and return it as float64."""
    X = check_matrix(X, name)
    err = np.max(np.abs(np.linalg.norm(X, axis=1) - 1.0))
    if err > tol:
        raise InvalidInputError(f"{name} rows are not unit norm (max error {err:.3g})")
    return X


def check_pair(X, Y, unit=True):
    check = check_feature_matrix if unit else check_matrix
    X = check(X, "X")
    Y = check(Y, "Y")
    if X.shape != Y.shape:
        raise InvalidInputError(f"X and Y shapes differ: {X.shape} vs {Y.shape}")
    return X, Y


def check_scalar(value, name, low=None, high=None, low_open=False, high_open=False):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise InvalidInputError(f"{name} must be a real scalar, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value):
        raise InvalidInputError(f"{name} must be finite")
    if low is not None and (value < low or (low_open and value == low)):
        raise InvalidInputError(f"{name}={value} below allowed range")
    if high is not None and (value > high or (high_open and value == high)):
        raise InvalidInputError(f"{name}={value} above allowed range")
    return value


def check_int(value, name, low=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise InvalidInputError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if low is not None and value < low:
        raise InvalidInputError(f"{name}={value} must be >= {low}")
    return value
