"""Simulation and verification toolkit for the modality-gap dynamics of contrastive learning.

Modules
-------
loss        symmetric contrastive loss, its gradient and the alignment functionals
geometry    sphere sampling, structured initializers, tangent projection
metrics     modality gap, margin, uniformity
dynamics    RK4 integrators for the full, scalar and reduced flows
mitigate    temperature schemes and modality swapping
theory      closed-form bounds, special functions, Monte Carlo checks
repulsion   scale dynamics of matched and mismatched pairs
cli         the ``gapflow`` command
"""

__version__ = "0.1.0"

from .dynamics import (
    ReducedState,
    ScalarState,
    TrajectoryRecord,
    UfmState,
    integrate_reduced,
    integrate_scalar,
    integrate_ufm,
)
from .exceptions import (
    ConstantsInvalidError,
    DegenerateStateError,
    IntegrationDivergedError,
    InvalidInputError,
    InvariantViolationError,
)
from .loss import g_align, grad_loss, mu, sym_ce_loss
from .metrics import margin, modality_gap, uniformity
from .mitigate import SwapScheme, TemperatureScheme

__all__ = [
    "ConstantsInvalidError",
    "DegenerateStateError",
    "IntegrationDivergedError",
    "InvalidInputError",
    "InvariantViolationError",
    "ReducedOrderFlow",
    "ReducedState",
    "ScalarGapFlow",
    "ScalarState",
    "SwapScheme",
    "TemperatureScheme",
    "TrajectoryRecord",
    "UFMGradientFlow",
    "UfmState",
    "g_align",
    "grad_loss",
    "integrate_reduced",
    "integrate_scalar",
    "integrate_ufm",
    "margin",
    "modality_gap",
    "mu",
    "sym_ce_loss",
    "uniformity",
]


_ESTIMATORS = ("ReducedOrderFlow", "ScalarGapFlow", "UFMGradientFlow")


def __getattr__(name):
    # scikit-learn is only imported when an estimator is requested
    if name in _ESTIMATORS:
        from . import estimators

        return getattr(estimators, name)
    raise AttributeError(f"module 'gapflow' has no attribute {name!r}")
