"""Temperature-control schemes and modality swapping for the simulator."""

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ._validation import check_int, check_pair, check_scalar
from .exceptions import InvalidInputError
from .geometry import STREAM_SWAP_MASK, STREAM_SWAP_VALUES, make_rng, renormalize

TEMPERATURE_KINDS = (
    "learned_exp",
    "learned_scaled_exp",
    "learned_softplus",
    "fixed",
    "linear_schedule",
    "scaled_lr",
)
LEARNED_KINDS = ("learned_exp", "learned_scaled_exp", "learned_softplus", "scaled_lr")
SWAP_KINDS = ("none", "hard", "soft")

#: CLIP-style clamp on the learned inverse temperature, 1 / tau_min with tau_min = 0.01
DEFAULT_BETA_MAX = 100.0


@dataclass(frozen=True)
class TemperatureScheme:
    """How the inverse temperature ``beta`` depends on ``nu`` and time.

    ``learned_*`` kinds evolve ``nu`` under the flow; ``fixed`` and
    ``linear_schedule`` freeze it. ``beta_max`` caps learned schemes
    (``None`` disables the cap); once the cap binds, ``nu`` stops moving.
    """

    kind: str = "learned_exp"
    s: float = 1.0
    tau_star: float = 0.07
    tau0: float = 1e-2
    tau1: float = 5e-2
    lr: float = 1.0
    beta_max: Optional[float] = DEFAULT_BETA_MAX

    def __post_init__(self):
        if self.kind not in TEMPERATURE_KINDS:
            raise InvalidInputError(f"unknown temperature scheme {self.kind!r}")
        check_scalar(self.s, "s", low=1.0)
        check_scalar(self.tau_star, "tau_star", low=0.0, low_open=True)
        check_scalar(self.tau0, "tau0", low=0.0, low_open=True)
        check_scalar(self.tau1, "tau1", low=0.0, low_open=True)
        check_scalar(self.lr, "lr", low=0.0, low_open=True)
        if self.beta_max is not None:
            check_scalar(self.beta_max, "beta_max", low=0.0, low_open=True)

    @property
    def learned(self):
        return self.kind in LEARNED_KINDS

    def to_dict(self):
        return asdict(self)

    def value(self, nu, t=0.0, horizon=None):
        return scheme_value(self, nu, t, horizon)


def scheme_value(scheme, nu, t=0.0, horizon=None):
    """Return ``(beta, dbeta/dnu, lr_scale)`` for the scheme at ``(nu, t)``.

    Frozen schemes report ``dbeta/dnu = 0`` and ``lr_scale = 0`` so the flow
    of ``nu`` vanishes.
    """
    kind = scheme.kind
    if kind in ("learned_exp", "scaled_lr"):
        beta = np.exp(nu)
        out = (beta, beta, scheme.lr if kind == "scaled_lr" else 1.0)
    elif kind == "learned_scaled_exp":
        beta = np.exp(nu / scheme.s)
        out = (beta, beta / scheme.s, 1.0)
    elif kind == "learned_softplus":
        out = (np.logaddexp(0.0, nu), 0.5 * (1.0 + np.tanh(0.5 * nu)), 1.0)
    elif kind == "fixed":
        return (1.0 / scheme.tau_star, 0.0, 0.0)
    else:
        if horizon is None or horizon <= 0:
            raise InvalidInputError("linear_schedule needs a positive horizon")
        tau = scheme.tau0 + (t / horizon) * (scheme.tau1 - scheme.tau0)
        return (1.0 / tau, 0.0, 0.0)
    beta, dbeta, lr = (float(v) for v in out)
    if scheme.beta_max is not None and beta >= scheme.beta_max:
        return (float(scheme.beta_max), 0.0, 0.0)
    return (beta, dbeta, lr)


def nu_for_beta(scheme, beta):
    """Inverse of the learned parameterization: the ``nu`` giving ``beta``."""
    beta = check_scalar(beta, "beta", low=0.0, low_open=True)
    if scheme.kind in ("learned_exp", "scaled_lr"):
        return float(np.log(beta))
    if scheme.kind == "learned_scaled_exp":
        return float(scheme.s * np.log(beta))
    if scheme.kind == "learned_softplus":
        return float(beta + np.log(-np.expm1(-beta)))
    return 0.0


@dataclass(frozen=True)
class SwapScheme:
    """Which swap transform is applied, and on what fraction ``p`` of steps."""

    kind: str = "none"
    p: float = 0.0
    renormalize_after_swap: bool = True

    def __post_init__(self):
        if self.kind not in SWAP_KINDS:
            raise InvalidInputError(f"unknown swap scheme {self.kind!r}")
        check_scalar(self.p, "p", low=0.0, high=1.0)

    @property
    def active(self):
        return self.kind != "none" and self.p > 0.0

    def to_dict(self):
        return asdict(self)


def swap_step_mask(p, total_steps, seed):
    """Per-step Bernoulli(p) activity flags, deterministic per seed."""
    p = check_scalar(p, "p", low=0.0, high=1.0)
    total_steps = check_int(total_steps, "total_steps", low=0)
    return make_rng(seed, STREAM_SWAP_MASK).random(total_steps) < p


def swap_weights(kind, shape, rng):
    """Mixing weights ``lam``: Bernoulli(0.5) in {0, 1} for hard, Uniform[0, 1] for soft."""
    if kind == "hard":
        return (rng.random(shape) >= 0.5).astype(np.float64)
    if kind == "soft":
        return rng.random(shape)
    raise InvalidInputError(f"no weights for swap kind {kind!r}")


def mix(X, Y, lam, renorm=True):
    """``X' = lam*X + (1-lam)*Y`` and ``Y' = lam*Y + (1-lam)*X`` entrywise."""
    Xs = lam * X + (1.0 - lam) * Y
    Ys = lam * Y + (1.0 - lam) * X
    if renorm:
        Xs, Ys = renormalize(Xs), renormalize(Ys)
    return Xs, Ys


def hard_swap(X, Y, active=True, seed=0, renorm=True):
    """Exchange each coordinate pair ``(X[i,j], Y[i,j])`` with probability 0.5."""
    X, Y = check_pair(X, Y, unit=False)
    if not active:
        return X.copy(), Y.copy()
    lam = swap_weights("hard", X.shape, make_rng(seed, STREAM_SWAP_VALUES))
    return mix(X, Y, lam, renorm)


def soft_swap(X, Y, active=True, seed=0, lam=None, renorm=True):
    """Convex entrywise mixing with ``lam ~ Uniform[0, 1]`` (or a supplied ``lam``)."""
    X, Y = check_pair(X, Y, unit=False)
    if not active:
        return X.copy(), Y.copy()
    if lam is None:
        lam = swap_weights("soft", X.shape, make_rng(seed, STREAM_SWAP_VALUES))
    else:
        lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), X.shape)
    return mix(X, Y, lam, renorm)
