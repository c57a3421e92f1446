"""Closed-form quantities of the gap dynamics and their Monte Carlo checks.

Special functions are evaluated in log-space: the modified Bessel function
of the first kind by its ascending series, the gamma function through
:func:`math.lgamma`.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import loss as _loss
from ._validation import check_int, check_scalar
from .exceptions import ConstantsInvalidError
from .geometry import STREAM_TRIALS

#: stop the Bessel series once a term is this small relative to the partial sum
SERIES_RTOL = 1e-17
_MAX_SERIES_TERMS = 100_000


# --------------------------------------------------------------------------
# special functions


def log_gamma(x):
    """``log Gamma(x)`` for ``x > 0``."""
    x = check_scalar(x, "x", low=0.0, low_open=True)
    return math.lgamma(x)


def log_bessel_i(rho, a):
    """``log I_rho(a)`` from the ascending series, summed in log-space.

    ``I_rho(a) = sum_k (a/2)^(2k+rho) / (k! Gamma(k+rho+1))``. Terms grow
    until ``k ~ a/2`` and then decay; the loop stops once a term falls below
    :data:`SERIES_RTOL` times the running sum.
    """
    rho = check_scalar(rho, "rho", low=-0.5)
    a = check_scalar(a, "a", low=0.0, low_open=True)
    log_half = math.log(0.5 * a)
    two_log_half = 2.0 * log_half
    first = rho * log_half - math.lgamma(rho + 1.0)
    # accumulate relative to the first term, rescaling when a term overtakes it
    ref = first
    total = 1.0
    log_term = first
    for k in range(1, _MAX_SERIES_TERMS):
        log_term += two_log_half - math.log(k) - math.log(k + rho)
        rel = log_term - ref
        if rel > 0.0:
            total = total * math.exp(-rel) + 1.0
            ref = log_term
        else:
            term = math.exp(rel)
            total += term
            if k > 0.5 * a and term < SERIES_RTOL * total:
                break
    else:
        raise ArithmeticError(f"Bessel series did not converge for rho={rho}, a={a}")
    return ref + math.log(total)


def bessel_i(rho, a):
    """Modified Bessel function of the first kind ``I_rho(a)``, ``rho >= -1/2``, ``0 < a <= 200``."""
    check_scalar(a, "a", low=0.0, high=200.0, low_open=True)
    return math.exp(log_bessel_i(rho, a))


def sphere_ip_density(z, d):
    """Density of ``<u, v>`` for independent uniform ``u, v`` on ``S^{d-1}``.

    ``f(z) = Gamma(d/2) / (sqrt(pi) Gamma((d-1)/2)) * (1 - z^2)^((d-3)/2)``.
    Returns ``inf`` at ``z = +-1`` when ``d = 2``.
    """
    z = check_scalar(z, "z", low=-1.0, high=1.0)
    d = check_int(d, "d", low=2)
    log_norm = math.lgamma(d / 2.0) - 0.5 * math.log(math.pi) - math.lgamma((d - 1) / 2.0)
    base = 1.0 - z * z
    expo = (d - 3) / 2.0
    if base == 0.0:
        if expo < 0:
            return math.inf
        return math.exp(log_norm) if expo == 0 else 0.0
    return math.exp(log_norm + expo * math.log(base))


def _log_prefactor(a, d):
    rho = (d - 2) / 2.0
    return math.lgamma(d / 2.0) + rho * math.log(2.0 / a)


def log_expectation_exp(a, d):
    """``log E[exp(a z)]`` for the sphere inner-product law."""
    a = check_scalar(a, "a", low=0.0, low_open=True)
    d = check_int(d, "d", low=2)
    return _log_prefactor(a, d) + log_bessel_i((d - 2) / 2.0, a)


def log_expectation_z_exp(a, d):
    """``log E[z exp(a z)]`` (the quantity is positive for ``a > 0``).

    Uses ``I_{rho-1}(a) - (2 rho / a) I_rho(a) = I_{rho+1}(a)``, which avoids
    both the subtraction and the order ``-1`` needed when ``d = 2``.
    """
    a = check_scalar(a, "a", low=0.0, low_open=True)
    d = check_int(d, "d", low=2)
    return _log_prefactor(a, d) + log_bessel_i((d - 2) / 2.0 + 1.0, a)


def expectation_exp(a, d):
    """``xi2 = E[exp(a z)] = Gamma(d/2) (2/a)^rho I_rho(a)``, ``rho = (d-2)/2``."""
    return math.exp(log_expectation_exp(a, d))


def expectation_z_exp(a, d):
    """``xi1 = E[z exp(a z)] = Gamma(d/2) (2/a)^rho (I_{rho-1}(a) - (2 rho/a) I_rho(a))``."""
    return math.exp(log_expectation_z_exp(a, d))


def bessel_ratio(rho, a):
    """``I_{rho+1}(a) / I_rho(a)``."""
    return math.exp(log_bessel_i(rho + 1.0, a) - log_bessel_i(rho, a))


# --------------------------------------------------------------------------
# initial gap growth for random embeddings


@dataclass(frozen=True)
class Thm2Bound:
    n: int
    d: int
    beta0: float
    gamma0: float
    delta: float
    a: float
    rho: float
    epsilon: float
    xi1: float
    xi2: float
    bound: float
    asymptotic: float
    vacuous: bool

    def to_dict(self):
        return asdict(self)


def hoeffding_epsilon(n, delta):
    """``sqrt(log((4n + 1) / delta) / (2n))``."""
    n = check_int(n, "n", low=1)
    delta = check_scalar(delta, "delta", low=0.0, high=1.0, low_open=True, high_open=True)
    return math.sqrt(math.log((4 * n + 1) / delta) / (2 * n))


def thm2_bound(n, d, beta0, gamma0, delta):
    """High-probability lower bound on the initial gap growth rate.

    ``4 beta0 gamma0 ((xi1 - 2 e^a eps) / (xi2 + (e^a - e^-a) eps) - 2 eps)``
    with ``a = beta0 (1 - gamma0^2)``. Numerator and denominator are divided
    by ``e^a`` before evaluation so large ``a`` does not overflow. The
    ``n -> inf`` limit ``4 beta0 gamma0 I_{rho+1}(a) / I_rho(a)`` is reported
    alongside.
    """
    n = check_int(n, "n", low=1)
    d = check_int(d, "d", low=2)
    beta0 = check_scalar(beta0, "beta0", low=0.0, low_open=True)
    gamma0 = check_scalar(gamma0, "gamma0", low=0.0, high=1.0, low_open=True, high_open=True)
    eps = hoeffding_epsilon(n, delta)
    a = beta0 * (1.0 - gamma0 * gamma0)
    rho = (d - 2) / 2.0
    log_xi1 = log_expectation_z_exp(a, d)
    log_xi2 = log_expectation_exp(a, d)
    num = math.exp(log_xi1 - a) - 2.0 * eps
    den = math.exp(log_xi2 - a) + (1.0 - math.exp(-2.0 * a)) * eps
    scale = 4.0 * beta0 * gamma0
    bound = scale * (num / den - 2.0 * eps)
    asym = scale * math.exp(log_xi1 - log_xi2)
    return Thm2Bound(
        n, d, beta0, gamma0, float(delta), a, rho, eps,
        _exp_or_inf(log_xi1), _exp_or_inf(log_xi2), bound, asym, bound < 0.0,
    )


def _exp_or_inf(x):
    # the reported xi values may overflow even though the bound does not
    return math.exp(x) if x < 709.0 else math.inf


def initial_gap_rate(base_X, base_Y, beta0, gamma0):
    """``dDelta/dt`` at ``t = 0`` for the lift of ``(base_X, base_Y)`` at ``gamma0``.

    Equals ``2 dgamma/dt = -4 beta0 gamma0 g_align(Z, beta0 (1 - gamma0^2))``.
    """
    Z = base_X @ base_Y.T
    return -4.0 * beta0 * gamma0 * _loss._g_align_unchecked(Z, beta0 * (1.0 - gamma0 * gamma0))


@dataclass(frozen=True)
class MonteCarloReport:
    bound: Thm2Bound
    trials: int
    seed: int
    rates: np.ndarray
    fraction_satisfying: float
    fraction_positive: float
    mean: float
    std_error: float
    z_score: float

    def to_dict(self):
        out = {k: v for k, v in asdict(self).items() if k not in ("rates", "bound")}
        out["bound"] = self.bound.to_dict()
        out["mean_within_3se"] = bool(abs(self.z_score) <= 3.0)
        return out


def _trial_rate(n, d, beta0, gamma0, seed, trial):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(STREAM_TRIALS, trial))))
    G = rng.standard_normal((2 * n, d))
    G /= np.linalg.norm(G, axis=1, keepdims=True)
    return initial_gap_rate(G[:n], G[n:], beta0, gamma0)


def mc_thm2_experiment(n, d, beta0, gamma0, delta, trials, seed, workers=1):
    """Sample random embeddings and compare the initial gap rate to the bounds.

    Trial ``k`` draws both modalities from the stream
    ``SeedSequence(seed, spawn_key=(STREAM_TRIALS, k))``, so results do not
    depend on ``workers`` or on execution order.
    """
    trials = check_int(trials, "trials", low=100)
    seed = check_int(seed, "seed", low=0)
    workers = check_int(workers, "workers", low=1)
    bound = thm2_bound(n, d, beta0, gamma0, delta)
    args = [(n, d, beta0, gamma0, seed, k) for k in range(trials)]
    if workers == 1:
        rates = [_trial_rate(*arg) for arg in args]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rates = list(pool.map(lambda arg: _trial_rate(*arg), args))
    rates = np.array(rates)
    mean = float(rates.mean())
    se = float(rates.std(ddof=1) / math.sqrt(trials))
    return MonteCarloReport(
        bound,
        trials,
        seed,
        rates,
        float(np.mean(rates >= bound.bound)),
        float(np.mean(rates > 0.0)),
        mean,
        se,
        (mean - bound.asymptotic) / se if se > 0 else math.inf,
    )


# --------------------------------------------------------------------------
# matched-pairs regime: conservation law and slow closure


def lemma1_beta_of_gamma(beta0, gamma0, gamma):
    """``beta0 sqrt(gamma0 / gamma) exp((gamma^2 - gamma0^2) / 4)``."""
    beta0 = check_scalar(beta0, "beta0", low=0.0, low_open=True)
    gamma0 = check_scalar(gamma0, "gamma0", low=0.0, high=1.0, low_open=True, high_open=True)
    gamma = check_scalar(gamma, "gamma", low=0.0, high=gamma0, low_open=True)
    return beta0 * math.sqrt(gamma0 / gamma) * math.exp((gamma * gamma - gamma0 * gamma0) / 4.0)


@dataclass(frozen=True)
class Thm1Constants:
    c1: float
    c2: float
    c3: float
    c4: float
    n: int
    alpha_bar: float
    beta0: float
    gamma0: float

    def to_dict(self):
        return asdict(self)


def thm1_constants(n, alpha_bar, beta0, gamma0):
    """Constants of the slow-closure lower bound.

    ``c1 = 2 alpha (n-1) beta0 sqrt(gamma0)``,
    ``c2 = alpha beta0 sqrt(gamma0) (1 - gamma0^2) exp(-gamma0^2 / 4)``,
    ``c3 = 55 c1 / 2`` and ``c4 = c2 - 1/10``; ``c4 > 0`` is required.
    """
    n = check_int(n, "n", low=2)
    alpha_bar = check_scalar(alpha_bar, "alpha_bar", low=0.0, low_open=True)
    beta0 = check_scalar(beta0, "beta0", low=0.0, low_open=True)
    gamma0 = check_scalar(gamma0, "gamma0", low=0.0, high=1.0, low_open=True, high_open=True)
    root = math.sqrt(gamma0)
    c1 = 2.0 * alpha_bar * (n - 1) * beta0 * root
    c2 = alpha_bar * beta0 * root * (1.0 - gamma0 * gamma0) * math.exp(-gamma0 * gamma0 / 4.0)
    c3 = 55.0 * c1 / 2.0
    c4 = c2 - 0.1
    if not c4 > 0:
        raise ConstantsInvalidError(f"c4 = c2 - 1/10 = {c4} must be positive")
    return Thm1Constants(c1, c2, c3, c4, n, alpha_bar, beta0, gamma0)


def thm1_beta0(n, gamma0, alpha_bar=None):
    """Smallest admissible initial inverse temperature ``log(4(n-1)) / (alpha (1 - gamma0^2))``."""
    alpha_bar = n / (n - 1) if alpha_bar is None else alpha_bar
    return math.log(4 * (n - 1)) / (alpha_bar * (1.0 - gamma0 * gamma0))


def thm1_lower_bound(t, consts, gamma0=None):
    """``c2 / log(c3 t + exp(c4 / sqrt(gamma0)))^2``."""
    gamma0 = consts.gamma0 if gamma0 is None else gamma0
    t = check_scalar(t, "t", low=0.0)
    if not consts.c4 > 0:
        raise ConstantsInvalidError(f"c4 = {consts.c4} must be positive")
    x = consts.c4 / math.sqrt(gamma0)
    # log(c3 t + e^x) = x + log1p(c3 t e^-x)
    log_arg = x + math.log1p(consts.c3 * t * math.exp(-x))
    return consts.c2 / log_arg**2


def appendix_c_rates(beta0, beta1=None):
    """Exponential closure rate under a prescribed temperature.

    Constant schedule: ``beta0 exp(-beta0)``. Linear schedule from ``beta0``
    to ``beta1``: ``[(beta0 + 1) e^-beta0 - (beta1 + 1) e^-beta1] / (beta1 - beta0)``,
    the mean of ``beta e^-beta`` over ``[beta0, beta1]``.
    """
    beta0 = check_scalar(beta0, "beta0", low=0.0, low_open=True)
    if beta1 is None:
        return beta0 * math.exp(-beta0)
    beta1 = check_scalar(beta1, "beta1", low=0.0, low_open=True)
    if abs(beta1 - beta0) <= 1e-8 * max(1.0, beta0):
        mid = 0.5 * (beta0 + beta1)
        return mid * math.exp(-mid)
    return ((beta0 + 1.0) * math.exp(-beta0) - (beta1 + 1.0) * math.exp(-beta1)) / (beta1 - beta0)


def etf_tau_upper_bound(t, n, tau0):
    """Logarithmic upper envelope of the scale in the ETF bound system.

    ``(1/c4) log(t + exp(c4 tau0) / (c3 c4)) + log(c3 c4) / c4`` with
    ``c1 = n/4``, ``c2 = n / (2(n-1))``, ``c3 = 55 c1`` and ``c4 = c2 - 1/10``.
    Equals ``tau0`` at ``t = 0``.
    """
    n = check_int(n, "n", low=2)
    t = check_scalar(t, "t", low=0.0)
    tau0 = check_scalar(tau0, "tau0", low=0.0, low_open=True)
    c3 = 55.0 * n / 4.0
    c4 = n / (2.0 * (n - 1)) - 0.1
    if not c4 > 0:
        raise ConstantsInvalidError(f"c4 = {c4} must be positive")
    log_c = math.log(c3 * c4)
    # log(t + e^(c4 tau0) / (c3 c4)) evaluated without overflow
    x = c4 * tau0 - log_c
    log_arg = x + math.log1p(t * math.exp(-x)) if x > 0 else math.log(t + math.exp(x))
    return (log_arg + log_c) / c4
