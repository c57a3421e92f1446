"""Fixed-step RK4 integration of every flow in the package.

* the unconstrained-features flow of two point clouds on the sphere with a
  learnable inverse temperature (:func:`integrate_ufm`);
* the two-scalar ``(gamma, beta)`` flow with a frozen correlation matrix
  (:func:`integrate_scalar`);
* the one-dimensional exponential-tail model (:func:`integrate_simplified`);
* the two-dimensional reduced-order systems (:func:`integrate_reduced`).

Time stepping is fixed-step RK4. Long runs use a piecewise-constant step
schedule, a list of ``(t_end, dt)`` segments; every segment is split into
an integer number of equal steps so step times are exact multiples.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import loss as _loss
from ._validation import check_feature_matrix, check_int, check_pair, check_scalar, check_square
from .exceptions import IntegrationDivergedError, InvalidInputError
from .geometry import STREAM_SWAP_MASK, STREAM_SWAP_VALUES, _tangent_descent, make_rng
from .metrics import _margin_unchecked, _uniformity_unchecked
from .mitigate import SwapScheme, TemperatureScheme, nu_for_beta, scheme_value, swap_weights

CSV_COLUMNS = ("t", "loss", "gamma", "beta", "tau", "delta", "margin", "uniformity", "dbeta_dt")

REDUCED_VARIANTS = ("theta_tau_circulant", "theta_tau_etf", "theta_tau_etf_bound", "gamma_tau_rho")


# --------------------------------------------------------------------------
# records and time grids


@dataclass
class TrajectoryRecord:
    """Sampled time series of a run.

    ``rows`` follow :data:`CSV_COLUMNS`; ``extras`` holds additional named
    per-sample series (same length) and ``meta`` free-form run metadata.
    """

    rows: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    final_state: object = None

    def append(self, values, **extra):
        if self.rows and not values[0] > self.rows[-1][0]:
            return False
        self.rows.append(tuple(float(v) for v in values))
        for key, val in extra.items():
            self.extras.setdefault(key, []).append(float(val))
        return True

    def __len__(self):
        return len(self.rows)

    def array(self):
        return np.array(self.rows, dtype=np.float64).reshape(-1, len(CSV_COLUMNS))

    def column(self, name):
        if name in CSV_COLUMNS:
            return self.array()[:, CSV_COLUMNS.index(name)]
        return np.asarray(self.extras[name], dtype=np.float64)

    def __getitem__(self, name):
        return self.column(name)


def step_grid(horizon, dt, dt_schedule=None):
    """Yield ``(t, h)`` for every step up to ``horizon``.

    Without a schedule the single segment ``(horizon, dt)`` is used. Each
    segment ``(t_end, h)`` is covered by ``round(length / h)`` equal steps.
    """
    horizon = check_scalar(horizon, "horizon", low=0.0, low_open=True)
    segments = list(dt_schedule) if dt_schedule else [(horizon, dt)]
    t0 = 0.0
    for t_end, h in segments:
        t_end = min(float(t_end), horizon)
        h = check_scalar(h, "dt", low=0.0, low_open=True)
        if t_end <= t0:
            continue
        steps = max(1, int(round((t_end - t0) / h)))
        h_eff = (t_end - t0) / steps
        for k in range(steps):
            yield t0 + k * h_eff, h_eff
        t0 = t_end
    if t0 < horizon:
        raise InvalidInputError(f"dt schedule ends at {t0} before horizon {horizon}")


def step_ends(steps, horizon):
    """End time of each step, taken from the next start so sample times land on the grid."""
    return [t for t, _ in steps[1:]] + [float(horizon)]


def count_steps(horizon, dt, dt_schedule=None):
    return sum(1 for _ in step_grid(horizon, dt, dt_schedule))


def decade_schedule(dt0, t_first, horizon, factor=10.0):
    """Segments whose step grows by ``factor`` each time ``t`` grows by ``factor``.

    ``[(t_first, dt0), (factor * t_first, factor * dt0), ...]`` up to ``horizon``.
    """
    segments = []
    t_end, h = float(t_first), float(dt0)
    while t_end < horizon:
        segments.append((t_end, h))
        t_end *= factor
        h *= factor
    segments.append((float(horizon), h))
    return segments


def log_sample_times(t_min, horizon, count):
    """``count`` logarithmically spaced sample times in ``[t_min, horizon]``, plus 0."""
    return np.concatenate([[0.0], np.geomspace(t_min, horizon, count)])


class _Sampler:
    """Decides which step boundaries are recorded."""

    def __init__(self, sample_every=None, sample_times=None, t_start=0.0):
        self.every = sample_every
        self.times = None if sample_times is None else np.sort(np.asarray(sample_times, float))
        # targets at or before the start are covered by the initial sample
        self.next = 0 if self.times is None else int(np.searchsorted(self.times, t_start, side="right"))

    def due(self, step_index, t, last=False):
        if last:
            return True
        if self.times is not None:
            hit = False
            while self.next < len(self.times) and t >= self.times[self.next] - 1e-12 * max(1.0, t):
                self.next += 1
                hit = True
            return hit
        return self.every is not None and step_index % self.every == 0


def _rk4(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# --------------------------------------------------------------------------
# full unconstrained-features flow


@dataclass
class UfmState:
    X: np.ndarray
    Y: np.ndarray
    nu: float
    t: float = 0.0

    def __post_init__(self):
        self.X, self.Y = check_pair(self.X, self.Y)
        self.nu = check_scalar(self.nu, "nu")


def _ufm_field(X, Y, nu, scheme, t, horizon, lam=None, renorm=True):
    beta, dbeta, lr = scheme_value(scheme, nu, t, horizon)
    if lam is None:
        Z = X @ Y.T
        G = _loss._grad_unchecked(beta * Z)
        EX = beta * (G @ Y)
        EY = beta * (G.T @ X)
    else:
        PX = lam * X + (1.0 - lam) * Y
        PY = lam * Y + (1.0 - lam) * X
        if renorm:
            nx = np.linalg.norm(PX, axis=1, keepdims=True)
            ny = np.linalg.norm(PY, axis=1, keepdims=True)
            if np.any(nx == 0.0) or np.any(ny == 0.0):
                raise IntegrationDivergedError("swap produced a zero row", last_t=t)
        else:
            nx = ny = 1.0
        Xs, Ys = PX / nx, PY / ny
        Z = Xs @ Ys.T
        G = _loss._grad_unchecked(beta * Z)
        # the swap is a fixed linear map: pull gradients back through it
        gx = beta * (G @ Ys) / nx
        gy = beta * (G.T @ Xs) / ny
        EX = lam * gx + (1.0 - lam) * gy
        EY = (1.0 - lam) * gx + lam * gy
    dX = _tangent_descent(X, EX)
    dY = _tangent_descent(Y, EY)
    dnu = lr * dbeta * -float(np.vdot(Z, G))
    return dX, dY, dnu


def ufm_vector_field(state, scheme=None, t=None, horizon=None, lam=None, renorm=True):
    """Riemannian gradient-flow velocity ``(dX, dY, dnu)`` at ``state``.

    With ``beta`` from the scheme, ``Z = X Y^T`` and ``G = grad_loss(beta Z)``:
    ``dX_i = beta [<z_i, g_i> x_i - (G Y)_i]``, symmetrically for ``Y``, and
    ``dnu = lr * beta'(nu) * g_beta(Z)``. ``lam`` applies a swap mixing
    before the loss and differentiates through it with ``lam`` held fixed.
    """
    scheme = scheme or TemperatureScheme()
    t = state.t if t is None else t
    return _ufm_field(state.X, state.Y, state.nu, scheme, t, horizon, lam, renorm)


def _designated_gamma(X, Y):
    return 0.5 * float(X[:, -1].mean() - Y[:, -1].mean())


def ufm_observables(X, Y, nu, scheme, t, horizon):
    """Row of :data:`CSV_COLUMNS` plus diagnostic extras for a UFM state."""
    beta, dbeta, lr = scheme_value(scheme, nu, t, horizon)
    Z = X @ Y.T
    M = beta * Z
    g = _loss._g_align_unchecked(Z, beta)
    gap = float(np.linalg.norm(X.mean(axis=0) - Y.mean(axis=0)))
    row = (
        t,
        _loss.sym_ce_loss(M),
        _designated_gamma(X, Y),
        beta,
        1.0 / beta,
        gap,
        _margin_unchecked(Z) if Z.shape[0] > 1 else math.nan,
        _uniformity_unchecked(np.vstack([X, Y])),
        lr * dbeta * dbeta * g,
    )
    diag = np.diag(Z)
    violated = ((Z >= diag[:, None]) | (Z >= diag[None, :])).sum() - Z.shape[0]
    extras = {
        "nu": nu,
        # scale dynamics of the exp parameterization at the current scale
        "dscale_dt": beta * beta * g,
        "violated_pairs": violated,
        "theta": float(np.mean(np.arccos(np.clip(X[:, -1], -1.0, 1.0)))),
    }
    return row, extras


def integrate_ufm(
    s0,
    scheme=None,
    swap=None,
    horizon=1.0,
    dt=1e-2,
    sample_every=10,
    seed=0,
    dt_schedule=None,
    sample_times=None,
    check_finite=True,
):
    """Integrate the full flow with RK4, renormalizing rows after every step.

    Swap transforms (if any) are decided per step from the ``seed`` streams
    and held fixed across the four RK4 stages of that step. Returns a
    :class:`TrajectoryRecord` whose ``final_state`` is the last
    :class:`UfmState`.
    """
    scheme = scheme or TemperatureScheme()
    swap = swap or SwapScheme()
    X, Y, nu = s0.X.copy(), s0.Y.copy(), float(s0.nu)
    t_start = float(s0.t)
    sampler = _Sampler(sample_every, sample_times, t_start)
    record = TrajectoryRecord(meta={"scheme": scheme.to_dict(), "swap": swap.to_dict()})
    if swap.active:
        mask_rng = make_rng(seed, STREAM_SWAP_MASK)
        value_rng = make_rng(seed, STREAM_SWAP_VALUES)

    def observe(t):
        row, extras = ufm_observables(X, Y, nu, scheme, t, horizon)
        record.append(row, **extras)

    observe(t_start)
    steps = list(step_grid(horizon, dt, dt_schedule))
    ends = step_ends(steps, horizon)
    swapped_steps = 0
    for k, (t_rel, h) in enumerate(steps):
        t = t_start + t_rel
        t_next = t_start + ends[k]
        lam = None
        if swap.active and mask_rng.random() < swap.p:
            lam = swap_weights(swap.kind, X.shape, value_rng)
            swapped_steps += 1
        renorm = swap.renormalize_after_swap

        def f(tt, y, lam=lam):
            Xs, Ys, ns = y
            return _ufm_field(Xs, Ys, ns, scheme, tt, horizon, lam, renorm)

        k1 = f(t, (X, Y, nu))
        k2 = f(t + 0.5 * h, _axpy((X, Y, nu), 0.5 * h, k1))
        k3 = f(t + 0.5 * h, _axpy((X, Y, nu), 0.5 * h, k2))
        k4 = f(t + h, _axpy((X, Y, nu), h, k3))
        Xn = X + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        Yn = Y + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        nun = nu + (h / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if check_finite and not (np.all(np.isfinite(Xn)) and np.all(np.isfinite(Yn)) and math.isfinite(nun)):
            record.final_state = UfmState(X, Y, nu, t)
            raise IntegrationDivergedError(
                f"non-finite state after step at t={t_next}", last_t=t, last_state=record.final_state, record=record
            )
        X = Xn / np.linalg.norm(Xn, axis=1, keepdims=True)
        Y = Yn / np.linalg.norm(Yn, axis=1, keepdims=True)
        nu = nun
        if sampler.due(k + 1, t_next, last=(k + 1 == len(steps))):
            observe(t_next)
    record.meta["swapped_steps"] = swapped_steps
    record.meta["total_steps"] = len(steps)
    record.final_state = UfmState(X, Y, nu, t_start + horizon)
    return record


def _axpy(y, a, k):
    return (y[0] + a * k[0], y[1] + a * k[1], y[2] + a * k[2])


# --------------------------------------------------------------------------
# scalar (gamma, beta) flow


@dataclass
class ScalarState:
    """Gap height ``gamma``, inverse temperature ``beta`` and a frozen ``Z``."""

    gamma: float
    beta: float
    Z: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.gamma = check_scalar(self.gamma, "gamma", low=0.0, high=1.0, high_open=True)
        self.beta = check_scalar(self.beta, "beta", low=0.0, low_open=True)
        self.Z = check_square(self.Z, "Z")


def _scalar_rates(gamma, beta, dbeta_dnu, lr, galign):
    a = beta * (1.0 - gamma * gamma)
    g = galign(a)
    dgamma = -2.0 * beta * gamma * g
    dnu = lr * dbeta_dnu * (1.0 - gamma * gamma) * g
    return dgamma, dnu, g


def scalar_vector_field(s, scheme=None, galign=None):
    """``(dgamma/dt, dbeta/dt)`` of the two-scalar flow.

    ``dbeta/dt = beta'^2 (1 - gamma^2) g`` and ``dgamma/dt = -2 beta gamma g``
    with ``g = g_align(Z, beta (1 - gamma^2))``.
    """
    scheme = scheme or TemperatureScheme(beta_max=None)
    galign = galign or _loss.FrozenAlignment(s.Z)
    nu = nu_for_beta(scheme, s.beta) if scheme.learned else 0.0
    beta, dbeta_dnu, lr = scheme_value(scheme, nu, s.t, None) if scheme.learned else (s.beta, 0.0, 0.0)
    dgamma, dnu, _ = _scalar_rates(s.gamma, beta, dbeta_dnu, lr, galign)
    return dgamma, dbeta_dnu * dnu


def integrate_scalar(s0, horizon, dt, sample_every=None, scheme=None, dt_schedule=None, sample_times=None):
    """RK4 integration of the two-scalar flow; ``delta`` is recorded as ``2 gamma``."""
    scheme = scheme or TemperatureScheme(beta_max=None)
    if not scheme.learned and scheme.kind != "fixed":
        raise InvalidInputError("integrate_scalar supports learned schemes and 'fixed'")
    Z = s0.Z
    n = Z.shape[0]
    galign = _loss.FrozenAlignment(Z)
    base_margin = _margin_unchecked(Z) if n > 1 else math.nan
    record = TrajectoryRecord(meta={"scheme": scheme.to_dict(), "n": n, "base_margin": base_margin})
    if not base_margin > 0:
        record.meta["warning"] = "frozen Z has nonpositive margin"
    learned = scheme.learned
    if learned:
        nu = nu_for_beta(scheme, s0.beta)
    else:
        nu = 0.0
        fixed_beta = 1.0 / scheme.tau_star

    def beta_of(nu_):
        if learned:
            return scheme_value(scheme, nu_, 0.0, None)
        return (fixed_beta, 0.0, 0.0)

    def rates(gamma, nu_):
        b, db, lr = beta_of(nu_)
        return _scalar_rates(gamma, b, db, lr, galign)

    def observe(t, gamma, nu_):
        b, db, lr = beta_of(nu_)
        dgamma, dnu, _ = _scalar_rates(gamma, b, db, lr, galign)
        a = b * (1.0 - gamma * gamma)
        record.append(
            (t, _loss.sym_ce_loss(a * Z), gamma, b, 1.0 / b, 2.0 * gamma, (1.0 - gamma * gamma) * base_margin, math.nan, db * dnu),
            dgamma_dt=dgamma,
            nu=nu_,
        )

    gamma = s0.gamma
    t0 = float(s0.t)
    sampler = _Sampler(sample_every, sample_times, t0)
    observe(t0, gamma, nu)
    steps = list(step_grid(horizon, dt, dt_schedule))
    ends = step_ends(steps, horizon)
    for k, (t_rel, h) in enumerate(steps):
        g1, n1, _ = rates(gamma, nu)
        g2, n2, _ = rates(gamma + 0.5 * h * g1, nu + 0.5 * h * n1)
        g3, n3, _ = rates(gamma + 0.5 * h * g2, nu + 0.5 * h * n2)
        g4, n4, _ = rates(gamma + h * g3, nu + h * n3)
        gamma_new = gamma + (h / 6.0) * (g1 + 2 * g2 + 2 * g3 + g4)
        nu_new = nu + (h / 6.0) * (n1 + 2 * n2 + 2 * n3 + n4)
        if not (math.isfinite(gamma_new) and math.isfinite(nu_new)):
            record.final_state = ScalarState(gamma, beta_of(nu)[0], Z, t0 + t_rel)
            raise IntegrationDivergedError(
                f"non-finite scalar state at t={t0 + ends[k]}", last_t=t0 + t_rel, last_state=record.final_state, record=record
            )
        gamma, nu = gamma_new, nu_new
        if sampler.due(k + 1, t0 + ends[k], last=(k + 1 == len(steps))):
            observe(t0 + ends[k], gamma, nu)
    record.final_state = ScalarState(gamma, beta_of(nu)[0], Z, t0 + horizon)
    return record


# --------------------------------------------------------------------------
# exponential-tail model


def simplified_exp_field(gamma, beta):
    """``dgamma/dt = -2 beta gamma exp(-beta (1 - gamma^2))``."""
    return -2.0 * beta * gamma * math.exp(-beta * (1.0 - gamma * gamma))


def integrate_simplified(gamma0, beta_of_t, horizon, dt, sample_every=1):
    """RK4 on the exponential-tail model with a prescribed ``beta(t)``.

    ``beta_of_t`` is a callable or a constant. Returns ``(t, gamma)`` arrays.
    """
    beta_fn = beta_of_t if callable(beta_of_t) else (lambda _t, b=float(beta_of_t): b)
    sample_every = check_int(sample_every, "sample_every", low=1)
    ts, gs = [0.0], [float(gamma0)]
    gamma = float(gamma0)
    steps = list(step_grid(horizon, dt))
    ends = step_ends(steps, horizon)
    for k, (t, h) in enumerate(steps):
        f1 = simplified_exp_field(gamma, beta_fn(t))
        f2 = simplified_exp_field(gamma + 0.5 * h * f1, beta_fn(t + 0.5 * h))
        f3 = simplified_exp_field(gamma + 0.5 * h * f2, beta_fn(t + 0.5 * h))
        f4 = simplified_exp_field(gamma + h * f3, beta_fn(t + h))
        gamma += (h / 6.0) * (f1 + 2 * f2 + 2 * f3 + f4)
        if (k + 1) % sample_every == 0:
            ts.append(ends[k])
            gs.append(gamma)
    return np.array(ts), np.array(gs)


# --------------------------------------------------------------------------
# reduced-order systems


def _sigmoid_neg(x):
    """``sigmoid(-x)`` without overflow."""
    if x >= 0:
        e = math.exp(-x)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(x))


@dataclass
class ReducedState:
    """Two-coordinate reduced state.

    ``coords`` is ``(theta, scale)`` for the theta variants and
    ``(gamma, scale)`` for ``gamma_tau_rho``; ``scale`` is the similarity
    multiplier (the inverse temperature). ``u`` is the first row of the
    circulant cross-section gram (circulant variant) and ``rho`` the
    off-diagonal correlation (gamma variant).
    """

    variant: str
    coords: tuple
    n: int
    u: Optional[np.ndarray] = None
    rho: Optional[float] = None
    t: float = 0.0

    def __post_init__(self):
        if self.variant not in REDUCED_VARIANTS:
            raise InvalidInputError(f"unknown reduced variant {self.variant!r}")
        self.n = check_int(self.n, "n", low=2)
        first, scale = (float(c) for c in self.coords)
        self.coords = (first, scale)
        check_scalar(scale, "scale", low=0.0, low_open=True)
        if self.variant == "gamma_tau_rho":
            check_scalar(first, "gamma", low=0.0, high=1.0, high_open=True)
            self.rho = check_scalar(self.rho if self.rho is not None else -1.0 / (self.n - 1), "rho", low=-1.0, high=1.0)
        else:
            check_scalar(first, "theta", low=0.0, high=math.pi / 2)
        if self.variant == "theta_tau_circulant":
            if self.u is None:
                raise InvalidInputError("the circulant variant needs u")
            self.u = np.asarray(self.u, dtype=np.float64)
            if self.u.shape != (self.n,):
                raise InvalidInputError("u must have length n")

    def replace(self, **kw):
        return replace(self, **kw)


def _circulant_rates(theta, scale, u, n):
    s2 = math.sin(theta) ** 2
    logits = scale * (s2 * u - math.cos(theta) ** 2)
    logits = logits - logits.max()
    p = np.exp(logits)
    p /= p.sum()
    one_minus = 1.0 - float(u @ p)
    return (scale / (2 * n)) * math.sin(2 * theta) * one_minus, scale * scale * s2 * one_minus


def _reduced_rates(variant, a, scale, n, u, rho):
    if variant == "theta_tau_circulant":
        return _circulant_rates(a, scale, u, n)
    if variant == "theta_tau_etf":
        s2 = math.sin(a) ** 2
        sig = _sigmoid_neg(n * scale * s2 / (n - 1))
        return 0.5 * scale * math.sin(2 * a) * sig, n * scale * scale * s2 * sig
    if variant == "theta_tau_etf_bound":
        e = math.exp(-n * scale * math.sin(a) ** 2 / (n - 1))
        return 0.5 * scale * e, 0.25 * n * scale * scale * e
    one_minus_sq = 1.0 - a * a
    r = scale * one_minus_sq * (1.0 - rho) - math.log(n - 1)
    sig = _sigmoid_neg(r)
    return -((1.0 - rho) / n) * scale * a * one_minus_sq * sig, (1.0 - rho) * scale * scale * one_minus_sq * sig


def reduced_vector_field(s):
    """Time derivative of ``s.coords`` for the state's variant."""
    if s.variant not in REDUCED_VARIANTS:
        raise InvalidInputError(f"unknown reduced variant {s.variant!r}")
    return _reduced_rates(s.variant, s.coords[0], s.coords[1], s.n, s.u, s.rho)


def _reduced_u(s):
    if s.variant == "theta_tau_circulant":
        return s.u
    if s.variant.startswith("theta_tau_etf"):
        u = np.full(s.n, -1.0 / (s.n - 1))
        u[0] = 1.0
        return u
    return None


def _reduced_observables(s, a, scale, u):
    n = s.n
    if s.variant == "gamma_tau_rho":
        spread = (1.0 - a * a) * (1.0 - s.rho)
        loss = math.log1p((n - 1) * math.exp(-scale * spread)) if scale * spread < 700 else 0.0
        return loss, 2.0 * a, spread
    s2 = math.sin(a) ** 2
    logits = scale * s2 * (u - 1.0)
    top = logits.max()
    loss = top + math.log(np.exp(logits - top).sum())
    off = np.delete(u, 0)
    return loss, 2.0 * math.cos(a), s2 * (1.0 - off.max())


def integrate_reduced(s0, horizon, dt, sample_every=None, dt_schedule=None, sample_times=None):
    """RK4 integration of a reduced-order system.

    Theta variants also record ``conservation = theta - (2/n) log(scale /
    scale0) - theta0``, which vanishes identically for the ETF-bound system.
    """
    variant, n, u, rho = s0.variant, s0.n, s0.u, s0.rho
    a0, scale0 = s0.coords
    uu = _reduced_u(s0)
    record = TrajectoryRecord(meta={"variant": variant, "n": n, "rho": rho})
    sampler = _Sampler(sample_every, sample_times, float(s0.t))

    def observe(t, a, scale):
        da, dscale = _reduced_rates(variant, a, scale, n, u, rho)
        loss, gap, marg = _reduced_observables(s0, a, scale, uu)
        extras = {"dfirst_dt": da}
        if variant != "gamma_tau_rho":
            extras["conservation"] = a - (2.0 / n) * math.log(scale / scale0) - a0
        record.append((t, loss, a, scale, 1.0 / scale, gap, marg, math.nan, dscale), **extras)

    a, scale = a0, scale0
    t0 = float(s0.t)
    observe(t0, a, scale)
    steps = list(step_grid(horizon, dt, dt_schedule))
    ends = step_ends(steps, horizon)
    for k, (t_rel, h) in enumerate(steps):
        a1, b1 = _reduced_rates(variant, a, scale, n, u, rho)
        a2, b2 = _reduced_rates(variant, a + 0.5 * h * a1, scale + 0.5 * h * b1, n, u, rho)
        a3, b3 = _reduced_rates(variant, a + 0.5 * h * a2, scale + 0.5 * h * b2, n, u, rho)
        a4, b4 = _reduced_rates(variant, a + h * a3, scale + h * b3, n, u, rho)
        a_new = a + (h / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        s_new = scale + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
        if not (math.isfinite(a_new) and math.isfinite(s_new)) or s_new <= 0:
            record.final_state = s0.replace(coords=(a, scale), t=t0 + t_rel)
            raise IntegrationDivergedError(
                f"reduced system diverged at t={t0 + ends[k]}", last_t=t0 + t_rel, last_state=record.final_state, record=record
            )
        a, scale = a_new, s_new
        if sampler.due(k + 1, t0 + ends[k], last=(k + 1 == len(steps))):
            observe(t0 + ends[k], a, scale)
    record.final_state = s0.replace(coords=(a, scale), t=t0 + horizon)
    return record
