"""scikit-learn style wrappers around the integrators.

``fit`` runs a flow from the supplied initial condition and stores the
trajectory; ``transform`` returns the final state. Parameters live in
``__init__`` so ``get_params``/``set_params`` and ``clone`` work.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import dynamics
from ._validation import check_pair, check_square
from .mitigate import SwapScheme, TemperatureScheme, nu_for_beta


def _temperature(est):
    return TemperatureScheme(
        kind=est.temperature,
        s=est.s,
        tau_star=est.tau_star,
        tau0=est.tau0,
        tau1=est.tau1,
        lr=est.lr,
        beta_max=est.beta_max,
    )


class UFMGradientFlow(TransformerMixin, BaseEstimator):
    """Gradient flow of paired unit embeddings with a learnable inverse temperature.

    ``fit(X, Y)`` integrates from the pair ``(X, Y)``; ``transform`` returns
    the final embeddings stacked as ``[X_; Y_]``.
    """

    def __init__(
        self,
        beta0=1.0 / 0.07,
        temperature="learned_exp",
        s=1.0,
        tau_star=0.07,
        tau0=1e-2,
        tau1=5e-2,
        lr=1.0,
        beta_max=100.0,
        swap="none",
        swap_p=0.0,
        renormalize_after_swap=True,
        horizon=1.0,
        dt=1e-2,
        sample_every=10,
        seed=0,
    ):
        self.beta0 = beta0
        self.temperature = temperature
        self.s = s
        self.tau_star = tau_star
        self.tau0 = tau0
        self.tau1 = tau1
        self.lr = lr
        self.beta_max = beta_max
        self.swap = swap
        self.swap_p = swap_p
        self.renormalize_after_swap = renormalize_after_swap
        self.horizon = horizon
        self.dt = dt
        self.sample_every = sample_every
        self.seed = seed

    def fit(self, X, y):
        X, Y = check_pair(X, y)
        scheme = _temperature(self)
        swap = SwapScheme(self.swap, self.swap_p, self.renormalize_after_swap)
        nu0 = nu_for_beta(scheme, self.beta0)
        record = dynamics.integrate_ufm(
            dynamics.UfmState(X, Y, nu0), scheme, swap, self.horizon, self.dt, self.sample_every, self.seed
        )
        final = record.final_state
        self.trajectory_ = record
        self.X_, self.Y_, self.nu_ = final.X, final.Y, final.nu
        return self

    def transform(self, X=None):
        check_is_fitted(self, "trajectory_")
        return np.vstack([self.X_, self.Y_])

    def score(self, X=None, y=None):
        """Negative final modality gap (higher means a smaller gap)."""
        check_is_fitted(self, "trajectory_")
        return -float(self.trajectory_.column("delta")[-1])


class ScalarGapFlow(BaseEstimator):
    """Two-scalar ``(gamma, beta)`` flow on a frozen correlation matrix ``Z``."""

    def __init__(self, gamma0=0.5, beta0=1.0 / 0.07, horizon=1.0, dt=1e-3, sample_every=100, temperature="learned_exp"):
        self.gamma0 = gamma0
        self.beta0 = beta0
        self.horizon = horizon
        self.dt = dt
        self.sample_every = sample_every
        self.temperature = temperature

    def fit(self, Z, y=None):
        Z = check_square(Z, "Z")
        scheme = TemperatureScheme(kind=self.temperature, beta_max=None, tau_star=1.0 / self.beta0)
        record = dynamics.integrate_scalar(
            dynamics.ScalarState(self.gamma0, self.beta0, Z), self.horizon, self.dt, self.sample_every, scheme
        )
        self.trajectory_ = record
        self.gamma_ = record.final_state.gamma
        self.beta_ = record.final_state.beta
        return self

    def predict(self, t):
        """Gap ``2 gamma`` interpolated at times ``t`` within the integrated horizon."""
        check_is_fitted(self, "trajectory_")
        return np.interp(t, self.trajectory_.column("t"), self.trajectory_.column("delta"))


class ReducedOrderFlow(BaseEstimator):
    """Two-dimensional reduced system; ``fit`` takes the circulant ``u`` when needed."""

    def __init__(self, variant="theta_tau_etf", n=10, first0=np.pi / 4, scale0=1.0 / 0.07, rho=None, horizon=1.0, dt=1e-2, sample_every=10):
        self.variant = variant
        self.n = n
        self.first0 = first0
        self.scale0 = scale0
        self.rho = rho
        self.horizon = horizon
        self.dt = dt
        self.sample_every = sample_every

    def fit(self, u=None, y=None):
        state = dynamics.ReducedState(self.variant, (self.first0, self.scale0), self.n, u=u, rho=self.rho)
        record = dynamics.integrate_reduced(state, self.horizon, self.dt, self.sample_every)
        self.trajectory_ = record
        self.coords_ = record.final_state.coords
        return self

    def predict(self, t):
        """First coordinate (``theta`` or ``gamma``) interpolated at times ``t``."""
        check_is_fitted(self, "trajectory_")
        return np.interp(t, self.trajectory_.column("t"), self.trajectory_.column("gamma"))
