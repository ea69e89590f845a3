"""Log-normal stochastic volatility, observed through xi_n = log Y_n^2.

    xi_n = omega + X_n + zeta_n,   X_n = alpha X_{n-1} + eta_n.

zeta_n is log(e_n^2) shifted to mean zero, so ``omega`` absorbs the mean
of log chi-square(1).  The emission uses the exact density of zeta; the
``qml`` flag swaps in the Gaussian with the same variance, pi^2 / 2.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import lfilter

from ..core import ObservationSeq, ParamVector
from .base import StateSpaceModel, normal_pdf

LOG_CHI2_MEAN = -(np.euler_gamma + math.log(2.0))  # E log chi2_1 ~ -1.27036
LOG_CHI2_VAR = math.pi**2 / 2.0


def log_chi2_pdf(w):
    """Density of log(e^2) for standard normal e."""
    w = np.asarray(w, float)
    return np.exp(0.5 * w - 0.5 * np.exp(w)) / math.sqrt(2.0 * math.pi)


def zeta_pdf(z):
    """Density of the centered disturbance zeta = log(e^2) - E log(e^2)."""
    return log_chi2_pdf(np.asarray(z, float) + LOG_CHI2_MEAN)


class SvModel(StateSpaceModel):
    tag = "sv"
    param_template = ParamVector(
        (0.9, 0.1, 0.0),
        ("alpha", "sigma_eta2", "omega"),
        ((-1.0, 1.0), (0.0, np.inf), (-np.inf, np.inf)),
    )

    def __init__(self, qml: bool = False):
        self.qml = bool(qml)

    def noise_pdf(self, z):
        return normal_pdf(np.asarray(z, float), LOG_CHI2_VAR) if self.qml else zeta_pdf(z)

    def stationary_moments(self, theta):
        return 0.0, math.sqrt(theta["sigma_eta2"] / (1.0 - theta["alpha"] ** 2))

    def transition_density(self, theta, x, y):
        return normal_pdf(np.asarray(y) - theta["alpha"] * np.asarray(x), theta["sigma_eta2"])

    def initial_density(self, theta, x):
        return normal_pdf(np.asarray(x), self.stationary_moments(theta)[1] ** 2)

    def emission_density(self, theta, x, s, s_prev):
        return self.noise_pdf(np.asarray(s) - theta["omega"] - np.asarray(x))

    def _noise(self, rng, size=None):
        if self.qml:
            return math.sqrt(LOG_CHI2_VAR) * rng.standard_normal(size)
        return np.log(rng.standard_normal(size) ** 2) - LOG_CHI2_MEAN

    def sample_initial(self, theta, rng):
        x = self.stationary_moments(theta)[1] * float(rng.standard_normal())
        return x, float(theta["omega"] + x + self._noise(rng))

    def simulate_step(self, theta, x, s_prev, rng):
        y = theta["alpha"] * x + math.sqrt(theta["sigma_eta2"]) * float(rng.standard_normal())
        return y, float(theta["omega"] + y + self._noise(rng))

    def simulate(self, theta, n, rng):
        self.check(theta)
        if n < 1:
            raise ValueError("need n >= 1")
        shocks = math.sqrt(theta["sigma_eta2"]) * rng.standard_normal(n)
        shocks[0] = self.stationary_moments(theta)[1] * rng.standard_normal()
        x = lfilter([1.0], [1.0, -theta["alpha"]], shocks)
        return ObservationSeq(theta["omega"] + x + self._noise(rng, n)), x

    def config(self):
        return {"qml": self.qml}
