"""Regime-dependent autoregression used to exercise the weighted contraction check.

    Y_n = alpha Y_{n-1} + e_n,   xi_n = beta(Y_n) xi_{n-1} + eta_n,

with standard normal noises and beta(y) = beta_scale * (1 + tanh y) / 2, so
0 < beta(y) < beta_scale for every y.  The map xi -> beta(Y_n) xi + eta_n
has Lipschitz constant beta(Y_n).
"""

from __future__ import annotations

import math

import numpy as np

from ..core import ParamVector
from .base import StateSpaceModel, normal_pdf


def contraction_threshold(alpha: float, p: int = 1) -> float:
    """a^(1/p) with a = 1 / (b c + 1), b = (1 - |alpha|^p) / (1 - |alpha|), c = E|e| = sqrt(2/pi)."""
    b = (1.0 - abs(alpha) ** p) / (1.0 - abs(alpha))
    a = 1.0 / (b * math.sqrt(2.0 / math.pi) + 1.0)
    return a ** (1.0 / p)


class SwitchingArModel(StateSpaceModel):
    tag = "toy"
    param_template = ParamVector(
        (0.5, 0.4),
        ("alpha", "beta_scale"),
        ((-1.0, 1.0), (0.0, np.inf)),
    )

    @staticmethod
    def beta(theta, y):
        return theta["beta_scale"] * 0.5 * (1.0 + np.tanh(np.asarray(y, float)))

    def step_lipschitz(self, theta, y):
        return np.abs(self.beta(theta, y))

    def stationary_moments(self, theta):
        return 0.0, 1.0 / math.sqrt(1.0 - theta["alpha"] ** 2)

    def transition_density(self, theta, x, y):
        return normal_pdf(np.asarray(y) - theta["alpha"] * np.asarray(x), 1.0)

    def initial_density(self, theta, x):
        return normal_pdf(np.asarray(x), self.stationary_moments(theta)[1] ** 2)

    def emission_density(self, theta, x, s, s_prev):
        if s_prev is None:
            return normal_pdf(np.asarray(s) + 0.0 * np.asarray(x), 1.0)
        return normal_pdf(np.asarray(s) - self.beta(theta, x) * np.asarray(s_prev), 1.0)

    def sample_initial(self, theta, rng):
        y = self.stationary_moments(theta)[1] * float(rng.standard_normal())
        return y, float(rng.standard_normal())

    def simulate_step(self, theta, x, s_prev, rng):
        y = theta["alpha"] * x + float(rng.standard_normal())
        return y, float(self.beta(theta, y) * s_prev + rng.standard_normal())
