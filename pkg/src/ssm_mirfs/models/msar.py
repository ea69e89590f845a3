"""Two-regime Markov-switching Gaussian autoregression on the augmented chain.

The emission of xi_n depends on the current and the previous regime, so the
hidden state is the pair ``(X_n, X_{n-1})`` coded as ``2 * c + d`` with ``c``
the current regime and ``d`` the previous one.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

from ..core import ObservationSeq, ParamVector
from .base import InadmissibleParameterError, StateSpaceModel, normal_pdf

SIGMA2_FLOOR = 1e-4

_CUR = np.array([0, 0, 1, 1])
_PREV = np.array([0, 1, 0, 1])


def regime_matrix(p11: float, p21: float) -> np.ndarray:
    return np.array([[p11, 1.0 - p11], [p21, 1.0 - p21]])


class MsArModel(StateSpaceModel):
    """xi_n - mu_{X_n} = phi1 (xi_{n-1} - mu_{X_{n-1}}) + sigma e_n."""

    tag = "msar"
    finite = True
    n_states = 4
    param_template = ParamVector(
        (0.9, 0.1, 0.0, -1.0, 1.0, 1.0),
        ("p11", "p21", "phi1", "mu1", "mu2", "sigma2"),
        ((0.0, 1.0), (0.0, 1.0), (-1.0, 1.0), (-np.inf, np.inf), (-np.inf, np.inf), (SIGMA2_FLOOR, np.inf)),
    )

    def check_constraints(self, theta):
        if theta["mu1"] == theta["mu2"]:
            raise InadmissibleParameterError("msar: regime means must differ (mu1 != mu2)")

    @staticmethod
    def regimes(theta) -> np.ndarray:
        return regime_matrix(theta["p11"], theta["p21"])

    @staticmethod
    def regime_stationary(theta) -> np.ndarray:
        p11, p21 = theta["p11"], theta["p21"]
        pi1 = p21 / (1.0 - p11 + p21)
        return np.array([pi1, 1.0 - pi1])

    def _means(self, theta) -> np.ndarray:
        return np.array([theta["mu1"], theta["mu2"]])

    def transition_density(self, theta, x, y):
        x = np.asarray(x, int)
        y = np.asarray(y, int)
        P = self.regimes(theta)
        # (a, b) -> (c, d) is possible only when d == a
        return np.where(_PREV[y] == _CUR[x], P[_CUR[x], _CUR[y]], 0.0)

    def initial_density(self, theta, x):
        x = np.asarray(x, int)
        P = self.regimes(theta)
        return self.regime_stationary(theta)[_PREV[x]] * P[_PREV[x], _CUR[x]]

    def emission_density(self, theta, x, s, s_prev):
        x = np.asarray(x, int)
        mu = self._means(theta)
        phi, sigma2 = theta["phi1"], theta["sigma2"]
        if s_prev is None:
            return normal_pdf(np.asarray(s) - mu[_CUR[x]], sigma2 / (1.0 - phi * phi))
        resid = np.asarray(s) - mu[_CUR[x]] - phi * (np.asarray(s_prev) - mu[_PREV[x]])
        return normal_pdf(resid, sigma2)

    def sample_initial(self, theta, rng):
        d = 0 if rng.uniform() < self.regime_stationary(theta)[0] else 1
        c = 0 if rng.uniform() < self.regimes(theta)[d, 0] else 1
        sd0 = np.sqrt(theta["sigma2"] / (1.0 - theta["phi1"] ** 2))
        return 2 * c + d, float(self._means(theta)[c] + sd0 * rng.standard_normal())

    def simulate_step(self, theta, x, s_prev, rng):
        c_prev = int(_CUR[int(x)])
        c = 0 if rng.uniform() < self.regimes(theta)[c_prev, 0] else 1
        mu = self._means(theta)
        s = mu[c] + theta["phi1"] * (s_prev - mu[c_prev]) + np.sqrt(theta["sigma2"]) * rng.standard_normal()
        return 2 * c + c_prev, float(s)

    def simulate(self, theta, n, rng):
        """Returns the observations and the augmented-state labels."""
        self.check(theta)
        if n < 1:
            raise ValueError("need n >= 1")
        P = self.regimes(theta)
        mu = self._means(theta)
        phi, sd = theta["phi1"], np.sqrt(theta["sigma2"])
        pi = self.regime_stationary(theta)
        u = rng.uniform(size=n)
        e = rng.standard_normal(n)
        reg = np.empty(n, int)
        reg[0] = 0 if u[0] < pi[0] else 1
        for k in range(1, n):
            reg[k] = 0 if u[k] < P[reg[k - 1], 0] else 1
        shocks = sd * e
        shocks[0] /= np.sqrt(1.0 - phi * phi)
        dev = lfilter([1.0], [1.0, -phi], shocks)
        prev = np.concatenate([[reg[0]], reg[:-1]])
        # the regime before time 0 is drawn from its conditional law
        w = pi * P[:, reg[0]]
        prev[0] = int(rng.uniform() >= w[0] / w.sum())
        return ObservationSeq(mu[reg] + dev), 2 * reg + prev
