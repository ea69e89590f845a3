"""AR(1) hidden state observed in additive noise, with its Kalman oracle."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import lfilter

from ..core import ObservationSeq, ParamVector, as_observations
from .base import StateSpaceModel, normal_logpdf, normal_pdf

NOISES = ("gaussian", "laplace")


def laplace_pdf(z, var):
    """Double-exponential density with the given variance (scale sqrt(var / 2))."""
    b = np.sqrt(var / 2.0)
    return np.exp(-np.abs(z) / b) / (2.0 * b)


def laplace_cdf(z, var):
    """Distribution function matching :func:`laplace_pdf`."""
    b = np.sqrt(var / 2.0)
    z = np.asarray(z, float)
    return np.where(z < 0.0, 0.5 * np.exp(np.minimum(z, 0.0) / b), 1.0 - 0.5 * np.exp(-np.maximum(z, 0.0) / b))


class LinGaussModel(StateSpaceModel):
    """X_n = alpha X_{n-1} + eta_n,  xi_n = X_n + eps_n.

    ``sigma_eta2`` is the state-noise variance and ``sigma_eps2`` the
    observation-noise variance.  With ``noise="laplace"`` both noises are
    double exponential with those variances; the initial law stays the
    Gaussian with the stationary variance, which is then an approximation.

    For the double-exponential transition the grid matrix holds cell
    averages of the density (differences of its distribution function over
    the cell around each node) rather than point values.  Point values
    have a kink in ``alpha`` wherever ``x_i - alpha x_j`` crosses zero;
    summed over the grid these make the likelihood only first-order smooth
    in ``alpha``.  Cell averages are continuously differentiable in
    ``alpha`` and cost nothing in accuracy.
    """

    tag = "lingauss"
    param_template = ParamVector(
        (0.8, 1.0, 1.0),
        ("alpha", "sigma_eta2", "sigma_eps2"),
        ((-1.0, 1.0), (0.0, np.inf), (0.0, np.inf)),
    )

    def __init__(self, noise: str = "gaussian"):
        if noise not in NOISES:
            raise ValueError(f"noise must be one of {NOISES}, got {noise!r}")
        self.noise = noise
        self._pdf = normal_pdf if noise == "gaussian" else laplace_pdf

    def stationary_moments(self, theta):
        return 0.0, math.sqrt(theta["sigma_eta2"] / (1.0 - theta["alpha"] ** 2))

    def transition_density(self, theta, x, y):
        return self._pdf(np.asarray(y) - theta["alpha"] * np.asarray(x), theta["sigma_eta2"])

    def transition_matrix(self, theta, grid):
        if self.noise == "gaussian" or self._is_finite_grid(grid):
            return super().transition_matrix(theta, grid)
        x = grid.points
        d = x[1] - x[0]
        centre = x[None, :] - theta["alpha"] * x[:, None]
        var = theta["sigma_eta2"]
        return (laplace_cdf(centre + d / 2.0, var) - laplace_cdf(centre - d / 2.0, var)) / d

    def emission_density(self, theta, x, s, s_prev):
        return self._pdf(np.asarray(s) - np.asarray(x), theta["sigma_eps2"])

    def log_emission_density(self, theta, x, s, s_prev):
        z = np.asarray(s) - np.asarray(x)
        var = theta["sigma_eps2"]
        if self.noise == "gaussian":
            return normal_logpdf(z, var)
        b = np.sqrt(var / 2.0)
        return -np.abs(z) / b - np.log(2.0 * b)

    def initial_density(self, theta, x):
        return normal_pdf(np.asarray(x), self.stationary_moments(theta)[1] ** 2)

    def _draw(self, rng, var, size=None):
        if self.noise == "gaussian":
            return np.sqrt(var) * rng.standard_normal(size)
        return rng.laplace(0.0, np.sqrt(var / 2.0), size)

    def sample_initial(self, theta, rng):
        x = self.stationary_moments(theta)[1] * rng.standard_normal()
        return x, float(x + self._draw(rng, theta["sigma_eps2"]))

    def simulate_step(self, theta, x, s_prev, rng):
        y = theta["alpha"] * x + float(self._draw(rng, theta["sigma_eta2"]))
        return y, float(y + self._draw(rng, theta["sigma_eps2"]))

    def simulate(self, theta, n, rng):
        self.check(theta)
        if n < 1:
            raise ValueError("need n >= 1")
        shocks = self._draw(rng, theta["sigma_eta2"], n)
        shocks[0] = self.stationary_moments(theta)[1] * rng.standard_normal()
        x = lfilter([1.0], [1.0, -theta["alpha"]], shocks)
        return ObservationSeq(x + self._draw(rng, theta["sigma_eps2"], n)), x

    def config(self):
        return {"noise": self.noise}


def _theta_values(theta) -> tuple[float, float, float]:
    if isinstance(theta, ParamVector):
        return theta["alpha"], theta["sigma_eta2"], theta["sigma_eps2"]
    return float(theta.alpha), float(theta.sigma_eta2), float(theta.sigma_eps2)


def kalman_filter(theta, obs):
    """Prediction-error decomposition for the Gaussian model.

    Returns ``(loglik_terms, filtered_means, filtered_vars)``; term k is
    log N(xi_k; predicted mean, predicted variance).
    """
    alpha, q, r = _theta_values(theta)
    s = as_observations(obs).scalar()
    n = s.size
    terms = np.empty(n)
    means = np.empty(n)
    variances = np.empty(n)
    m, P = 0.0, q / (1.0 - alpha * alpha)
    for k in range(n):
        S = P + r
        e = s[k] - m
        terms[k] = -0.5 * (math.log(2.0 * math.pi * S) + e * e / S)
        gain = P / S
        m += gain * e
        P *= 1.0 - gain
        means[k] = m
        variances[k] = P
        m, P = alpha * m, alpha * alpha * P + q
    return terms, means, variances


def kalman_loglik(theta, obs) -> float:
    """Exact Gaussian log-likelihood of xi_0..xi_n (``theta`` may be a ParamVector or a spec)."""
    return math.fsum(kalman_filter(theta, obs)[0])
