"""AR(1) with ARCH(1) errors, observed directly.

The series is its own state, so the hidden chain is a single dummy state
and the likelihood is conditional on the first observation.
"""

from __future__ import annotations

import math

import numpy as np

from ..core import ObservationSeq, ParamVector, as_observations
from .base import InadmissibleParameterError, StateSpaceModel, normal_pdf


class ArArchModel(StateSpaceModel):
    """X_n = beta0 + beta1 X_{n-1} + sqrt(alpha0 + alpha1 X_{n-1}^2) e_n, with xi_n = X_n."""

    tag = "ararch"
    finite = True
    n_states = 1
    param_template = ParamVector(
        (1.0, 0.3, 0.0, 0.5),
        ("alpha0", "alpha1", "beta0", "beta1"),
        ((0.0, np.inf), (0.0, 1.0 / math.sqrt(3.0)), (-np.inf, np.inf), (0.0, 1.0)),
    )

    def transition_density(self, theta, x, y):
        return np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape)

    def initial_density(self, theta, x):
        return np.ones(np.shape(x))

    def emission_density(self, theta, x, s, s_prev):
        shape = np.broadcast(np.asarray(x), np.asarray(s)).shape
        if s_prev is None:
            return np.ones(shape)
        s_prev = np.asarray(s_prev)
        mean = theta["beta0"] + theta["beta1"] * s_prev
        var = theta["alpha0"] + theta["alpha1"] * s_prev * s_prev
        return normal_pdf(np.asarray(s) - mean, var) * np.ones(shape)

    def sample_initial(self, theta, rng):
        return 0, 0.0

    def simulate_step(self, theta, x, s_prev, rng):
        mean = theta["beta0"] + theta["beta1"] * s_prev
        sd = math.sqrt(theta["alpha0"] + theta["alpha1"] * s_prev * s_prev)
        return 0, mean + sd * float(rng.standard_normal())

    def simulate(self, theta, n, rng):
        self.check(theta)
        if n < 1:
            raise ValueError("need n >= 1")
        a0, a1, b0, b1 = (theta[k] for k in ("alpha0", "alpha1", "beta0", "beta1"))
        e = rng.standard_normal(n)
        x = np.empty(n)
        x[0] = 0.0
        prev = 0.0
        for k in range(1, n):
            prev = b0 + b1 * prev + math.sqrt(a0 + a1 * prev * prev) * e[k]
            x[k] = prev
        return ObservationSeq(x), np.zeros(n, int)


def ararch_closed_form_beta1(theta: ParamVector, obs) -> float:
    """Weighted least-squares root of the likelihood equation in beta1.

    ``alpha0``, ``alpha1`` and ``beta0`` are taken from ``theta`` as known.
    """
    x = as_observations(obs).scalar()
    a0, a1, b0 = theta["alpha0"], theta["alpha1"], theta["beta0"]
    prev, cur = x[:-1], x[1:]
    w = 1.0 / (a0 + a1 * prev * prev)
    den = float(np.sum(prev * prev * w))
    if den == 0.0:
        raise InadmissibleParameterError("closed-form beta1 undefined: every lagged value is zero")
    return float(np.sum((cur - b0) * prev * w)) / den
