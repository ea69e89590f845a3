"""Finite-state models: fixed chains for hand checks and a parametric Gaussian HMM."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..core import ObservationSeq, ParamVector
from .base import InadmissibleParameterError, StateSpaceModel, normal_pdf

EMPTY = ParamVector((), (), ())


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Left Perron vector of a row-stochastic matrix."""
    K = P.shape[0]
    A = np.vstack([P.T - np.eye(K), np.ones(K)])
    b = np.zeros(K + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


class FixedChainModel(StateSpaceModel):
    """A finite chain with no free parameters.

    ``emission(states, s, s_prev)`` must broadcast; ``None`` means the
    emission is identically one.
    """

    finite = True
    tag = "fixed"

    def __init__(self, P, emission: Callable | None = None, initial=None, sampler: Callable | None = None):
        self.P = np.array(P, dtype=float)
        if self.P.ndim != 2 or self.P.shape[0] != self.P.shape[1]:
            raise ValueError("transition matrix must be square")
        if np.any(self.P < 0):
            raise ValueError("transition matrix must be nonnegative")
        self.n_states = self.P.shape[0]
        self.pi = stationary_distribution(self.P) if initial is None else np.asarray(initial, float)
        self.emission = emission
        self.sampler = sampler
        self.param_template = EMPTY

    def transition_density(self, theta, x, y):
        return self.P[np.asarray(x, int), np.asarray(y, int)]

    def initial_density(self, theta, x):
        return self.pi[np.asarray(x, int)]

    def emission_density(self, theta, x, s, s_prev):
        if self.emission is None:
            return np.ones(np.broadcast(np.asarray(x), np.asarray(s)).shape)
        return self.emission(np.asarray(x, int), s, s_prev)

    def sample_initial(self, theta, rng):
        x = int(rng.choice(self.n_states, p=self.pi))
        return x, self._emit(x, None, rng)

    def simulate_step(self, theta, x, s_prev, rng):
        y = int(rng.choice(self.n_states, p=self.P[x]))
        return y, self._emit(y, s_prev, rng)

    def _emit(self, x, s_prev, rng):
        if self.sampler is None:
            return 0.0
        return float(self.sampler(x, s_prev, rng))


class FiniteGaussianHMM(StateSpaceModel):
    """K-state chain with autoregressive Gaussian emissions.

    xi_n = mu_{X_n} + phi * xi_{n-1} + sigma * e_n; the initial emission is
    N(mu_{X_0}, sigma2).  Free transition entries are ``p_i_j`` for
    ``j < K - 1``; the last column is the complement.
    """

    finite = True
    tag = "finite_hmm"

    def __init__(self, K: int):
        if K < 1:
            raise ValueError("K >= 1")
        self.n_states = K
        names, bounds, values = [], [], []
        for i in range(K):
            for j in range(K - 1):
                names.append(f"p_{i}_{j}")
                bounds.append((0.0, 1.0))
                values.append(1.0 / K)
        for k in range(K):
            names.append(f"mu_{k}")
            bounds.append((-np.inf, np.inf))
            values.append(float(k))
        names += ["phi", "sigma2"]
        bounds += [(-1.0, 1.0), (0.0, np.inf)]
        values += [0.0, 1.0]
        self.param_template = ParamVector(values, names, bounds)

    def matrix(self, theta: ParamVector) -> np.ndarray:
        K = self.n_states
        free = np.array(theta.values[: K * (K - 1)]).reshape(K, K - 1)
        P = np.empty((K, K))
        P[:, :-1] = free
        P[:, -1] = 1.0 - free.sum(axis=1)
        return P

    def check_constraints(self, theta):
        if np.any(self.matrix(theta)[:, -1] <= 0):
            raise InadmissibleParameterError("transition rows must leave positive mass for the last state")

    def means(self, theta) -> np.ndarray:
        K = self.n_states
        return np.array(theta.values[K * (K - 1) : K * (K - 1) + K])

    def random_params(self, rng: np.random.Generator) -> ParamVector:
        K = self.n_states
        P = rng.dirichlet(np.full(K, 2.0), size=K)
        P = 0.02 + 0.96 * P  # keep entries away from the boundary
        P /= P.sum(axis=1, keepdims=True)
        vals = list(P[:, :-1].ravel())
        vals += list(rng.normal(0.0, 1.5, size=K))
        vals += [rng.uniform(-0.6, 0.6), rng.uniform(0.3, 2.0)]
        return self.param_template.with_values(vals)

    def transition_density(self, theta, x, y):
        return self.matrix(theta)[np.asarray(x, int), np.asarray(y, int)]

    def initial_density(self, theta, x):
        return stationary_distribution(self.matrix(theta))[np.asarray(x, int)]

    def emission_density(self, theta, x, s, s_prev):
        mu = self.means(theta)[np.asarray(x, int)]
        phi, sigma2 = theta["phi"], theta["sigma2"]
        mean = mu if s_prev is None else mu + phi * np.asarray(s_prev)
        return normal_pdf(np.asarray(s) - mean, sigma2)

    def sample_initial(self, theta, rng):
        pi = stationary_distribution(self.matrix(theta))
        x = int(rng.choice(self.n_states, p=pi))
        return x, float(self.means(theta)[x] + np.sqrt(theta["sigma2"]) * rng.standard_normal())

    def simulate_step(self, theta, x, s_prev, rng):
        y = int(rng.choice(self.n_states, p=self.matrix(theta)[x]))
        mean = self.means(theta)[y] + theta["phi"] * s_prev
        return y, float(mean + np.sqrt(theta["sigma2"]) * rng.standard_normal())

    def config(self):
        return {"K": self.n_states}


class IidGaussian(StateSpaceModel):
    """Single-state chain: xi_n i.i.d. N(0, v).  The i.i.d. reduction used as a check."""

    finite = True
    n_states = 1
    tag = "iid_gaussian"
    param_template = ParamVector((1.0,), ("v",), ((0.0, np.inf),))

    def transition_density(self, theta, x, y):
        return np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape)

    def initial_density(self, theta, x):
        return np.ones(np.shape(x))

    def emission_density(self, theta, x, s, s_prev):
        return normal_pdf(np.asarray(s) + 0.0 * np.asarray(x), theta["v"])

    def sample_initial(self, theta, rng):
        return 0, float(np.sqrt(theta["v"]) * rng.standard_normal())

    def simulate_step(self, theta, x, s_prev, rng):
        return 0, float(np.sqrt(theta["v"]) * rng.standard_normal())

    def simulate(self, theta, n, rng):
        self.check(theta)
        return ObservationSeq(np.sqrt(theta["v"]) * rng.standard_normal(n)), np.zeros(n, int)
