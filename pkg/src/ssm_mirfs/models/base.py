"""Base class for parameterized state space models."""

from __future__ import annotations

import math

import numpy as np

from ..core import GridKind, ObservationSeq, ParamVector, StateGrid, finite_grid, make_trapezoid_grid

DEFAULT_GRID_WIDTH = 8.0
DEFAULT_GRID_SIZE = 401


class InadmissibleParameterError(ValueError):
    pass


class StateSpaceModel:
    """A hidden Markov chain X_n with observations xi_n depending on (X_n, xi_{n-1}).

    Subclasses provide vectorized densities; every density method must
    broadcast over array arguments.  ``x`` is the previous state and ``y``
    the next one in :meth:`transition_density`.

    Grid-level matrices are derived from the densities here.  Models whose
    hidden transition is driven by the previous observation set
    ``obs_driven_transition`` and override :meth:`propagate`.
    """

    tag: str = ""
    finite: bool = False
    n_states: int | None = None
    obs_driven_transition: bool = False
    param_template: ParamVector

    # -- densities -------------------------------------------------------
    def transition_density(self, theta: ParamVector, x, y):
        raise NotImplementedError

    def emission_density(self, theta: ParamVector, x, s, s_prev):
        """f(s; theta | x, s_prev); ``s_prev=None`` is the initial emission."""
        raise NotImplementedError

    def log_emission_density(self, theta: ParamVector, x, s, s_prev):
        with np.errstate(divide="ignore"):
            return np.log(self.emission_density(theta, x, s, s_prev))

    def initial_density(self, theta: ParamVector, x):
        raise NotImplementedError

    # -- simulation ------------------------------------------------------
    def sample_initial(self, theta: ParamVector, rng: np.random.Generator):
        raise NotImplementedError

    def simulate_step(self, theta: ParamVector, x, s_prev, rng: np.random.Generator):
        raise NotImplementedError

    def simulate(self, theta: ParamVector, n: int, rng: np.random.Generator):
        """Draw ``n`` observations; returns ``(ObservationSeq, hidden_path)``."""
        self.check(theta)
        if n < 1:
            raise ValueError("need n >= 1")
        x, s = self.sample_initial(theta, rng)
        xs, ss = [x], [s]
        for _ in range(n - 1):
            x, s = self.simulate_step(theta, x, s, rng)
            xs.append(x)
            ss.append(s)
        return ObservationSeq(np.asarray(ss, float)), np.asarray(xs)

    # -- parameters ------------------------------------------------------
    def params(self, **values: float) -> ParamVector:
        return ParamVector.from_dict(self.param_template, values)

    def check(self, theta: ParamVector) -> None:
        if theta.names != self.param_template.names:
            raise InadmissibleParameterError(
                f"{self.tag}: expected parameters {self.param_template.names}, got {theta.names}"
            )
        if not self.param_template.contains(theta.values):
            raise InadmissibleParameterError(f"{self.tag}: parameters out of bounds: {theta.to_dict()}")
        self.check_constraints(theta)

    def check_constraints(self, theta: ParamVector) -> None:
        """Cross-parameter constraints beyond the box bounds."""

    # -- grids -----------------------------------------------------------
    def stationary_moments(self, theta: ParamVector) -> tuple[float, float]:
        """Stationary mean and sd of the hidden chain (continuous models)."""
        raise NotImplementedError

    def default_grid(self, theta: ParamVector, c: float = DEFAULT_GRID_WIDTH, G: int = DEFAULT_GRID_SIZE) -> StateGrid:
        if self.finite:
            return finite_grid(self.n_states)
        mu, sd = self.stationary_moments(theta)
        return make_trapezoid_grid(mu - c * sd, mu + c * sd, G)

    def transition_matrix(self, theta: ParamVector, grid: StateGrid) -> np.ndarray:
        """``K[j, i] = p(x_j, x_i)`` evaluated on the grid."""
        x = grid.points
        return np.asarray(self.transition_density(theta, x[:, None], x[None, :]), float)

    def initial_vector(self, theta: ParamVector, grid: StateGrid) -> np.ndarray:
        return np.asarray(self.initial_density(theta, grid.points), float) * np.ones(grid.size)

    def obs_array(self, obs: ObservationSeq) -> np.ndarray:
        return obs.scalar()

    def emission_matrix(self, theta: ParamVector, grid: StateGrid, obs: ObservationSeq) -> np.ndarray:
        """Row k holds f(xi_k | x_i, xi_{k-1}) over the grid; row 0 is the initial emission."""
        s = self.obs_array(obs)
        x = grid.points
        out = np.empty((len(obs), grid.size))
        out[0] = self.emission_density(theta, x, s[0], None)
        if len(obs) > 1:
            out[1:] = self.emission_density(theta, x[None, :], s[1:, None], s[:-1, None])
        return out

    def propagate(self, theta: ParamVector, grid: StateGrid, weighted: np.ndarray, s_prev) -> np.ndarray:
        """``sum_j p(x_j, x_i; s_prev) * weighted_j`` for observation-driven transitions."""
        raise NotImplementedError

    def _is_finite_grid(self, grid: StateGrid) -> bool:
        return grid.kind is GridKind.FINITE

    # -- serialization ---------------------------------------------------
    def config(self) -> dict:
        """Structural (non-parameter) settings, for JSON echo."""
        return {}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.config()})"


def normal_pdf(z, var):
    return np.exp(-0.5 * z * z / var) / np.sqrt(2.0 * math.pi * var)


def normal_logpdf(z, var):
    return -0.5 * z * z / var - 0.5 * np.log(2.0 * math.pi * var)
