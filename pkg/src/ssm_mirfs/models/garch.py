"""GARCH volatility models.

In the parameterization used here ``alpha`` multiplies lagged conditional
variances and ``beta`` multiplies lagged squared observations:

    Y_n = sigma_n e_n,   sigma_n^2 = delta + sum_i alpha_i sigma_{n-i}^2 + sum_j beta_j Y_{n-j}^2.

For p = q = 1 the hidden state is X_n = sigma_n^2.  Given the previous
observation its transition is deterministic, so on the grid the next state
has to be deposited onto nearby nodes.  Two rules are offered:

``"spline"`` (default)
    cubic B-spline weights on the four nearest nodes.  They are twice
    continuously differentiable in the target point, so the grid likelihood
    is smooth in the parameters and finite-difference derivatives behave.
    The deposit smooths: a point sitting exactly on a node still leaks a
    sixth of its mass to each neighbour.
``"linear"``
    hat weights on the two bracketing nodes.  Exact for points on nodes,
    but the likelihood picks up a kink whenever a mapped point crosses a
    node, which spoils finite differences at small steps.

Both preserve mass and location and converge at second order in the grid
spacing.
The likelihood conditions on sigma_0^2 = delta / (1 - alpha - beta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..core import ObservationSeq, ParamVector, StateGrid, as_observations, make_trapezoid_grid
from .base import (
    DEFAULT_GRID_SIZE,
    DEFAULT_GRID_WIDTH,
    InadmissibleParameterError,
    StateSpaceModel,
    normal_pdf,
)


class SimulateOnlyError(InadmissibleParameterError):
    """The requested GARCH order has no grid likelihood."""


DEPOSITS = ("spline", "linear")


def hat_weights(grid: StateGrid, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear-interpolation node indices and weights, shapes ``(m, 2)``.

    Values outside the grid are clamped to its end points.
    """
    pts = grid.points
    step = pts[1] - pts[0]
    u = np.clip((np.atleast_1d(np.asarray(z, float)) - pts[0]) / step, 0.0, pts.size - 1.0)
    idx = np.minimum(u.astype(np.intp), pts.size - 2)
    t = u - idx
    return np.stack([idx, idx + 1], axis=1), np.stack([1.0 - t, t], axis=1)


def bspline_weights(grid: StateGrid, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Node indices and cubic B-spline weights for points ``z`` on a uniform grid.

    Returns ``(idx, w)`` with shapes ``(m, 4)``.  Row r deposits weight
    ``w[r, k]`` on node ``idx[r, k]``; weights sum to one and reproduce the
    location exactly.  Nodes past either end are folded onto the end node,
    which keeps the weights smooth in ``z``.
    """
    pts = grid.points
    step = pts[1] - pts[0]
    G = pts.size
    u = np.clip((np.atleast_1d(np.asarray(z, float)) - pts[0]) / step, -2.0, G + 1.0)
    base = np.floor(u)
    t = u - base
    w = np.stack(
        [
            (1.0 - t) ** 3,
            3.0 * t**3 - 6.0 * t**2 + 4.0,
            -3.0 * t**3 + 3.0 * t**2 + 3.0 * t + 1.0,
            t**3,
        ],
        axis=1,
    ) / 6.0
    idx = np.clip(base.astype(np.intp)[:, None] + np.arange(-1, 3), 0, G - 1)
    return idx, w


_WEIGHTS = {"spline": bspline_weights, "linear": hat_weights}


def spread(grid: StateGrid, z: np.ndarray, mass: np.ndarray, deposit: str = "spline") -> np.ndarray:
    """Deposit ``mass`` located at ``z`` onto the grid nodes."""
    idx, w = _WEIGHTS[deposit](grid, z)
    return np.bincount(idx.ravel(), (w * np.asarray(mass, float)[:, None]).ravel(), minlength=grid.size)


class Garch11Model(StateSpaceModel):
    """GARCH(1,1) with the conditional variance as hidden state."""

    tag = "garch11"
    obs_driven_transition = True
    # alpha and beta may be zero (no persistence); nonnegativity and the
    # stationarity condition are checked as constraints.
    param_template = ParamVector(
        (0.1, 0.8, 0.1),
        ("delta", "alpha1", "beta1"),
        ((0.0, np.inf), (-1.0, 1.0), (-1.0, 1.0)),
    )

    def __init__(self, deposit: str = "spline"):
        if deposit not in DEPOSITS:
            raise ValueError(f"deposit must be one of {DEPOSITS}, got {deposit!r}")
        self.deposit = deposit

    def config(self):
        return {"deposit": self.deposit}

    def check_constraints(self, theta):
        a, b = theta["alpha1"], theta["beta1"]
        if a < 0 or b < 0:
            raise InadmissibleParameterError("garch11: alpha1 and beta1 must be nonnegative")
        if a + b >= 1:
            raise InadmissibleParameterError("garch11: alpha1 + beta1 must be below 1")

    @staticmethod
    def unconditional_variance(theta) -> float:
        return theta["delta"] / (1.0 - theta["alpha1"] - theta["beta1"])

    def default_grid(self, theta, c: float = DEFAULT_GRID_WIDTH, G: int = DEFAULT_GRID_SIZE) -> StateGrid:
        """Uniform grid on ``[delta, delta + c * V]`` with V the unconditional variance."""
        lo = theta["delta"]
        return make_trapezoid_grid(lo, lo + c * self.unconditional_variance(theta), G)

    def affine_map(self, theta, s_prev) -> tuple[float, float]:
        """Next state is ``intercept + slope * x`` given the previous observation."""
        return theta["delta"] + theta["beta1"] * float(s_prev) ** 2, theta["alpha1"]

    def propagate(self, theta, grid, weighted, s_prev):
        intercept, slope = self.affine_map(theta, s_prev)
        return spread(grid, intercept + slope * grid.points, weighted, self.deposit) / grid.weights

    def step_transition_matrix(self, theta, grid, s_prev) -> np.ndarray:
        """``K[j, i]`` for one step: spline weights divided by the quadrature weights."""
        intercept, slope = self.affine_map(theta, s_prev)
        idx, w = _WEIGHTS[self.deposit](grid, intercept + slope * grid.points)
        K = np.zeros((grid.size, grid.size))
        np.add.at(K, (np.repeat(np.arange(grid.size), idx.shape[1]), idx.ravel()), w.ravel())
        return K / grid.weights[None, :]

    def initial_vector(self, theta, grid):
        v = np.array([self.unconditional_variance(theta)])
        return spread(grid, v, np.array([1.0]), self.deposit) / grid.weights

    def transition_density(self, theta, x, y):
        """Marginal kernel of sigma^2 (observation integrated out): a scaled chi-square(1)."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        scale = theta["beta1"] * x
        base = theta["delta"] + theta["alpha1"] * x
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(y > base, stats.chi2.pdf((y - base) / scale, 1) / scale, 0.0)
        return out

    def initial_density(self, theta, x):
        raise NotImplementedError("garch11 starts from a point mass; use initial_vector")

    def emission_density(self, theta, x, s, s_prev):
        return normal_pdf(np.asarray(s), np.asarray(x))

    def sample_initial(self, theta, rng):
        v = self.unconditional_variance(theta)
        return v, math.sqrt(v) * float(rng.standard_normal())

    def simulate_step(self, theta, x, s_prev, rng):
        intercept, slope = self.affine_map(theta, s_prev)
        y = intercept + slope * x
        return y, math.sqrt(y) * float(rng.standard_normal())

    def simulate(self, theta, n, rng):
        self.check(theta)
        return GarchSpec(theta["delta"], (theta["alpha1"],), (theta["beta1"],)).simulate(n, rng)


def garch11_conditional_loglik(theta: ParamVector, obs, sigma2_0: float | None = None) -> float:
    """Gaussian log-likelihood from the variance recursion started at ``sigma2_0``.

    Defaults to the unconditional variance.
    """
    y = as_observations(obs).scalar()
    d, a, b = theta["delta"], theta["alpha1"], theta["beta1"]
    s2 = d / (1.0 - a - b) if sigma2_0 is None else float(sigma2_0)
    total = 0.0
    for v in y:
        total += -0.5 * (math.log(2.0 * math.pi * s2) + v * v / s2)
        s2 = d + a * s2 + b * v * v
    return total


@dataclass(frozen=True)
class GarchSpec:
    """General GARCH(p, q); only p = q = 1 has a grid likelihood."""

    delta: float
    alphas: tuple[float, ...]
    betas: tuple[float, ...]
    deposit: str = "spline"

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.delta > 0:
            raise InadmissibleParameterError("garch: delta must be positive")
        if any(a < 0 for a in self.alphas) or any(b < 0 for b in self.betas):
            raise InadmissibleParameterError("garch: coefficients must be nonnegative")
        if sum(self.alphas) + sum(self.betas) >= 1:
            raise InadmissibleParameterError("garch: sum of coefficients must be below 1")
        if self.deposit not in DEPOSITS:
            raise ValueError(f"garch: deposit must be one of {DEPOSITS}, got {self.deposit!r}")

    @property
    def order(self) -> tuple[int, int]:
        return len(self.alphas), len(self.betas)

    def unconditional_variance(self) -> float:
        return self.delta / (1.0 - sum(self.alphas) - sum(self.betas))

    def model(self) -> Garch11Model:
        if self.order != (1, 1):
            raise SimulateOnlyError(f"garch order {self.order} is simulate-only; the grid likelihood needs p = q = 1")
        return Garch11Model(self.deposit)

    def theta(self) -> ParamVector:
        if self.order != (1, 1):
            raise SimulateOnlyError(f"garch order {self.order} is simulate-only")
        return Garch11Model.param_template.with_values((self.delta, self.alphas[0], self.betas[0]))

    def simulate(self, n: int, rng: np.random.Generator):
        """Returns ``(observations, conditional variances)``; all lags start at V."""
        if n < 1:
            raise ValueError("need n >= 1")
        p, q = self.order
        v = self.unconditional_variance()
        e = rng.standard_normal(n)
        s2 = np.empty(n)
        y = np.empty(n)
        s2_lags = [v] * max(p, 1)
        y2_lags = [v] * max(q, 1)
        for k in range(n):
            if k > 0:
                cur = self.delta
                for i, a in enumerate(self.alphas):
                    cur += a * s2_lags[i]
                for j, b in enumerate(self.betas):
                    cur += b * y2_lags[j]
            else:
                cur = v
            s2[k] = cur
            y[k] = math.sqrt(cur) * e[k]
            s2_lags = [cur] + s2_lags[:-1]
            y2_lags = [y[k] * y[k]] + y2_lags[:-1]
        return ObservationSeq(y), s2

    def to_dict(self) -> dict:
        return {"delta": self.delta, "alphas": list(self.alphas), "betas": list(self.betas), "deposit": self.deposit}

    @classmethod
    def from_dict(cls, data) -> "GarchSpec":
        unknown = set(data) - {"delta", "alphas", "betas", "deposit"}
        if unknown:
            raise ValueError(f"GarchSpec: unknown field(s) {sorted(unknown)}")
        return cls(float(data["delta"]), tuple(data["alphas"]), tuple(data["betas"]), data.get("deposit", "spline"))
