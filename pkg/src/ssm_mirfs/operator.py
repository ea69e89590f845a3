"""Forward operator recursion for state space likelihoods.

One step maps a filter h on the grid to

    (P h)(x_i) = f(s | x_i, s_prev) * sum_j w_j p(x_j, x_i) h_j,

integrating over the *first* argument of the transition density, and then
renormalizes.  The log of each normalizing mass is one likelihood
increment, so the running sum is the log joint density of the data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import kernels
from .core import FilterState, ParamVector, StateGrid, as_observations
from .models.base import StateSpaceModel

ORIENTATIONS = ("corrected", "original")
BRUTE_FORCE_LIMIT = 10**7


class NumericalError(ArithmeticError):
    """Base class for numeric failures during a likelihood evaluation."""


class FilterCollapseError(NumericalError):
    def __init__(self, step: int, detail: str = ""):
        self.step = step
        msg = f"filter collapse at step {step}: pre-normalization mass is zero or non-finite"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class NonFiniteDensityError(NumericalError):
    def __init__(self, what: str, step: int | None, index, point):
        self.step, self.index, self.point = step, index, point
        where = f"step {step}, " if step is not None else ""
        super().__init__(f"non-finite or negative {what} at {where}grid index {index} (x={point})")


@dataclass(frozen=True)
class LogLikBreakdown:
    """Per-step log-mass increments and their sequential sum."""

    increments: tuple[float, ...]
    total: float

    @classmethod
    def from_increments(cls, increments) -> "LogLikBreakdown":
        inc = [float(v) for v in increments]
        total = float(running_sums(inc)[-1]) if inc else 0.0
        return cls(tuple(inc), total)

    @property
    def n(self) -> int:
        return len(self.increments)

    def to_dict(self) -> dict:
        return {"total": self.total, "increments": list(self.increments)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data) -> "LogLikBreakdown":
        return cls(tuple(float(v) for v in data["increments"]), float(data["total"]))

    @classmethod
    def from_json(cls, text: str) -> "LogLikBreakdown":
        return cls.from_dict(json.loads(text))


def running_sums(values) -> np.ndarray:
    """Compensated (Neumaier) prefix sums.

    Plain accumulation of a few thousand increments of size one loses about
    1e-11 absolute accuracy, which is visible in finite-difference scores.
    Every log-normalizer in this module comes from this one function, so
    filter ``log_norm`` values and totals agree exactly.
    """
    out = np.empty(len(values))
    s = c = 0.0
    for k, v in enumerate(values):
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
        out[k] = s + c
    return out


# -- validation ---------------------------------------------------------------
def _check_vector(v: np.ndarray, what: str, grid: StateGrid, step: int | None) -> None:
    bad = ~np.isfinite(v) | (v < 0)
    if bad.any():
        i = int(np.argmax(bad))
        raise NonFiniteDensityError(what, step, i, float(grid.points[i]))


def _check_emissions(emis: np.ndarray, grid: StateGrid) -> None:
    bad = ~np.isfinite(emis) | (emis < 0)
    if bad.any():
        k, i = np.unravel_index(int(np.argmax(bad)), emis.shape)
        raise NonFiniteDensityError("emission density", int(k), int(i), float(grid.points[i]))


def _check_transition(trans: np.ndarray, grid: StateGrid) -> None:
    bad = ~np.isfinite(trans) | (trans < 0)
    if bad.any():
        j, i = np.unravel_index(int(np.argmax(bad)), trans.shape)
        raise NonFiniteDensityError(
            f"transition density from x={grid.points[j]}", None, int(i), float(grid.points[i])
        )


def _uniform_spacing(grid: StateGrid) -> float:
    d = np.diff(grid.points)
    if grid.size < 2 or not np.allclose(d, d[0], rtol=1e-10, atol=0.0):
        raise ValueError("observation-driven transitions need a uniform grid")
    return float(d[0])


# -- single steps -------------------------------------------------------------
def _initial_raw(model, theta, grid, s0) -> np.ndarray:
    init = model.initial_vector(theta, grid)
    _check_vector(init, "initial density", grid, 0)
    f0 = np.asarray(model.emission_density(theta, grid.points, s0, None), float) * np.ones(grid.size)
    _check_vector(f0, "emission density", grid, 0)
    return init * f0


def initial_filter(model: StateSpaceModel, theta: ParamVector, grid: StateGrid, s0) -> FilterState:
    """Filter after the first observation: proportional to pi(x) f(s0 | x)."""
    model.check(theta)
    raw = _initial_raw(model, theta, grid, float(np.ravel(s0)[0]))
    mass = grid.integrate(raw)
    if not (mass > 0 and np.isfinite(mass)):
        raise FilterCollapseError(0)
    log_mass = float(np.log(mass))
    return FilterState(raw / mass, log_norm=log_mass, step=0, increment=log_mass, grid=grid)


def unnormalized_step(
    model: StateSpaceModel,
    theta: ParamVector,
    grid: StateGrid,
    values: np.ndarray,
    s,
    s_prev,
    orientation: str = "corrected",
    trans: np.ndarray | None = None,
) -> np.ndarray:
    """Apply the forward operator to an arbitrary nonnegative function on the grid.

    ``trans`` may carry a precomputed ``model.transition_matrix``.
    """
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}")
    values = np.asarray(values, float)
    f = np.asarray(model.emission_density(theta, grid.points, s, s_prev), float) * np.ones(grid.size)
    _check_vector(f, "emission density", grid, None)
    w = grid.weights
    if model.obs_driven_transition:
        if orientation == "original":
            raise ValueError("the original orientation is only defined for fixed transition kernels")
        return model.propagate(theta, grid, w * values, s_prev) * f
    K = model.transition_matrix(theta, grid) if trans is None else trans
    if orientation == "corrected":
        return (K.T @ (w * values)) * f
    # integrates over the second argument and evaluates the emission at the
    # integration variable; kept only to demonstrate that it is wrong
    return K @ (w * f * values)


def apply_operator(
    model: StateSpaceModel,
    theta: ParamVector,
    grid: StateGrid,
    h: FilterState,
    s,
    s_prev,
    orientation: str = "corrected",
) -> FilterState:
    """One normalized forward step; ``log_norm`` grows by the log pre-normalization mass."""
    if h.values.size != grid.size:
        raise ValueError("filter and grid sizes differ")
    raw = unnormalized_step(model, theta, grid, h.values, _scalar(s), _scalar(s_prev), orientation)
    step = h.step + 1
    mass = grid.integrate(raw)
    if not (mass > 0 and np.isfinite(mass)):
        raise FilterCollapseError(step)
    inc = float(np.log(mass))
    return FilterState(raw / mass, log_norm=h.log_norm + inc, step=step, increment=inc, grid=grid)


def _scalar(s):
    return None if s is None else float(np.ravel(s)[0])


# -- full recursion -----------------------------------------------------------
@dataclass(frozen=True)
class ForwardResult:
    breakdown: LogLikBreakdown
    final: FilterState
    history: np.ndarray | None


def forward_pass(
    model: StateSpaceModel,
    theta: ParamVector,
    grid: StateGrid,
    obs,
    orientation: str = "corrected",
    keep: bool = False,
    backend: str | None = None,
) -> ForwardResult:
    """Run the normalized recursion over the whole sequence."""
    obs = as_observations(obs)
    model.check(theta)
    if orientation == "original":
        return _forward_stepwise(model, theta, grid, obs, orientation, keep)
    emis = model.emission_matrix(theta, grid, obs)
    _check_emissions(emis, grid)
    init = model.initial_vector(theta, grid)
    _check_vector(init, "initial density", grid, 0)
    if model.obs_driven_transition:
        step = _uniform_spacing(grid)
        s = model.obs_array(obs)
        intercepts = np.zeros(len(obs))
        slope = 0.0
        for k in range(1, len(obs)):
            intercepts[k], slope = model.affine_map(theta, s[k - 1])
        incr, h, hist, failed = kernels.forward_affine(
            grid.points[0], step, grid.weights, emis, init, intercepts, slope, keep, backend,
            spline=model.deposit == "spline",
        )
    else:
        trans = model.transition_matrix(theta, grid)
        _check_transition(trans, grid)
        incr, h, hist, failed = kernels.forward(trans, emis, init, grid.weights, keep, backend)
    if failed >= 0:
        raise FilterCollapseError(int(failed))
    bd = LogLikBreakdown.from_increments(incr)
    final = FilterState(h, log_norm=bd.total, step=len(obs) - 1, increment=float(incr[-1]), grid=grid)
    return ForwardResult(bd, final, hist)


def _forward_stepwise(model, theta, grid, obs, orientation, keep) -> ForwardResult:
    s = model.obs_array(obs)
    h = initial_filter(model, theta, grid, s[0])
    incr = [h.increment]
    hist = [h.values] if keep else None
    for k in range(1, len(s)):
        h = apply_operator(model, theta, grid, h, s[k], s[k - 1], orientation)
        incr.append(h.increment)
        if keep:
            hist.append(h.values)
    bd = LogLikBreakdown.from_increments(incr)
    final = FilterState(h.values, log_norm=bd.total, step=h.step, increment=h.increment, grid=grid)
    return ForwardResult(bd, final, None if hist is None else np.array(hist))


def log_likelihood(
    model: StateSpaceModel,
    theta: ParamVector,
    grid: StateGrid,
    obs,
    orientation: str = "corrected",
    backend: str | None = None,
) -> LogLikBreakdown:
    """Log joint density of the observations under the grid quadrature."""
    return forward_pass(model, theta, grid, obs, orientation, backend=backend).breakdown


def filter_states(model, theta, grid, obs) -> Iterator[FilterState]:
    """Yield the normalized filter after each observation."""
    res = forward_pass(model, theta, grid, obs, keep=True)
    incr = np.asarray(res.breakdown.increments)
    log_norms = running_sums(incr)
    for k in range(len(incr)):
        yield FilterState(res.history[k], log_norm=float(log_norms[k]), step=k, increment=float(incr[k]), grid=grid)


def ergodic_average(
    model: StateSpaceModel,
    theta: ParamVector,
    grid: StateGrid,
    obs,
    g: Callable[[FilterState], float],
) -> float:
    """(1/n) sum_{k=1}^n g(filter at step k)."""
    obs = as_observations(obs)
    if len(obs) < 2:
        raise ValueError("need at least two observations")
    total = 0.0
    for h in filter_states(model, theta, grid, obs):
        if h.step >= 1:
            total += float(g(h))
    return total / (len(obs) - 1)


# -- oracle ------------------------------------------------------------------
def brute_force_loglik(model: StateSpaceModel, theta: ParamVector, grid: StateGrid, obs) -> float:
    """Log of the explicit sum over every hidden path (reference oracle).

    The full tensor of path weights is materialized, so the grid size raised
    to the number of observations is capped at ``BRUTE_FORCE_LIMIT``.
    """
    obs = as_observations(obs)
    model.check(theta)
    G, n1 = grid.size, len(obs)
    if float(G) ** n1 > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force needs {G}^{n1} paths, above the limit {BRUTE_FORCE_LIMIT}")
    s = model.obs_array(obs)
    x = grid.points
    w = grid.weights
    if model.obs_driven_transition:
        init = model.initial_vector(theta, grid)
    else:
        init = np.asarray(model.initial_density(theta, x), float) * np.ones(G)
    paths = w * init * np.asarray(model.emission_density(theta, x, s[0], None), float)
    for k in range(1, n1):
        if model.obs_driven_transition:
            T = model.step_transition_matrix(theta, grid, s[k - 1])
        else:
            T = np.asarray(model.transition_density(theta, x[:, None], x[None, :]), float)
        f = np.asarray(model.emission_density(theta, x, s[k], s[k - 1]), float) * np.ones(G)
        # extend every path by one more state; no marginalization until the end
        paths = paths[..., None] * (T * (w * f)[None, :]).reshape((1,) * (paths.ndim - 1) + (G, G))
    return float(np.log(paths.sum()))
