"""Numerical checks of contraction, moment and ratio conditions, and KL information.

Two sup-bounds of the forward operator appear here.  The *row* form,

    g(s0, s1) = sup_{x0} int p(x0, x1) f(s1 | x1, s0) m(dx1),

is the quantity entering the weighted contraction condition.  The *column*
form,

    sup_{x1} f(s1 | x1, s0) int p(x0, x1) m(dx0),

is the exact sup-norm Lipschitz constant of the discretized operator, so it
is the upper bracket for :func:`estimate_lipschitz`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .core import FilterState, GridKind, ParamVector, StateGrid, as_observations, replication_rng
from .inference import DEFAULT_FD_STEP, fd_steps
from .models.base import StateSpaceModel
from .operator import log_likelihood, unnormalized_step

LOG_MAX = math.log(np.finfo(float).max)
ORIENTATIONS = ("row", "column")
_CANDIDATE_CAP = 2001


def abs_state_weight(x, s) -> float:
    """w(x, s) = |x| + 1."""
    return abs(float(x)) + 1.0


@dataclass
class ContractionReport:
    lyapunov_estimate: float
    lyapunov_upper: float
    k2_weighted_estimate: float
    k2_stderr: float
    k3_moment_estimate: float
    k3_moment_stderr: float
    k3_distance_estimate: float
    g_theta_sup: float
    p: int
    n_steps: int
    reps: int
    passed: bool

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


# -- operator bounds ---------------------------------------------------------
def _emission_row(model, theta, grid, s1, s0) -> np.ndarray:
    return np.asarray(model.emission_density(theta, grid.points, s1, s0), float) * np.ones(grid.size)


def _row_integral(model, theta, grid, f, x0: np.ndarray) -> np.ndarray:
    """int p(x0, x1) f(x1) m(dx1) for each entry of ``x0`` (chunked)."""
    out = np.empty(x0.size)
    wf = grid.weights * f
    chunk = max(1, 4_000_000 // grid.size)
    for a in range(0, x0.size, chunk):
        K = np.asarray(model.transition_density(theta, x0[a : a + chunk, None], grid.points[None, :]), float)
        out[a : a + chunk] = K @ wf
    return out


def c1_sup_bound(
    model: StateSpaceModel,
    theta: ParamVector,
    grid: StateGrid,
    s0,
    s1,
    orientation: str = "row",
    refine: bool = True,
) -> float:
    """Sup over the state of the one-step operator mass bound.

    ``orientation="row"`` integrates the transition density over its second
    argument; ``"column"`` over its first (see the module docstring).  For
    continuous grids the row sup is refined off the grid with a bounded
    scalar search around the best grid point.
    """
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}")
    s0 = None if s0 is None else float(s0)
    f = _emission_row(model, theta, grid, float(s1), s0)
    if model.obs_driven_transition:
        w = grid.weights
        if orientation == "row":
            # each source point deposits all of its mass at one place
            K = model.step_transition_matrix(theta, grid, s0)
            return float(np.max(K @ (w * f)))
        K = model.step_transition_matrix(theta, grid, s0)
        return float(np.max(f * (w @ K)))
    if orientation == "column" or grid.kind is GridKind.FINITE:
        K = model.transition_matrix(theta, grid)
        if orientation == "column":
            return float(np.max(f * (grid.weights @ K)))
        return float(np.max(K @ (grid.weights * f)))
    step = max(1, grid.size // _CANDIDATE_CAP)
    cand = grid.points[::step]
    vals = _row_integral(model, theta, grid, f, cand)
    best = int(np.argmax(vals))
    if not refine:
        return float(vals[best])
    lo = cand[max(best - 1, 0)]
    hi = cand[min(best + 1, cand.size - 1)]
    if hi <= lo:
        return float(vals[best])
    res = minimize_scalar(
        lambda x: -_row_integral(model, theta, grid, f, np.array([x]))[0],
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-10 * max(1.0, abs(lo), abs(hi))},
    )
    return float(max(vals[best], -res.fun))


def lipschitz_bound(model, theta, grid, s, s_prev) -> float:
    """Exact sup-norm Lipschitz constant of the discretized unnormalized operator."""
    return c1_sup_bound(model, theta, grid, s_prev, s, orientation="column")


def random_filters(rng: np.random.Generator, grid: StateGrid, count: int) -> np.ndarray:
    """``count`` random normalized filters (i.i.d. exponential values)."""
    H = rng.exponential(size=(count, grid.size))
    return H / (H @ grid.weights)[:, None]


def estimate_lipschitz(
    model: StateSpaceModel,
    theta: ParamVector,
    grid: StateGrid,
    obs,
    pairs: int,
    seed: int,
) -> np.ndarray:
    """Per-step lower bounds on the operator's Lipschitz constant.

    For step k (k = 1..n) returns the largest ratio d(P h1, P h2) / d(h1, h2)
    over ``pairs`` random pairs of normalized filters, with P the
    unnormalized operator for observation k and d the sup distance.
    Pairs that coincide are skipped; on a one-point state space every
    normalized filter is the same, so the estimate is 0.
    """
    if pairs < 2:
        raise ValueError("need at least 2 pairs")
    model.check(theta)
    s = model.obs_array(as_observations(obs))
    rng = replication_rng(seed, 0)
    K = None if model.obs_driven_transition else model.transition_matrix(theta, grid)
    w = grid.weights
    out = np.empty(len(s) - 1)
    for k in range(1, len(s)):
        H1 = random_filters(rng, grid, pairs)
        H2 = random_filters(rng, grid, pairs)
        f = _emission_row(model, theta, grid, s[k], s[k - 1])
        D = H1 - H2
        if K is not None:
            PD = (D * w) @ K * f
        else:
            PD = np.array([model.propagate(theta, grid, w * d, s[k - 1]) * f for d in D])
        num = np.max(np.abs(PD), axis=1)
        den = np.max(np.abs(D), axis=1)
        keep = den > 0
        out[k - 1] = float(np.max(num[keep] / den[keep])) if keep.any() else 0.0
    return out


# -- weighted contraction and moments ----------------------------------------------
def default_starts(model, theta, grid) -> list[tuple[float, float]]:
    if grid.kind is GridKind.FINITE:
        return [(int(x), 0.0) for x in grid.points]
    try:
        mu, sd = model.stationary_moments(theta)
    except NotImplementedError:
        mu, sd = float(np.mean(grid.points)), float(np.ptp(grid.points)) / 16.0
    return [(mu + c * sd, 0.0) for c in (-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0)]


def _path_from(model, theta, x0, s0, p, rng):
    xs, ss = [x0], [s0]
    x, s = x0, s0
    for _ in range(p):
        x, s = model.simulate_step(theta, x, s, rng)
        xs.append(x)
        ss.append(s)
    return xs, ss


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    v = np.asarray(v, float)
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.inf
    return float(np.mean(v)), se


def check_k2_k3(
    model: StateSpaceModel,
    theta: ParamVector,
    grid: StateGrid,
    p: int = 1,
    reps: int = 200,
    seed: int = 0,
    weight: Callable[[float, float], float] = abs_state_weight,
    starts: Sequence[tuple[float, float]] | None = None,
    n_steps: int = 200,
    pairs: int = 16,
    ref_cells: int = 8,
) -> ContractionReport:
    """Monte Carlo estimates for the weighted contraction and moment conditions.

    From each start ``(x0, s0)`` it simulates ``reps`` paths of length ``p``
    and averages log(G_p * w(X_p, xi_p) / w(x0, s0)), where G_p is the
    product of per-step factors: the model's ``step_lipschitz`` when it has
    one, otherwise the row bound g(xi_{k-1}, xi_k).  The reported estimate is
    the largest start-wise mean; PASS requires estimate + 2 stderr < 0.

    The moment part averages g(s0, xi_1) w(X_1, xi_1) / w(x0, s0) the same
    way.  Lyapunov brackets and the distance moment E d(P h, h) for the
    reference density h come from one stationary path of ``n_steps`` steps.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    model.check(theta)
    starts = default_starts(model, theta, grid) if starts is None else list(starts)
    lipschitz = getattr(model, "step_lipschitz", None)

    def g(sa, sb):
        return c1_sup_bound(model, theta, grid, sa, sb)

    k2_best, k2_se = -math.inf, math.nan
    k3_best, k3_se = -math.inf, math.nan
    g_sup = 0.0
    for si, (x0, s0) in enumerate(starts):
        rng = replication_rng(seed, si)
        k2_samples = np.empty(reps)
        k3_samples = np.empty(reps)
        for r in range(reps):
            xs, ss = _path_from(model, theta, x0, s0, p, rng)
            factors = []
            for k in range(1, p + 1):
                gk = g(ss[k - 1], ss[k])
                g_sup = max(g_sup, gk)
                factors.append(float(lipschitz(theta, xs[k])) if lipschitz is not None else gk)
                if k == 1:
                    k3_samples[r] = gk * weight(xs[1], ss[1]) / weight(x0, s0)
            with np.errstate(divide="ignore"):
                k2_samples[r] = float(np.sum(np.log(factors))) + math.log(weight(xs[p], ss[p]) / weight(x0, s0))
        m2, se2 = _mean_se(k2_samples)
        if m2 > k2_best:
            k2_best, k2_se = m2, se2
        m3, se3 = _mean_se(k3_samples)
        if m3 > k3_best:
            k3_best, k3_se = m3, se3

    rng = replication_rng(seed, len(starts))
    obs, _ = model.simulate(theta, n_steps + 1, rng)
    s = model.obs_array(obs)
    lower = estimate_lipschitz(model, theta, grid, obs, pairs, seed)
    upper = np.array([lipschitz_bound(model, theta, grid, s[k], s[k - 1]) for k in range(1, len(s))])
    href = build_reference_density(grid, min(ref_cells, grid.size))
    dist = [
        float(np.max(np.abs(unnormalized_step(model, theta, grid, href.values, s[k], s[k - 1]) - href.values)))
        for k in range(1, len(s))
    ]
    with np.errstate(divide="ignore"):
        lyap_lower = float(np.mean(np.log(lower)))
        lyap_upper = float(np.mean(np.log(upper)))
    passed = bool(k2_best + 2.0 * k2_se < -1e-12)
    return ContractionReport(
        lyapunov_estimate=lyap_lower,
        lyapunov_upper=lyap_upper,
        k2_weighted_estimate=k2_best,
        k2_stderr=k2_se,
        k3_moment_estimate=k3_best,
        k3_moment_stderr=k3_se,
        k3_distance_estimate=float(np.mean(dist)),
        g_theta_sup=g_sup,
        p=p,
        n_steps=n_steps,
        reps=reps,
        passed=passed,
    )


def build_reference_density(grid: StateGrid, cells: int = 8) -> FilterState:
    """Piecewise-constant density with dyadic cell masses.

    The grid is split into ``cells`` contiguous blocks of (nearly) equal
    index length.  Blocks are ranked by distance of their centre from the
    middle of the grid and the n-th ranked block gets mass proportional to
    2^-n, spread uniformly over it; the result is normalized.
    """
    if cells < 2 or grid.size < cells:
        raise ValueError(f"need at least 2 cells with at least one grid point each (cells={cells}, G={grid.size})")
    blocks = np.array_split(np.arange(grid.size), cells)
    mid = 0.5 * (grid.points[0] + grid.points[-1])
    centres = np.array([grid.points[b].mean() for b in blocks])
    order = np.argsort(np.abs(centres - mid), kind="stable")
    values = np.empty(grid.size)
    for rank, bi in enumerate(order, start=1):
        b = blocks[bi]
        values[b] = 2.0**-rank / grid.weights[b].sum()
    return FilterState.normalized(values, grid)


# -- C5 ratio --------------------------------------------------------------------
@dataclass
class C5Result:
    value: float
    log_value: float
    bound: float
    growth_exponent: float
    overflow: bool
    argmax_y: float
    argmin_z: float

    def __float__(self) -> float:
        return self.value

    def to_dict(self) -> dict:
        return asdict(self)


def c5_ratio_sup(
    model: StateSpaceModel,
    theta: ParamVector,
    grid_bound: float,
    obs_pair: tuple[float, float],
    mesh: int = 4001,
    points: Sequence[float] | None = None,
) -> C5Result:
    """sup over (y, z) of f(s0|y) f(s1|y, s0) / (f(s0|z) f(s1|z, s0)).

    The ratio separates into a function of y over a function of z, so the
    sup over the square mesh equals exp(max L - min L) with L the log
    numerator evaluated on the one-dimensional mesh.  Finite-state models
    use their states and ignore ``grid_bound``.  An overflowing sup is
    returned as ``inf`` with ``overflow=True``.
    """
    if not grid_bound > 0:
        raise ValueError("grid_bound must be positive")
    s0, s1 = (float(v) for v in obs_pair)
    if points is not None:
        y = np.asarray(points, float)
    elif model.finite:
        y = np.arange(model.n_states, dtype=float)
    else:
        y = np.linspace(-grid_bound, grid_bound, mesh)
    L = np.asarray(model.log_emission_density(theta, y, s0, None), float) + np.asarray(
        model.log_emission_density(theta, y, s1, s0), float
    )
    i, j = int(np.argmax(L)), int(np.argmin(L))
    log_value = float(L[i] - L[j])
    overflow = not math.isfinite(log_value) or log_value > LOG_MAX
    value = math.inf if overflow else math.exp(log_value)
    return C5Result(
        value=value,
        log_value=log_value,
        bound=float(grid_bound),
        growth_exponent=log_value / grid_bound**2,
        overflow=overflow,
        argmax_y=float(y[i]),
        argmin_z=float(y[j]),
    )


def c5_moment_estimate(
    model: StateSpaceModel,
    theta: ParamVector,
    grid: StateGrid,
    reps: int,
    seed: int,
    fd_step: float | None = None,
) -> dict:
    """Second moments of the two-observation log-likelihood score under stationarity.

    Reported without a pass/fail threshold.
    """
    base = DEFAULT_FD_STEP if fd_step is None else fd_step
    x0 = theta.array
    steps = fd_steps(x0, base)
    samples = np.empty((reps, x0.size))
    for r in range(reps):
        obs, _ = model.simulate(theta, 2, replication_rng(seed, r))
        for j, h in enumerate(steps):
            e = np.zeros(x0.size)
            e[j] = h
            up = log_likelihood(model, theta.with_values(x0 + e), grid, obs).total
            dn = log_likelihood(model, theta.with_values(x0 - e), grid, obs).total
            samples[r, j] = (up - dn) / (2 * h)
    sq = samples**2
    return {
        "names": list(theta.names),
        "second_moment": sq.mean(axis=0).tolist(),
        "stderr": (sq.std(axis=0, ddof=1) / math.sqrt(reps)).tolist() if reps > 1 else None,
        "reps": reps,
    }


# -- Kullback-Leibler -------------------------------------------------------------
@dataclass
class KlResult:
    estimate: float
    stderr: float
    samples: list[float]

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_kl(
    model: StateSpaceModel,
    theta0: ParamVector,
    theta: ParamVector,
    grid: StateGrid,
    n: int,
    reps: int,
    seed: int,
) -> KlResult:
    """Average per-observation log-likelihood ratio over paths simulated under ``theta0``."""
    model.check(theta0)
    model.check(theta)
    vals = []
    for r in range(reps):
        obs, _ = model.simulate(theta0, n, replication_rng(seed, r))
        l0 = log_likelihood(model, theta0, grid, obs).total
        l1 = l0 if theta is theta0 else log_likelihood(model, theta, grid, obs).total
        vals.append((l0 - l1) / n)
    est, se = _mean_se(np.array(vals))
    return KlResult(est, se if reps > 1 else math.nan, vals)
