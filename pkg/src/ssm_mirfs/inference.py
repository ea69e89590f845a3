"""Finite-difference score and information, and the likelihood-equation solver."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import ParamVector, StateGrid, as_observations, replication_rng, run_jobs
from .models.base import InadmissibleParameterError, StateSpaceModel
from .operator import NumericalError, forward_pass, log_likelihood

EPS = np.finfo(float).eps
DEFAULT_FD_STEP = EPS ** (1.0 / 3.0)
DEFAULT_HESS_STEP = EPS ** (1.0 / 4.0)
INTERVAL_MAPS = ("tanh", "algebraic")


class BoundaryProximityError(ValueError):
    """A finite-difference stencil would leave the parameter space."""


class SingularInformationError(np.linalg.LinAlgError):
    def __init__(self, matrix: np.ndarray, detail: str = ""):
        self.matrix = matrix
        self.condition_number = float(np.linalg.cond(matrix)) if matrix.size else math.inf
        super().__init__(
            f"observed information is singular or indefinite (condition number {self.condition_number:.3e})"
            + (f": {detail}" if detail else "")
        )


# -- bijections ---------------------------------------------------------------
class Bijection:
    """Smooth map from the real line onto an open interval."""

    def __init__(self, lo: float, hi: float, interval_map: str = "tanh"):
        if interval_map not in INTERVAL_MAPS:
            raise ValueError(f"interval_map must be one of {INTERVAL_MAPS}")
        self.lo, self.hi, self.interval_map = lo, hi, interval_map
        if math.isinf(lo) and math.isinf(hi):
            self.kind = "identity"
        elif math.isinf(hi):
            self.kind = "lower"
        elif math.isinf(lo):
            self.kind = "upper"
        elif (lo, hi) == (-1.0, 1.0):
            self.kind = interval_map
        else:
            self.kind = "logistic"

    def to_natural(self, u: float) -> float:
        lo, hi, k = self.lo, self.hi, self.kind
        if k == "identity":
            return u
        if k == "lower":
            return lo + math.exp(u)
        if k == "upper":
            return hi - math.exp(u)
        if k == "tanh":
            return math.tanh(u)
        if k == "algebraic":
            return u / math.sqrt(1.0 + u * u)
        return lo + (hi - lo) / (1.0 + math.exp(-u))

    def to_unconstrained(self, t: float) -> float:
        lo, hi, k = self.lo, self.hi, self.kind
        if k == "identity":
            return t
        if k == "lower":
            return math.log(t - lo)
        if k == "upper":
            return math.log(hi - t)
        if k == "tanh":
            return math.atanh(t)
        if k == "algebraic":
            return t / math.sqrt(1.0 - t * t)
        r = (t - lo) / (hi - lo)
        return math.log(r / (1.0 - r))

    def derivative(self, u: float) -> float:
        """d(natural) / d(unconstrained)."""
        lo, hi, k = self.lo, self.hi, self.kind
        if k == "identity":
            return 1.0
        if k == "lower":
            return math.exp(u)
        if k == "upper":
            return -math.exp(u)
        if k == "tanh":
            return 1.0 - math.tanh(u) ** 2
        if k == "algebraic":
            return (1.0 + u * u) ** -1.5
        e = math.exp(-abs(u))
        return (hi - lo) * e / (1.0 + e) ** 2


# -- likelihood as a function of a parameter array ------------------------------
def _free_indices(template: ParamVector, free: Sequence[str] | None) -> np.ndarray:
    if free is None:
        return np.arange(len(template))
    unknown = [n for n in free if n not in template.names]
    if unknown:
        raise ValueError(f"unknown free parameter(s): {unknown}")
    return np.array(sorted(template.names.index(n) for n in free), dtype=int)


def loglik_function(model: StateSpaceModel, grid: StateGrid, obs, theta: ParamVector) -> Callable:
    """``values -> total log-likelihood``; ``-inf`` outside the admissible set."""
    obs = as_observations(obs)

    def f(values) -> float:
        try:
            th = theta.with_values(values)
            model.check(th)
        except ValueError:
            return -math.inf
        return log_likelihood(model, th, grid, obs).total

    return f


def fd_steps(values: np.ndarray, base: float) -> np.ndarray:
    return base * np.maximum(1.0, np.abs(values))


def _check_stencil(theta: ParamVector, idx: np.ndarray, steps: np.ndarray, reach: float, model=None) -> None:
    vals = theta.array
    for j, h in zip(idx, steps):
        lo, hi = theta.bounds[j]
        if not (lo < vals[j] - reach * h and vals[j] + reach * h < hi):
            raise BoundaryProximityError(
                f"parameter {theta.names[j]}={vals[j]} is within {reach}*{h:.3g} of its bound ({lo}, {hi})"
            )
        if model is not None:
            for sign in (-1.0, 1.0):
                v = vals.copy()
                v[j] += sign * reach * h
                try:
                    model.check_constraints(theta.with_values(v))
                except InadmissibleParameterError as exc:
                    raise BoundaryProximityError(
                        f"parameter {theta.names[j]}: finite-difference stencil leaves the admissible set ({exc})"
                    ) from None


def fd_gradient(f: Callable, x: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Central-difference gradient of ``f`` at ``x``."""
    x = np.asarray(x, float)
    g = np.empty(x.size)
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = steps[j]
        g[j] = (f(x + e) - f(x - e)) / (2.0 * steps[j])
    return g


def fd_hessian(f: Callable, x: np.ndarray, steps, inner_steps=None) -> tuple[np.ndarray, np.ndarray]:
    """Hessian as the central-difference Jacobian of the central-difference gradient.

    Returns ``(symmetrized, raw)``.  Both stages are exact for quadratics,
    so the result is exact up to rounding for any step.
    """
    x = np.asarray(x, float)
    steps = np.broadcast_to(np.asarray(steps, float), x.shape)
    inner = steps if inner_steps is None else np.broadcast_to(np.asarray(inner_steps, float), x.shape)
    H = np.empty((x.size, x.size))
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = steps[j]
        H[:, j] = (fd_gradient(f, x + e, inner) - fd_gradient(f, x - e, inner)) / (2.0 * steps[j])
    return 0.5 * (H + H.T), H


def score(
    model: StateSpaceModel,
    theta: ParamVector,
    grid: StateGrid,
    obs,
    fd_step: float | None = None,
    free: Sequence[str] | None = None,
) -> np.ndarray:
    """Gradient of the total log-likelihood in the natural parameterization."""
    model.check(theta)
    idx = _free_indices(theta, free)
    base = DEFAULT_FD_STEP if fd_step is None else fd_step
    steps = fd_steps(theta.array[idx], base)
    _check_stencil(theta, idx, steps, 2.0, model)
    f = _restricted(loglik_function(model, grid, obs, theta), theta.array, idx)
    return fd_gradient(f, theta.array[idx], steps)


def observed_information(
    model: StateSpaceModel,
    theta: ParamVector,
    grid: StateGrid,
    obs,
    fd_step: float | None = None,
    free: Sequence[str] | None = None,
    full: bool = False,
):
    """Negative Hessian of the total log-likelihood (symmetrized).

    With ``full=True`` returns ``(symmetrized, raw)`` where ``raw`` is the
    matrix before symmetrization.
    """
    model.check(theta)
    idx = _free_indices(theta, free)
    base = DEFAULT_HESS_STEP if fd_step is None else fd_step
    steps = fd_steps(theta.array[idx], base)
    _check_stencil(theta, idx, steps, 2.0, model)
    f = _restricted(loglik_function(model, grid, obs, theta), theta.array, idx)
    H, raw = fd_hessian(f, theta.array[idx], steps)
    return (-H, -raw) if full else -H


def _restricted(f: Callable, full_values: np.ndarray, idx: np.ndarray) -> Callable:
    def g(sub):
        v = full_values.copy()
        v[idx] = sub
        return f(v)

    return g


# -- fitting ------------------------------------------------------------------
@dataclass
class FitOptions:
    tol_grad: float = 1e-6
    max_iter: int = 200
    fd_step: float | None = None
    hess_step: float | None = None
    free: tuple[str, ...] | None = None
    interval_map: str = "tanh"
    n_starts: int = 1
    start_jitter: float = 0.1
    seed: int = 0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["free"] = None if self.free is None else list(self.free)
        return d


@dataclass
class TraceEntry:
    iteration: int
    theta: tuple[float, ...]
    loglik: float
    score_norm: float


@dataclass
class FitResult:
    theta_hat: ParamVector
    names: tuple[str, ...]
    score_at_hat: np.ndarray
    observed_info: np.ndarray
    fisher_info_hat: np.ndarray
    std_errors: np.ndarray
    converged: bool
    loglik: float
    n_obs: int
    iterations: int
    message: str
    trace: list[TraceEntry] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.to_dict(),
            "names": list(self.names),
            "score_at_hat": self.score_at_hat.tolist(),
            "observed_info": self.observed_info.tolist(),
            "fisher_info_hat": self.fisher_info_hat.tolist(),
            "std_errors": self.std_errors.tolist(),
            "converged": self.converged,
            "loglik": self.loglik,
            "n_obs": self.n_obs,
            "iterations": self.iterations,
            "message": self.message,
            "trace": [
                {"iteration": t.iteration, "theta": list(t.theta), "loglik": t.loglik, "score_norm": t.score_norm}
                for t in self.trace
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), allow_nan=True)

    @classmethod
    def from_dict(cls, data: dict, template: ParamVector) -> "FitResult":
        return cls(
            theta_hat=ParamVector.from_dict(template, data["theta_hat"]),
            names=tuple(data["names"]),
            score_at_hat=np.array(data["score_at_hat"], float),
            observed_info=np.array(data["observed_info"], float),
            fisher_info_hat=np.array(data["fisher_info_hat"], float),
            std_errors=np.array(data["std_errors"], float),
            converged=bool(data["converged"]),
            loglik=float(data["loglik"]),
            n_obs=int(data["n_obs"]),
            iterations=int(data["iterations"]),
            message=str(data["message"]),
            trace=[TraceEntry(t["iteration"], tuple(t["theta"]), t["loglik"], t["score_norm"]) for t in data["trace"]],
        )


class _Problem:
    """Log-likelihood and its gradient on the unconstrained free coordinates."""

    def __init__(self, model, theta0: ParamVector, grid, obs, opts: FitOptions):
        self.model, self.theta0, self.grid, self.obs, self.opts = model, theta0, grid, obs, opts
        self.idx = _free_indices(theta0, opts.free)
        self.maps = [Bijection(*theta0.bounds[j], interval_map=opts.interval_map) for j in self.idx]
        self.f_nat = loglik_function(model, grid, obs, theta0)
        self.n_evals = 0

    def natural(self, u: np.ndarray) -> np.ndarray:
        v = self.theta0.array
        v[self.idx] = [b.to_natural(x) for b, x in zip(self.maps, u)]
        return v

    def unconstrained(self, values: np.ndarray) -> np.ndarray:
        return np.array([b.to_unconstrained(values[j]) for b, j in zip(self.maps, self.idx)])

    def jac(self, u: np.ndarray) -> np.ndarray:
        return np.array([b.derivative(x) for b, x in zip(self.maps, u)])

    def value(self, u: np.ndarray) -> float:
        self.n_evals += 1
        try:
            return self.f_nat(self.natural(u))
        except (NumericalError, OverflowError):
            return -math.inf

    def natural_score(self, values: np.ndarray) -> np.ndarray:
        th = self.theta0.with_values(values)
        return score(self.model, th, self.grid, self.obs, self.opts.fd_step, self._free_names())

    def natural_info(self, values: np.ndarray) -> np.ndarray:
        th = self.theta0.with_values(values)
        return observed_information(self.model, th, self.grid, self.obs, self.opts.hess_step, self._free_names())

    def _free_names(self):
        return [self.theta0.names[j] for j in self.idx]


def _is_pd(A: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(A)
        return True
    except np.linalg.LinAlgError:
        return False


def _ascend(prob: _Problem, u0: np.ndarray, opts: FitOptions):
    """BFGS ascent with Armijo backtracking; Newton restarts from the observed information."""
    u = u0.copy()
    vals = prob.natural(u)
    ll = prob.value(u)
    if not math.isfinite(ll):
        raise InadmissibleParameterError("log-likelihood is not finite at the starting point")
    s_nat = prob.natural_score(vals)
    trace = [TraceEntry(0, tuple(vals), ll, float(np.max(np.abs(s_nat))))]
    if np.max(np.abs(s_nat)) < opts.tol_grad:
        return u, ll, s_nat, trace, True, 0, "gradient tolerance met at start"

    def newton_inverse(u, vals):
        # information in u-coordinates, ignoring the curvature of the map (zero at a root)
        info = prob.natural_info(vals)
        J = prob.jac(u)
        B = info * np.outer(J, J)
        return np.linalg.inv(B) if _is_pd(B) else None

    Hinv = newton_inverse(u, vals)
    if Hinv is None:
        Hinv = np.eye(u.size) / max(1.0, float(np.max(np.abs(s_nat))))
    g = prob.jac(u) * s_nat
    message = "maximum iterations reached"
    converged = False
    it = 0
    restarted = False
    while it < opts.max_iter:
        it += 1
        d = Hinv @ g
        slope = float(g @ d)
        if slope <= 0:
            Hinv = np.eye(u.size) / max(1.0, float(np.max(np.abs(g))))
            d = Hinv @ g
            slope = float(g @ d)
        t = 1.0
        # cap the first trial step in unconstrained space
        dmax = float(np.max(np.abs(d)))
        if dmax > 5.0:
            t = 5.0 / dmax
        # near the optimum the achievable gain drops below the roundoff of the
        # log-likelihood itself; steps that lose no more than that are accepted
        # so the finite-difference score can still be driven to zero
        slack = 256.0 * EPS * max(1.0, abs(ll))
        accepted = False
        while t > 1e-12:
            u_new = u + t * d
            ll_new = prob.value(u_new)
            if math.isfinite(ll_new) and ll_new >= ll + 1e-4 * t * slope - slack:
                accepted = True
                break
            t *= 0.5
        if accepted and np.all(np.abs(u_new - u) <= 4.0 * EPS * np.maximum(1.0, np.abs(u))):
            message = "stalled: step below floating-point resolution"
            break
        if not accepted:
            if not restarted:
                restarted = True
                H = newton_inverse(u, vals)
                Hinv = H if H is not None else np.eye(u.size)
                continue
            message = "line search failed"
            break
        restarted = False
        vals_new = prob.natural(u_new)
        try:
            s_new = prob.natural_score(vals_new)
        except BoundaryProximityError as exc:
            u, vals, ll = u_new, vals_new, ll_new
            message = f"iterate reached the boundary: {exc}"
            trace.append(TraceEntry(it, tuple(vals), ll, math.nan))
            break
        g_new = prob.jac(u_new) * s_new
        step, yv = u_new - u, -(g_new - g)
        sy = float(step @ yv)
        if sy > 1e-12 * float(np.linalg.norm(step) * np.linalg.norm(yv)):
            rho = 1.0 / sy
            V = np.eye(u.size) - rho * np.outer(step, yv)
            Hinv = V @ Hinv @ V.T + rho * np.outer(step, step)
        u, vals, ll, s_nat, g = u_new, vals_new, ll_new, s_new, g_new
        snorm = float(np.max(np.abs(s_nat)))
        trace.append(TraceEntry(it, tuple(vals), ll, snorm))
        if snorm < opts.tol_grad:
            converged = True
            message = "gradient tolerance met"
            break
    return u, ll, s_nat, trace, converged, it, message


def fit_mle(
    model: StateSpaceModel,
    theta_init: ParamVector,
    grid: StateGrid,
    obs,
    opts: FitOptions | None = None,
) -> FitResult:
    """Solve the likelihood equation by quasi-Newton ascent in unconstrained coordinates."""
    opts = FitOptions() if opts is None else opts
    obs = as_observations(obs)
    model.check(theta_init)
    prob = _Problem(model, theta_init, grid, obs, opts)
    u0 = prob.unconstrained(theta_init.array)
    starts = [u0]
    if opts.n_starts > 1:
        rng = replication_rng(opts.seed, 0)
        starts += [u0 + opts.start_jitter * rng.standard_normal(u0.size) for _ in range(opts.n_starts - 1)]
    best = None
    for u_start in starts:
        try:
            out = _ascend(prob, u_start, opts)
        except (InadmissibleParameterError, BoundaryProximityError, NumericalError):
            continue
        if best is None or (out[4], out[1]) > (best[4], best[1]):
            best = out
    if best is None:
        raise InadmissibleParameterError("no start point produced a finite log-likelihood")
    u, ll, s_nat, trace, converged, iters, message = best
    vals = prob.natural(u)
    theta_hat = theta_init.with_values(vals)
    names = tuple(theta_init.names[j] for j in prob.idx)
    try:
        info = prob.natural_info(vals)
    except BoundaryProximityError as exc:
        info = np.full((len(names), len(names)), math.nan)
        message += f"; information unavailable: {exc}"
        converged = False
    if converged and not _is_pd(info):
        raise SingularInformationError(info, "at the converged estimate")
    if _is_pd(info):
        se = np.sqrt(np.diag(np.linalg.inv(info)))
    else:
        se = np.full(len(names), math.nan)
    return FitResult(
        theta_hat=theta_hat,
        names=names,
        score_at_hat=np.asarray(s_nat),
        observed_info=info,
        fisher_info_hat=info / len(obs),
        std_errors=se,
        converged=converged,
        loglik=ll,
        n_obs=len(obs),
        iterations=iters,
        message=message,
        trace=trace,
    )


# -- Monte Carlo Fisher information ---------------------------------------------
@dataclass
class FisherMcResult:
    outer_product: np.ndarray
    hessian_based: np.ndarray
    names: tuple[str, ...]
    reps: int
    n_per_rep: int
    burn_in: int
    total_steps: int
    outer_asymmetry: float
    hessian_asymmetry: float
    warning: str | None

    def relative_discrepancy(self) -> float:
        """Frobenius distance between the two estimators relative to the outer-product one."""
        return float(np.linalg.norm(self.outer_product - self.hessian_based) / np.linalg.norm(self.outer_product))

    def to_dict(self) -> dict:
        return {
            "outer_product": self.outer_product.tolist(),
            "hessian_based": self.hessian_based.tolist(),
            "names": list(self.names),
            "reps": self.reps,
            "n_per_rep": self.n_per_rep,
            "burn_in": self.burn_in,
            "total_steps": self.total_steps,
            "outer_asymmetry": self.outer_asymmetry,
            "hessian_asymmetry": self.hessian_asymmetry,
            "relative_discrepancy": self.relative_discrepancy(),
            "warning": self.warning,
        }


def increment_matrix(model, theta: ParamVector, grid, obs, values: np.ndarray) -> np.ndarray:
    return np.asarray(forward_pass(model, theta.with_values(values), grid, obs).breakdown.increments)


def _fisher_rep(args):
    model, theta, grid, n, seed, rep, burn, idx, fd_step, hess_step = args
    obs, _ = model.simulate(theta, n, replication_rng(seed, rep))
    x0 = theta.array
    steps = fd_steps(x0[idx], fd_step)
    cols = []
    for j, h in zip(idx, steps):
        e = np.zeros(x0.size)
        e[j] = h
        cols.append((increment_matrix(model, theta, grid, obs, x0 + e) - increment_matrix(model, theta, grid, obs, x0 - e)) / (2 * h))
    D = np.stack(cols, axis=1)[burn:]
    outer = D.T @ D

    def tail_sum(sub):
        v = x0.copy()
        v[idx] = sub
        return float(np.sum(increment_matrix(model, theta, grid, obs, v)[burn:]))

    _, raw = fd_hessian(tail_sum, x0[idx], fd_steps(x0[idx], hess_step))
    return outer, -raw, D.shape[0]


def fisher_information_mc(
    model: StateSpaceModel,
    theta: ParamVector,
    grid: StateGrid,
    reps: int,
    n_per_rep: int,
    seed: int,
    burn_in: int | None = None,
    free: Sequence[str] | None = None,
    fd_step: float | None = None,
    hess_step: float | None = None,
    workers: int = 1,
) -> FisherMcResult:
    """Two Monte Carlo estimates of the per-observation Fisher information.

    The outer-product estimator averages products of per-step score
    increments (finite differences of the log-mass increments) after
    burn-in; the Hessian estimator is minus the per-step Hessian of the
    post-burn-in log-likelihood on the same paths.
    """
    model.check(theta)
    if reps < 1 or n_per_rep < 2:
        raise ValueError("need reps >= 1 and n_per_rep >= 2")
    burn = min(n_per_rep // 10, 200) if burn_in is None else int(burn_in)
    if not 0 <= burn < n_per_rep:
        raise ValueError("burn_in must be in [0, n_per_rep)")
    idx = _free_indices(theta, free)
    fd_step = DEFAULT_FD_STEP if fd_step is None else fd_step
    hess_step = DEFAULT_HESS_STEP if hess_step is None else hess_step
    _check_stencil(theta, idx, fd_steps(theta.array[idx], max(fd_step, hess_step)), 2.0, model)
    jobs = [(model, theta, grid, n_per_rep, seed, r, burn, idx, fd_step, hess_step) for r in range(reps)]
    results = run_jobs(_fisher_rep, jobs, workers)
    outer = sum(r[0] for r in results)
    hess = sum(r[1] for r in results)
    steps = sum(r[2] for r in results)
    outer, hess = outer / steps, hess / steps
    warning = None
    if reps * n_per_rep < 1000:
        warning = f"only {reps * n_per_rep} simulated steps; estimates are unreliable below 1000"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return FisherMcResult(
        outer_product=0.5 * (outer + outer.T),
        hessian_based=0.5 * (hess + hess.T),
        names=tuple(theta.names[j] for j in idx),
        reps=reps,
        n_per_rep=n_per_rep,
        burn_in=burn,
        total_steps=int(steps),
        outer_asymmetry=float(np.max(np.abs(outer - outer.T))),
        hessian_asymmetry=float(np.max(np.abs(hess - hess.T))),
        warning=warning,
    )
