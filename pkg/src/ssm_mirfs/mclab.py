"""Replication harness for the asymptotic statements: score CLT, MLE normality, ergodic averages."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .core import WORKERS_ENV, FilterState, ParamVector, StateGrid, default_workers, replication_rng, run_jobs
from .inference import FitOptions, fisher_information_mc, fit_mle, score
from .models.base import StateSpaceModel
from .operator import NumericalError, filter_states

__all__ = [
    "WORKERS_ENV",
    "McReport",
    "default_workers",
    "mc_ergodic",
    "mc_mle_normality",
    "mc_score_clt",
    "run_jobs",
    "summarize",
]

UNRELIABLE_FRACTION = 0.2


@dataclass
class McReport:
    """Replicate statistics for one experiment.

    ``samples`` is a ``(reps, q)`` array, one row per replication in index
    order (failed replications are NaN rows).  Moment and KS summaries are
    per component over the successful rows.
    """

    reps: int
    n: int
    stat_name: str
    names: tuple[str, ...]
    samples: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    skewness: np.ndarray
    kurtosis: np.ndarray
    ks_distance: np.ndarray
    reference_variance: np.ndarray
    coverage: np.ndarray | None
    seed_base: int
    failures: int = 0
    flags: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.samples.shape[0] != self.reps:
            raise ValueError("one sample row per replication is required")
        if np.any((self.ks_distance < 0) | (self.ks_distance > 1)):
            raise ValueError("KS distances lie in [0, 1]")
        if self.coverage is not None and np.any((self.coverage < 0) | (self.coverage > 1)):
            raise ValueError("coverage lies in [0, 1]")

    @property
    def failure_fraction(self) -> float:
        return self.failures / self.reps if self.reps else 0.0

    @property
    def variance(self) -> np.ndarray:
        return self.sd**2

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a, float).tolist()

        return {
            "reps": self.reps,
            "n": self.n,
            "stat_name": self.stat_name,
            "names": list(self.names),
            "samples": arr(self.samples),
            "mean": arr(self.mean),
            "sd": arr(self.sd),
            "skewness": arr(self.skewness),
            "kurtosis": arr(self.kurtosis),
            "ks_distance": arr(self.ks_distance),
            "reference_variance": arr(self.reference_variance),
            "coverage": arr(self.coverage),
            "seed_base": self.seed_base,
            "failures": self.failures,
            "failure_fraction": self.failure_fraction,
            "flags": list(self.flags),
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "McReport":
        def arr(a):
            return None if a is None else np.array(a, float)

        return cls(
            reps=d["reps"],
            n=d["n"],
            stat_name=d["stat_name"],
            names=tuple(d["names"]),
            samples=np.array(d["samples"], float).reshape(d["reps"], len(d["names"])),
            mean=arr(d["mean"]),
            sd=arr(d["sd"]),
            skewness=arr(d["skewness"]),
            kurtosis=arr(d["kurtosis"]),
            ks_distance=arr(d["ks_distance"]),
            reference_variance=arr(d["reference_variance"]),
            coverage=arr(d["coverage"]),
            seed_base=d["seed_base"],
            failures=d["failures"],
            flags=list(d["flags"]),
            extra=d.get("extra", {}),
        )

    def write_csv(self, path) -> None:
        """Flat table of samples: one row per replication."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rep", *self.names])
            for r, row in enumerate(self.samples):
                w.writerow([r, *(repr(float(v)) for v in row)])


def summarize(
    samples: np.ndarray,
    reference_variance: np.ndarray,
    *,
    reps: int,
    n: int,
    stat_name: str,
    names: Sequence[str],
    seed_base: int,
    coverage: np.ndarray | None = None,
    extra: dict | None = None,
) -> McReport:
    samples = np.asarray(samples, float).reshape(reps, len(names))
    ok = ~np.any(np.isnan(samples), axis=1)
    good = samples[ok]
    q = len(names)
    ref = np.asarray(reference_variance, float)
    if good.shape[0] >= 2:
        mean = good.mean(axis=0)
        sd = good.std(axis=0, ddof=1)
        skew = stats.skew(good, axis=0)
        kurt = stats.kurtosis(good, axis=0)
        ks = np.array(
            [stats.kstest(good[:, j], "norm", args=(0.0, math.sqrt(ref[j]))).statistic if ref[j] > 0 else 1.0 for j in range(q)]
        )
    else:
        mean = sd = skew = kurt = np.full(q, math.nan)
        ks = np.ones(q)
    failures = int(reps - ok.sum())
    flags = []
    if reps and failures / reps > UNRELIABLE_FRACTION:
        flags.append("UNRELIABLE")
    if reps < 100:
        flags.append("FEW_REPS")
    return McReport(
        reps=reps,
        n=n,
        stat_name=stat_name,
        names=tuple(names),
        samples=samples,
        mean=mean,
        sd=sd,
        skewness=np.asarray(skew, float),
        kurtosis=np.asarray(kurt, float),
        ks_distance=ks,
        reference_variance=ref,
        coverage=coverage,
        seed_base=seed_base,
        failures=failures,
        flags=flags,
        extra=extra or {},
    )


# -- score CLT ---------------------------------------------------------------------
def _score_rep(args):
    model, theta, grid, n, seed, rep, fd_step = args
    obs, _ = model.simulate(theta, n, replication_rng(seed, rep))
    try:
        return score(model, theta, grid, obs, fd_step) / math.sqrt(len(obs))
    except NumericalError:
        return np.full(len(theta), math.nan)


def mc_score_clt(
    model: StateSpaceModel,
    theta0: ParamVector,
    grid: StateGrid,
    n: int,
    reps: int,
    seed: int,
    fisher: np.ndarray | None = None,
    fisher_reps: int = 20,
    fisher_n: int = 5000,
    workers: int | None = 1,
    fd_step: float | None = None,
) -> McReport:
    """Distribution of score(theta0) / sqrt(n) over simulated series.

    The reference is N(0, I_jj) with I the Monte Carlo Fisher information
    (outer-product form) unless ``fisher`` is given.  ``n`` counts
    observations; the score is scaled by the square root of that count.
    """
    model.check(theta0)
    if reps < 1:
        raise ValueError("reps must be at least 1")
    extra = {}
    if fisher is None:
        fi = fisher_information_mc(model, theta0, grid, fisher_reps, fisher_n, seed + 1, workers=workers)
        fisher = fi.outer_product
        extra["fisher"] = fi.to_dict()
    fisher = np.asarray(fisher, float)
    jobs = [(model, theta0, grid, n, seed, r, fd_step) for r in range(reps)]
    samples = np.array(run_jobs(_score_rep, jobs, workers))
    extra["empirical_covariance"] = np.cov(samples[~np.isnan(samples).any(axis=1)], rowvar=False).tolist() if reps > 2 else None
    extra["fisher_matrix"] = fisher.tolist()
    return summarize(
        samples,
        np.diag(fisher),
        reps=reps,
        n=n,
        stat_name="score/sqrt(n)",
        names=theta0.names,
        seed_base=seed,
        extra=extra,
    )


# -- MLE normality and coverage ------------------------------------------------------
def _fit_rep(args):
    model, theta0, grid, n, seed, rep, opts, perturb = args
    rng = replication_rng(seed, rep)
    obs, _ = model.simulate(theta0, n, rng)
    start = _perturbed_start(model, theta0, rng, perturb)
    q = len(theta0)
    try:
        fit = fit_mle(model, start, grid, obs, opts)
    except Exception as exc:  # a failed replication is data, not a crash
        return np.full(q, math.nan), np.full(q, math.nan), False, f"{type(exc).__name__}: {exc}"
    if not fit.converged:
        return np.full(q, math.nan), np.full(q, math.nan), False, fit.message
    return fit.theta_hat.array, fit.std_errors, True, fit.message


def _perturbed_start(model, theta0: ParamVector, rng, scale: float) -> ParamVector:
    """Start point moved by ``scale`` relative noise, pulled back inside the bounds."""
    for _ in range(100):
        v = theta0.array * (1.0 + scale * rng.standard_normal(len(theta0)))
        v += scale * (theta0.array == 0) * rng.standard_normal(len(theta0))
        if theta0.contains(v):
            cand = theta0.with_values(v)
            try:
                model.check(cand)
                return cand
            except ValueError:
                pass
    return theta0


def mc_mle_normality(
    model: StateSpaceModel,
    theta0: ParamVector,
    grid: StateGrid,
    n: int,
    reps: int,
    seed: int,
    opts: FitOptions | None = None,
    fisher: np.ndarray | None = None,
    perturb: float = 0.05,
    workers: int | None = 1,
) -> McReport:
    """sqrt(n)(theta_hat - theta0) over replications, with 95% CI coverage.

    Each replication fits from a randomly perturbed start.  Non-converged
    fits are excluded from every statistic and counted; more than 20%
    flags the report UNRELIABLE.  The KS reference is N(0, [I^-1]_jj) with
    I the mean per-observation observed information of the converged fits
    unless ``fisher`` is supplied.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    model.check(theta0)
    opts = FitOptions() if opts is None else opts
    jobs = [(model, theta0, grid, n, seed, r, opts, perturb) for r in range(reps)]
    results = run_jobs(_fit_rep, jobs, workers)
    est = np.array([r[0] for r in results])
    se = np.array([r[1] for r in results])
    ok = np.array([r[2] for r in results])
    root_n = math.sqrt(n)
    samples = root_n * (est - theta0.array)
    z = stats.norm.ppf(0.975)
    if ok.any():
        covered = np.abs(est[ok] - theta0.array) <= z * se[ok]
        coverage = covered.mean(axis=0)
    else:
        coverage = np.zeros(len(theta0))
    if fisher is not None:
        ref = np.diag(np.linalg.inv(np.asarray(fisher, float)))
    elif ok.any():
        ref = np.mean(n * se[ok] ** 2, axis=0)
    else:
        ref = np.full(len(theta0), math.nan)
    messages = [r[3] for r in results if not r[2]]
    return summarize(
        samples,
        ref,
        reps=reps,
        n=n,
        stat_name="sqrt(n)(theta_hat - theta0)",
        names=theta0.names,
        seed_base=seed,
        coverage=coverage,
        extra={
            "failure_messages": messages[:20],
            "fit_options": opts.to_dict(),
            "std_errors": np.where(np.isnan(se), None, se).tolist(),
        },
    )


# -- ergodic averages -----------------------------------------------------------------
def mc_ergodic(
    model: StateSpaceModel,
    theta0: ParamVector,
    grid: StateGrid,
    n_list: Sequence[int],
    g: Callable[[FilterState], float],
    seed: int,
) -> list[tuple[int, float]]:
    """Running averages (1/n) sum_{k=1}^n g(filter_k) on one long path."""
    n_list = [int(v) for v in n_list]
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])) or n_list[0] < 1:
        raise ValueError("n_list must be a strictly increasing list of positive counts")
    obs, _ = model.simulate(theta0, n_list[-1] + 1, replication_rng(seed, 0))
    wanted = set(n_list)
    out = []
    total = 0.0
    for h in filter_states(model, theta0, grid, obs):
        if h.step == 0:
            continue
        total += float(g(h))
        if h.step in wanted:
            out.append((h.step, total / h.step))
    return out
