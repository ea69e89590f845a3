"""Command-line front end: ``ssm-mirfs {simulate,loglik,fit,diagnose,mc}``.

Every command reads a JSON run configuration::

    {
      "model": "lingauss",
      "spec": {"alpha": 0.8, "sigma_eta2": 1.0, "sigma_eps2": 1.0},
      "grid": "auto",                       # or {"lo": -8, "hi": 8, "G": 401}
      "data": "obs.csv",                    # or "simulate:{\"n\": 500, \"seed\": 1}"
      "options": {}                         # command-specific extras
    }

Reports go to stdout (or ``--out``) as one JSON document carrying the
command, the package version, the seed and an echo of the configuration.

Exit codes: 0 success, 2 configuration or validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .core import ObservationSeq, ParamVector, StateGrid, make_trapezoid_grid, replication_rng
from .diagnostics import ContractionReport, check_k2_k3
from .inference import FitOptions, FitResult, fisher_information_mc, fit_mle
from .mclab import McReport, default_workers, mc_mle_normality, mc_score_clt
from .models import MODEL_TAGS, GarchSpec, spec_from_dict
from .models.base import StateSpaceModel
from .operator import NumericalError, forward_pass

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

SIMULATE_PREFIX = "simulate:"


class ConfigError(ValueError):
    """Invalid run configuration."""


# -- configuration ------------------------------------------------------------
@dataclass
class RunConfig:
    """Validated run configuration (see the module docstring for the JSON layout)."""

    model: str
    spec: Any
    grid: str | dict = "auto"
    data: str | None = None
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(raw, Mapping):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(raw) - {"model", "spec", "grid", "data", "options"}
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {sorted(unknown)}")
        tag = raw.get("model")
        if tag not in MODEL_TAGS:
            raise ConfigError(f"model must be one of {list(MODEL_TAGS)}, got {tag!r}")
        if not isinstance(raw.get("spec"), Mapping):
            raise ConfigError("'spec' must be a JSON object of model fields")
        try:
            spec = spec_from_dict(tag, raw["spec"])
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"bad {tag} spec: {exc}") from exc
        grid = raw.get("grid", "auto")
        if grid != "auto":
            if not isinstance(grid, Mapping) or set(grid) != {"lo", "hi", "G"}:
                raise ConfigError("'grid' must be \"auto\" or an object with exactly lo, hi, G")
        data = raw.get("data")
        if data is not None:
            if not isinstance(data, str) or not data:
                raise ConfigError("'data' must be a CSV path or 'simulate:{n, seed}'")
            if data.startswith(SIMULATE_PREFIX):
                _simulate_source(data)  # validate eagerly
        options = raw.get("options", {})
        if not isinstance(options, Mapping):
            raise ConfigError("'options' must be a JSON object")
        return cls(tag, spec, grid if grid == "auto" else dict(grid), data, dict(options))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "spec": self.spec.to_dict(),
            "grid": self.grid,
            "data": self.data,
            "options": self.options,
        }

    # -- derived objects ---------------------------------------------------
    def state_model(self) -> StateSpaceModel:
        return self.spec.model()

    def theta(self) -> ParamVector:
        return self.spec.theta()

    def state_grid(self, model: StateSpaceModel, theta: ParamVector) -> StateGrid:
        if self.grid == "auto":
            return model.default_grid(theta)
        if model.finite:
            raise ConfigError(f"{self.model} has a finite state space; use grid \"auto\"")
        g = self.grid
        try:
            return make_trapezoid_grid(float(g["lo"]), float(g["hi"]), int(g["G"]))
        except ValueError as exc:
            raise ConfigError(f"bad grid: {exc}") from exc

    def observations(self, base_dir: Path | None = None) -> ObservationSeq:
        if self.data is None:
            raise ConfigError("this command needs a 'data' entry")
        if self.data.startswith(SIMULATE_PREFIX):
            n, seed = _simulate_source(self.data)
            return simulate_series(self.spec, n, seed)[0]
        path = Path(self.data)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        try:
            return ObservationSeq.from_csv(path)
        except OSError as exc:
            raise ConfigError(f"cannot read data {path}: {exc.strerror}") from exc


def _simulate_source(data: str) -> tuple[int, int]:
    try:
        d = json.loads(data[len(SIMULATE_PREFIX):])
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad simulate source {data!r}: {exc}") from exc
    if not isinstance(d, Mapping) or set(d) != {"n", "seed"}:
        raise ConfigError("simulate source must be simulate:{\"n\": N, \"seed\": S}")
    n, seed = d["n"], d["seed"]
    if not (isinstance(n, int) and n >= 1 and isinstance(seed, int) and seed >= 0):
        raise ConfigError("simulate source needs integer n >= 1 and seed >= 0")
    return n, seed


def simulate_series(spec, n: int, seed: int):
    """Observations and hidden path from one seed (replication 0 of that seed)."""
    rng = replication_rng(seed, 0)
    if isinstance(spec, GarchSpec):
        return spec.simulate(n, rng)
    return spec.model().simulate(spec.theta(), n, rng)


def write_hidden_csv(path: Path, hidden) -> None:
    """One row per time step, columns ``x_0..x_{m-1}`` (state labels for finite models)."""
    h = np.asarray(hidden, float)
    h = h.reshape(h.shape[0], -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{j}" for j in range(h.shape[1])])
        for row in h:
            w.writerow([repr(float(v)) for v in row])


# -- reports --------------------------------------------------------------------
def envelope(command: str, cfg: RunConfig, seed: int | None, result: dict, **extra) -> dict:
    return {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": cfg.to_dict(),
        **extra,
        "result": result,
    }


def load_report(text: str) -> dict:
    """Parse a report document and rebuild its typed pieces.

    Returns the raw document with ``config`` replaced by a :class:`RunConfig`
    and ``result`` replaced by the matching result object where one exists
    (``FitResult``, ``McReport``, ``ContractionReport``).
    """
    doc = json.loads(text)
    cfg = RunConfig.from_dict(doc["config"])
    out = dict(doc, config=cfg)
    cmd, res = doc["command"], doc["result"]
    if cmd == "fit":
        out["result"] = FitResult.from_dict(res, cfg.state_model().param_template)
    elif cmd == "diagnose":
        out["result"] = ContractionReport(**res["contraction"])
    elif cmd == "mc" and res.get("experiment") != "fisher":
        out["result"] = McReport.from_dict(res["report"])
    return out


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=2, allow_nan=True)
    if out:
        try:
            Path(out).write_text(text + "\n")
        except OSError as exc:
            raise ConfigError(f"cannot write {out}: {exc.strerror}") from exc
    else:
        print(text)


def _theta_override(cfg: RunConfig, text: str | None) -> ParamVector:
    theta = cfg.theta()
    if text is None:
        return theta
    try:
        updates = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--theta is not valid JSON: {exc}") from exc
    if not isinstance(updates, Mapping):
        raise ConfigError("--theta must be a JSON object keyed by parameter name")
    try:
        return theta.replace(**{k: float(v) for k, v in updates.items()})
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"--theta: {exc}") from exc


def _workers(flag: int | None) -> int:
    w = default_workers() if flag is None else flag
    if w < 1:
        raise ConfigError("--workers must be at least 1")
    return w


# -- commands -------------------------------------------------------------------
def cmd_simulate(cfg: RunConfig, args) -> dict:
    n = args.n if args.n is not None else cfg.options.get("n")
    if not isinstance(n, int) or n < 1:
        raise ConfigError("simulate needs --n (or options.n) >= 1")
    obs, hidden = simulate_series(cfg.spec, n, args.seed)
    out_dir = Path(args.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        obs_path = out_dir / f"{args.prefix}_obs.csv"
        hid_path = out_dir / f"{args.prefix}_hidden.csv"
        obs.to_csv(obs_path)
        write_hidden_csv(hid_path, hidden)
    except OSError as exc:
        raise ConfigError(f"cannot write simulation output under {out_dir}: {exc.strerror}") from exc
    v = obs.values
    summary = {
        "n": n,
        "mean": v.mean(axis=0).tolist(),
        "variance": v.var(axis=0, ddof=1).tolist() if n > 1 else None,
        "min": v.min(axis=0).tolist(),
        "max": v.max(axis=0).tolist(),
        "observations_csv": str(obs_path),
        "hidden_csv": str(hid_path),
    }
    return envelope("simulate", cfg, args.seed, summary)


def cmd_loglik(cfg: RunConfig, args) -> dict:
    model = cfg.state_model()
    theta = _theta_override(cfg, args.theta)
    model.check(theta)
    grid = cfg.state_grid(model, theta)
    obs = cfg.observations(args.config_dir)
    bd = forward_pass(model, theta, grid, obs).breakdown
    res = {"loglik": bd.total, "n_obs": len(obs), "theta": theta.to_dict(), "grid": grid.to_dict()}
    if args.increments:
        res["increments"] = list(bd.increments)
    return envelope("loglik", cfg, None, res)


def _fit_options(cfg: RunConfig, args) -> FitOptions:
    kw = dict(cfg.options.get("fit", {}))
    for name in ("tol_grad", "max_iter", "fd_step"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    try:
        return FitOptions(**kw)
    except TypeError as exc:
        raise ConfigError(f"bad fit options: {exc}") from exc


def cmd_fit(cfg: RunConfig, args) -> dict:
    model = cfg.state_model()
    start = _theta_override(cfg, args.theta)
    model.check(start)
    grid = cfg.state_grid(model, start)
    obs = cfg.observations(args.config_dir)
    opts = _fit_options(cfg, args)
    fit = fit_mle(model, start, grid, obs, opts)
    return envelope("fit", cfg, opts.seed, fit.to_dict(), grid=grid.to_dict(), fit_options=opts.to_dict())


def cmd_diagnose(cfg: RunConfig, args) -> dict:
    model = cfg.state_model()
    theta = _theta_override(cfg, args.theta)
    model.check(theta)
    grid = cfg.state_grid(model, theta)
    rep = check_k2_k3(model, theta, grid, p=args.p, reps=args.reps, seed=args.seed, n_steps=args.n_steps)
    res = {"contraction": rep.to_dict(), "theta": theta.to_dict(), "grid": grid.to_dict()}
    return envelope("diagnose", cfg, args.seed, res)


def cmd_mc(cfg: RunConfig, args) -> dict:
    model = cfg.state_model()
    theta = cfg.theta()
    model.check(theta)
    grid = cfg.state_grid(model, theta)
    workers = _workers(args.workers)
    if args.experiment == "fisher":
        fi = fisher_information_mc(model, theta, grid, args.reps, args.n, args.seed, workers=workers)
        res = {"experiment": "fisher", "fisher": fi.to_dict()}
    else:
        if args.experiment == "score":
            rep = mc_score_clt(
                model, theta, grid, args.n, args.reps, args.seed,
                fisher_reps=args.fisher_reps, fisher_n=args.fisher_n, workers=workers, fd_step=args.fd_step,
            )
        else:
            rep = mc_mle_normality(model, theta, grid, args.n, args.reps, args.seed, opts=_fit_options(cfg, args), workers=workers)
        if args.csv:
            try:
                rep.write_csv(args.csv)
            except OSError as exc:
                raise ConfigError(f"cannot write {args.csv}: {exc.strerror}") from exc
        res = {"experiment": args.experiment, "report": rep.to_dict()}
    return envelope("mc", cfg, args.seed, res, workers=workers)


COMMANDS = {
    "simulate": cmd_simulate,
    "loglik": cmd_loglik,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "mc": cmd_mc,
}


# -- argument parsing -------------------------------------------------------------
def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssm-mirfs", description="State space likelihoods via a forward-operator recursion.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_required=False):
        p.add_argument("config", help="JSON run configuration")
        p.add_argument("--out", help="write the JSON report here instead of stdout")
        if seed_required:
            p.add_argument("--seed", type=_nonneg_int, required=True, help="base seed for all randomness")

    p = sub.add_parser("simulate", help="simulate a series and write observation and hidden-path CSVs")
    common(p, seed_required=True)
    p.add_argument("--n", type=_pos_int, help="number of observations")
    p.add_argument("--out-dir", default=".", help="directory for the CSV files")
    p.add_argument("--prefix", default="sim", help="file name prefix")

    p = sub.add_parser("loglik", help="log-likelihood of the configured data")
    common(p)
    p.add_argument("--theta", help="JSON object overriding parameter values")
    p.add_argument("--increments", action="store_true", help="include per-step log-mass increments")

    p = sub.add_parser("fit", help="maximum likelihood fit")
    common(p)
    p.add_argument("--theta", help="JSON object overriding the start values")
    p.add_argument("--tol-grad", type=float)
    p.add_argument("--max-iter", type=_pos_int)
    p.add_argument("--fd-step", type=float)

    p = sub.add_parser("diagnose", help="contraction and moment diagnostics")
    common(p)
    p.add_argument("--theta", help="JSON object overriding parameter values")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--p", type=_pos_int, default=1, help="block length of the contraction product")
    p.add_argument("--reps", type=_pos_int, default=200)
    p.add_argument("--n-steps", type=_pos_int, default=200)

    p = sub.add_parser("mc", help="Monte Carlo experiment")
    common(p, seed_required=True)
    p.add_argument("--experiment", choices=("score", "mle", "fisher"), default="score")
    p.add_argument("--reps", type=_pos_int, required=True)
    p.add_argument("--n", type=_pos_int, required=True, help="observations per replication")
    p.add_argument("--workers", type=_pos_int, help="parallel workers (default: SSM_MIRFS_WORKERS or all cores)")
    p.add_argument("--fisher-reps", type=_pos_int, default=4, help="replications for the reference Fisher information")
    p.add_argument("--fisher-n", type=_pos_int, default=2000, help="series length for the reference Fisher information")
    p.add_argument("--tol-grad", type=float)
    p.add_argument("--max-iter", type=_pos_int)
    p.add_argument("--fd-step", type=float)
    p.add_argument("--csv", help="also write the replicate samples as CSV")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    args.config_dir = Path(args.config).resolve().parent
    try:
        cfg = RunConfig.load(args.config)
        doc = COMMANDS[args.command](cfg, args)
        _emit(doc, args.out)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"ssm-mirfs {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"ssm-mirfs {args.command}: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
