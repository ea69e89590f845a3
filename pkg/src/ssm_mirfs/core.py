"""Domain types shared across the package.

Parameters, state grids (the discretized reference measure on the hidden
state space), observation sequences and normalized filter states.  All of
them are immutable; operations return new objects.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "GridKind",
    "GridMismatchError",
    "ObservationSeq",
    "ParamVector",
    "FilterState",
    "StateGrid",
    "finite_grid",
    "make_trapezoid_grid",
    "default_workers",
    "replication_rng",
    "run_jobs",
    "variation_distance",
]

NORMALIZATION_TOL = 1e-12


class GridMismatchError(ValueError):
    """Two objects that must live on the same grid do not."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ParamVector:
    """Ordered, named parameter vector with open-interval bounds."""

    values: tuple[float, ...]
    names: tuple[str, ...]
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(
            self, "bounds", tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        )
        if not (len(self.values) == len(self.names) == len(self.bounds)):
            raise ValueError("values, names and bounds must have equal length")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate parameter names in {self.names}")
        for name, v, (lo, hi) in zip(self.names, self.values, self.bounds):
            if not (lo < v < hi):
                raise ValueError(f"parameter {name}={v!r} outside open interval ({lo}, {hi})")

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, name: str) -> float:
        return self.values[self.names.index(name)]

    @property
    def array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def with_values(self, values: Iterable[float]) -> "ParamVector":
        return ParamVector(tuple(values), self.names, self.bounds)

    def replace(self, **updates: float) -> "ParamVector":
        vals = list(self.values)
        for k, v in updates.items():
            vals[self.names.index(k)] = v
        return self.with_values(vals)

    def contains(self, values: Iterable[float]) -> bool:
        return all(lo < v < hi for v, (lo, hi) in zip(values, self.bounds))

    def to_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, template: "ParamVector", data: Mapping[str, float]) -> "ParamVector":
        """Build from a name-keyed mapping, using ``template`` for order and bounds."""
        unknown = set(data) - set(template.names)
        if unknown:
            raise ValueError(f"unknown parameter(s): {sorted(unknown)}")
        missing = [n for n in template.names if n not in data]
        if missing:
            raise ValueError(f"missing parameter(s): {missing}")
        return template.with_values(float(data[n]) for n in template.names)

    @classmethod
    def from_json(cls, template: "ParamVector", text: str) -> "ParamVector":
        return cls.from_dict(template, json.loads(text))


class GridKind(str, Enum):
    FINITE = "Finite"
    TRAPEZOID = "TrapezoidOnInterval"


@dataclass(frozen=True, eq=False)
class StateGrid:
    """Quadrature realization of the reference measure on the hidden states.

    For finite state spaces the points are the labels ``0..K-1`` and every
    weight is one, so sums against the grid are exact.
    """

    points: np.ndarray
    weights: np.ndarray
    kind: GridKind = GridKind.TRAPEZOID

    def __post_init__(self):
        pts = _frozen(self.points)
        wts = _frozen(self.weights)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)
        object.__setattr__(self, "kind", GridKind(self.kind))
        if pts.ndim != 1 or pts.shape != wts.shape or pts.size == 0:
            raise ValueError("points and weights must be 1-D arrays of equal, nonzero length")
        if not np.all(wts > 0):
            raise ValueError("quadrature weights must be positive")
        if self.kind is GridKind.FINITE:
            if not np.all(wts == 1.0):
                raise ValueError("finite grids carry unit weights")
        elif pts.size > 1 and not np.all(np.diff(pts) > 0):
            raise ValueError("grid points must be strictly increasing")

    @property
    def size(self) -> int:
        return self.points.size

    def __len__(self) -> int:
        return self.points.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, StateGrid):
            return NotImplemented
        return (
            self.kind is other.kind
            and self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    def __hash__(self) -> int:
        return hash((self.kind, self.points.tobytes(), self.weights.tobytes()))

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))

    def to_dict(self) -> dict:
        if self.kind is GridKind.FINITE:
            return {"kind": self.kind.value, "K": self.size}
        return {
            "kind": self.kind.value,
            "lo": float(self.points[0]),
            "hi": float(self.points[-1]),
            "G": self.size,
        }


def make_trapezoid_grid(lo: float, hi: float, G: int) -> StateGrid:
    """Equally spaced grid on ``[lo, hi]`` with trapezoid weights."""
    if int(G) != G or G < 2:
        raise ValueError(f"need at least 2 grid points, got G={G!r}")
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
        raise ValueError(f"need finite lo < hi, got ({lo}, {hi})")
    points = np.linspace(lo, hi, int(G))
    step = (hi - lo) / (G - 1)
    weights = np.full(int(G), step)
    weights[0] = weights[-1] = 0.5 * step
    return StateGrid(points, weights, GridKind.TRAPEZOID)


def finite_grid(K: int) -> StateGrid:
    if K < 1:
        raise ValueError("a finite state space needs at least one state")
    return StateGrid(np.arange(K, dtype=float), np.ones(K), GridKind.FINITE)


@dataclass(frozen=True)
class ObservationSeq:
    """Observations xi_0, ..., xi_n stored as an ``(n + 1, d)`` array."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError("observations must be a sequence of d-vectors")
        if v.shape[0] < 1:
            raise ValueError("an observation sequence needs at least one entry")
        if v.shape[1] < 1:
            raise ValueError("observation dimension must be at least 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    def scalar(self) -> np.ndarray:
        """The values as a 1-D array (only for d == 1)."""
        if self.dim != 1:
            raise ValueError(f"expected scalar observations, got d={self.dim}")
        return self.values[:, 0]

    def __getitem__(self, item) -> "ObservationSeq":
        if not isinstance(item, slice):
            raise TypeError("ObservationSeq supports slicing only")
        return ObservationSeq(self.values[item])

    def header(self) -> list[str]:
        return [f"xi_{j}" for j in range(self.dim)]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for row in self.values:
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ObservationSeq":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty observation file")
        header, body = rows[0], [r for r in rows[1:] if r]
        expected = [f"xi_{j}" for j in range(len(header))]
        if header != expected:
            raise ValueError(f"{path}: expected header {expected}, got {header}")
        if not body:
            raise ValueError(f"{path}: no observation rows")
        if any(len(r) != len(header) for r in body):
            raise ValueError(f"{path}: ragged rows")
        return cls(np.array([[float(x) for x in r] for r in body]))


@dataclass(frozen=True, eq=False)
class FilterState:
    """Normalized filter on a grid plus the accumulated log normalizer.

    ``increment`` is the log of the most recent normalizing mass (the
    per-step log-likelihood term); ``log_norm`` is the running sum.
    """

    values: np.ndarray
    log_norm: float = 0.0
    step: int = 0
    increment: float = 0.0
    grid: StateGrid | None = field(default=None, repr=False)

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 1:
            raise ValueError("filter values must be 1-D")
        if not np.all(np.isfinite(v)) or np.any(v < 0) or not np.any(v > 0):
            raise ValueError("filter values must be finite, nonnegative and not all zero")
        if self.grid is not None and self.grid.size != v.size:
            raise GridMismatchError("filter length differs from its grid")
        object.__setattr__(self, "values", v)

    @classmethod
    def normalized(cls, raw: np.ndarray, grid: StateGrid, **kw) -> "FilterState":
        mass = grid.integrate(raw)
        return cls(np.asarray(raw) / mass, grid=grid, **kw)

    def mass(self) -> float:
        if self.grid is None:
            raise ValueError("filter has no grid attached")
        return self.grid.integrate(self.values)

    def to_dict(self) -> dict:
        return {
            "values": self.values.tolist(),
            "log_norm": self.log_norm,
            "step": self.step,
            "increment": self.increment,
        }


def variation_distance(h1: FilterState, h2: FilterState) -> float:
    """Sup-norm distance ``max_i |h1_i - h2_i|`` between two filters."""
    if h1.values.shape != h2.values.shape:
        raise GridMismatchError(
            f"filters live on grids of different size ({h1.values.size} vs {h2.values.size})"
        )
    if h1.grid is not None and h2.grid is not None and h1.grid != h2.grid:
        raise GridMismatchError("filters live on different grids")
    return float(np.max(np.abs(h1.values - h2.values)))


def as_observations(obs: ObservationSeq | Sequence[float] | np.ndarray) -> ObservationSeq:
    return obs if isinstance(obs, ObservationSeq) else ObservationSeq(np.asarray(obs, float))


def replication_rng(seed_base: int, rep: int) -> np.random.Generator:
    """Independent, reproducible stream for replication ``rep``.

    Philox is counter based: the seed is the key and the replication index
    occupies the top word of the 256-bit counter, so streams never overlap
    and do not depend on which worker runs them.
    """
    if seed_base < 0 or rep < 0:
        raise ValueError("seed and replication index must be nonnegative")
    return np.random.Generator(np.random.Philox(key=int(seed_base), counter=[0, 0, 0, int(rep)]))


WORKERS_ENV = "SSM_MIRFS_WORKERS"


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_jobs(fn: Callable, jobs: Sequence, workers: int | None = 1) -> list:
    """Map ``fn`` over ``jobs`` in order, optionally across processes."""
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
