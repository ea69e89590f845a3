"""Compiled vs NumPy backend timing for the forward recursion.

Usage::

    python3 benchmarks/bench_kernels.py [--n 2000] [--grids 51 101 201 401] [--repeat 5]

Prints one line per (kernel, grid size) with the best-of-``repeat`` wall
time for each backend, their ratio, and the largest absolute difference in
the log-likelihood increments.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from ssm_mirfs import kernels
from ssm_mirfs.core import replication_rng
from ssm_mirfs.models import Garch11Model, LinGaussModel


def _dense_case(G: int, n: int):
    model = LinGaussModel()
    theta = model.param_template
    grid = model.default_grid(theta, G=G)
    obs, _ = model.simulate(theta, n, replication_rng(0, 0))
    args = (
        model.transition_matrix(theta, grid),
        model.emission_matrix(theta, grid, obs),
        model.initial_vector(theta, grid),
        grid.weights,
    )
    return lambda backend: kernels.forward(*args, backend=backend)


def _affine_case(G: int, n: int):
    model = Garch11Model()
    theta = model.param_template
    grid = model.default_grid(theta, G=G)
    obs, _ = model.simulate(theta, n, replication_rng(0, 0))
    s = obs.scalar()
    intercepts = np.zeros(n)  # entry k drives step k; entry 0 is unused
    intercepts[1:] = theta["delta"] + theta["beta1"] * s[:-1] ** 2
    step = grid.points[1] - grid.points[0]
    args = (
        grid.points[0],
        step,
        grid.weights,
        model.emission_matrix(theta, grid, obs),
        model.initial_vector(theta, grid),
        intercepts,
        theta["alpha1"],
    )
    return lambda backend: kernels.forward_affine(*args, backend=backend)


CASES = {"dense": _dense_case, "affine": _affine_case}


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--grids", type=int, nargs="+", default=[51, 101, 201, 401])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = sorted(kernels.BACKENDS)
    print(f"available backends: {backends}; default: {kernels.BACKEND}; n = {args.n}")
    header = f"{'kernel':<8}{'G':>6}" + "".join(f"{b + ' [ms]':>16}" for b in backends) + f"{'speedup':>10}{'max |diff|':>14}"
    print(header)
    for name, make in CASES.items():
        for G in args.grids:
            run = make(G, args.n)
            times, incs = {}, {}
            for b in backends:
                incs[b] = run(b)[0]
                times[b] = 1e3 * min(timeit.repeat(lambda: run(b), number=1, repeat=args.repeat))
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            diff = float(np.max(np.abs(incs["python"] - incs["cython"]))) if "cython" in incs else 0.0
            row = f"{name:<8}{G:>6}" + "".join(f"{times[b]:>16.2f}" for b in backends)
            print(row + f"{speed:>10.2f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
