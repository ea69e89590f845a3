"""State space model likelihoods through a normalized forward-operator recursion.

Modules
-------
core         parameters, grids, observations, filter states
operator     the forward recursion, log-likelihood and a path-sum oracle
models       model families (Markov-switching AR, linear Gaussian, AR-ARCH, GARCH, SV)
inference    finite-difference score and information, maximum likelihood fitting
diagnostics  contraction, moment and ratio checks; KL information
mclab        Monte Carlo replication harness
cli          command-line front end
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("ssm-mirfs")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .core import (
    FilterState,
    GridKind,
    GridMismatchError,
    ObservationSeq,
    ParamVector,
    StateGrid,
    finite_grid,
    make_trapezoid_grid,
    replication_rng,
    variation_distance,
)
from .kernels import BACKEND
from .operator import (
    FilterCollapseError,
    LogLikBreakdown,
    apply_operator,
    brute_force_loglik,
    ergodic_average,
    initial_filter,
    log_likelihood,
)

__all__ = [
    "BACKEND",
    "FilterCollapseError",
    "FilterState",
    "GridKind",
    "GridMismatchError",
    "LogLikBreakdown",
    "ObservationSeq",
    "ParamVector",
    "StateGrid",
    "__version__",
    "apply_operator",
    "brute_force_loglik",
    "ergodic_average",
    "finite_grid",
    "initial_filter",
    "log_likelihood",
    "make_trapezoid_grid",
    "replication_rng",
    "variation_distance",
]
