"""Hypothesis properties that every shipped model must satisfy."""

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from ssm_mirfs.core import ParamVector, replication_rng, variation_distance
from ssm_mirfs.diagnostics import estimate_kl
from ssm_mirfs.models import ArArchModel, Garch11Model, IidGaussian, LinGaussModel, MsArModel, SvModel
from ssm_mirfs.models.toy import SwitchingArModel
from ssm_mirfs.operator import apply_operator, filter_states, forward_pass, initial_filter

ZOO = [
    LinGaussModel(),
    LinGaussModel("laplace"),
    SvModel(),
    SvModel(qml=True),
    SwitchingArModel(),
    MsArModel(),
    ArArchModel(),
    Garch11Model(),
    Garch11Model("linear"),
    IidGaussian(),
]
G = 51

models = st.sampled_from(ZOO)
seeds = st.integers(0, 2**31 - 1)
jitter = st.lists(st.floats(-0.15, 0.15), min_size=8, max_size=8)


def perturbed(model, u) -> ParamVector:
    """Template parameters scaled by (1 + u); rejects draws outside the admissible set."""
    base = model.param_template
    try:
        theta = base.with_values(np.asarray(base.values) * (1.0 + np.asarray(u[: len(base)])))
        model.check(theta)
    except ValueError:
        assume(False)
    return theta


def setup(model, u, seed, n):
    theta = perturbed(model, u)
    grid = model.default_grid(theta, G=G)
    obs, _ = model.simulate(theta, n, replication_rng(seed, 0))
    return theta, grid, obs


@given(model=models, u=jitter, seed=seeds, n=st.integers(1, 40))
def test_every_filter_integrates_to_one(model, u, seed, n):
    theta, grid, obs = setup(model, u, seed, n)
    for h in filter_states(model, theta, grid, obs):
        assert abs(grid.integrate(h.values) - 1.0) < 1e-12
        assert np.all(h.values >= 0)


@given(model=models, u=jitter, seed=seeds, n=st.integers(2, 25))
def test_log_normalizers_telescope(model, u, seed, n):
    theta, grid, obs = setup(model, u, seed, n)
    states = list(filter_states(model, theta, grid, obs))
    total = forward_pass(model, theta, grid, obs).breakdown.total
    assert states[0].log_norm == states[0].increment
    for prev, cur in zip(states, states[1:]):
        assert abs(cur.log_norm - prev.log_norm - cur.increment) < 1e-12 * max(1.0, abs(cur.log_norm))
    assert abs(states[-1].log_norm - total) < 1e-12 * max(1.0, abs(total))


@given(model=models, u=jitter, seed=seeds, n=st.integers(2, 12))
def test_stepwise_operator_matches_recursion(model, u, seed, n):
    theta, grid, obs = setup(model, u, seed, n)
    s = model.obs_array(obs)
    h = initial_filter(model, theta, grid, s[0])
    for k in range(1, n):
        h = apply_operator(model, theta, grid, h, s[k], s[k - 1])
    res = forward_pass(model, theta, grid, obs)
    assert abs(h.log_norm - res.breakdown.total) < 1e-9 * max(1.0, abs(h.log_norm))
    np.testing.assert_allclose(h.values, res.final.values, rtol=1e-9, atol=1e-12)


@given(model=models, u=jitter, seeds=st.lists(seeds, min_size=3, max_size=3, unique=True), n=st.integers(1, 15))
def test_variation_distance_is_a_metric_on_filters(model, u, seeds, n):
    theta = perturbed(model, u)
    grid = model.default_grid(theta, G=G)
    hs = [forward_pass(model, theta, grid, model.simulate(theta, n, replication_rng(s, 0))[0]).final for s in seeds]
    a, b, c = hs
    dab, dba = variation_distance(a, b), variation_distance(b, a)
    assert variation_distance(a, a) == 0.0
    assert dab == dba
    # sup-norm of two nonnegative densities never exceeds the larger peak
    assert 0.0 <= dab <= max(a.values.max(), b.values.max())
    assert dab <= variation_distance(a, c) + variation_distance(c, b) + 1e-12


@given(model=models, u=jitter, seed=seeds)
def test_simulation_and_likelihood_are_deterministic(model, u, seed):
    theta = perturbed(model, u)
    grid = model.default_grid(theta, G=G)
    a, xa = model.simulate(theta, 30, replication_rng(seed, 3))
    b, xb = model.simulate(theta, 30, replication_rng(seed, 3))
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(xa, xb)
    la = forward_pass(model, theta, grid, a).breakdown
    lb = forward_pass(model, theta, grid, b).breakdown
    assert la.total == lb.total and la.increments == lb.increments


@settings(max_examples=15)
@given(model=models, u=jitter, j=st.integers(0, 7), shift=st.floats(0.2, 0.4), sign=st.sampled_from([-1.0, 1.0]), seed=seeds)
def test_kl_estimate_is_nonnegative_within_two_stderr(model, u, j, shift, sign, seed):
    theta0 = perturbed(model, u)
    assume(j < len(theta0))
    # one component moves by a fixed fraction so the pair is genuinely distinct
    v = list(u)
    v[j] += sign * shift
    theta = perturbed(model, v)
    grid = model.default_grid(theta0, G=G)
    res = estimate_kl(model, theta0, theta, grid, n=300, reps=8, seed=seed)
    assert math.isfinite(res.estimate)
    assert res.estimate >= -2 * res.stderr


@pytest.mark.parametrize("model", ZOO, ids=repr)
def test_kl_of_identical_parameters_is_zero(model):
    theta = model.param_template
    res = estimate_kl(model, theta, theta, model.default_grid(theta, G=G), n=50, reps=2, seed=0)
    assert res.estimate == 0.0
