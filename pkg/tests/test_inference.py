import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssm_mirfs.core import finite_grid, replication_rng
from ssm_mirfs.inference import (
    DEFAULT_FD_STEP,
    Bijection,
    BoundaryProximityError,
    FitOptions,
    FitResult,
    SingularInformationError,
    fd_gradient,
    fd_hessian,
    fd_steps,
    fisher_information_mc,
    fit_mle,
    loglik_function,
    observed_information,
    score,
)
from ssm_mirfs.models import (
    ArArchModel,
    Garch11Model,
    IidGaussian,
    LinGaussModel,
    MsArModel,
    SvModel,
    kalman_loglik,
)
from ssm_mirfs.models.toy import SwitchingArModel


@pytest.fixture(scope="module")
def lingauss_case():
    model = LinGaussModel()
    theta = model.param_template
    obs, _ = model.simulate(theta, 500, replication_rng(4, 0))
    return model, theta, model.default_grid(theta, G=101), obs


@pytest.fixture(scope="module")
def lingauss_fit(lingauss_case):
    model, theta, grid, obs = lingauss_case
    return fit_mle(model, theta, grid, obs)


# -- score ------------------------------------------------------------------------------
def test_score_matches_kalman_score():
    model = LinGaussModel()
    theta = model.param_template
    obs, _ = model.simulate(theta, 500, replication_rng(4, 0))
    s = score(model, theta, model.default_grid(theta), obs)
    oracle = fd_gradient(lambda v: kalman_loglik(theta.with_values(v), obs), theta.array, fd_steps(theta.array, DEFAULT_FD_STEP))
    np.testing.assert_allclose(s, oracle, rtol=0, atol=1e-6)


def test_score_vanishes_at_the_estimate(lingauss_fit, lingauss_case):
    model, _, grid, obs = lingauss_case
    assert lingauss_fit.converged
    assert np.max(np.abs(lingauss_fit.score_at_hat)) < FitOptions().tol_grad
    assert np.max(np.abs(score(model, lingauss_fit.theta_hat, grid, obs))) < FitOptions().tol_grad


def test_iid_score_vanishes_at_sample_second_moment():
    # n is kept modest: the roundoff floor of a central difference grows like eps * |loglik| / h
    iid = IidGaussian()
    obs, _ = iid.simulate(iid.params(v=1.3), 200, replication_rng(2, 0))
    vhat = float(np.mean(obs.scalar() ** 2))
    assert abs(score(iid, iid.params(v=vhat), finite_grid(1), obs)[0]) < 1e-8
    # same reduction through the linear-Gaussian model with alpha = 0: every split of v is a root
    lg = LinGaussModel()
    theta = lg.params(alpha=0.0, sigma_eta2=0.5, sigma_eps2=vhat - 0.5)
    s = score(lg, theta, lg.default_grid(theta), obs)
    assert np.max(np.abs(s[1:])) < 1e-8


def test_score_rejects_stencil_near_bound():
    model = LinGaussModel()
    theta = model.params(alpha=1.0 - 1e-7, sigma_eta2=1.0, sigma_eps2=1.0)
    obs, _ = model.simulate(model.param_template, 20, replication_rng(0, 0))
    with pytest.raises(BoundaryProximityError, match="alpha"):
        score(model, theta, model.default_grid(model.param_template), obs)


def test_score_rejects_stencil_leaving_admissible_set():
    model = Garch11Model()
    theta = model.params(delta=0.1, alpha1=0.6, beta1=0.4 - 1e-7)
    obs, _ = model.simulate(model.param_template, 20, replication_rng(0, 0))
    with pytest.raises(BoundaryProximityError):
        score(model, theta, model.default_grid(model.param_template), obs)


# -- gradient convergence order --------------------------------------------------------------
SMOOTH_MODELS = [
    LinGaussModel(),
    LinGaussModel("laplace"),
    SvModel(),
    SvModel(qml=True),
    SwitchingArModel(),
    MsArModel(),
    ArArchModel(),
    Garch11Model(),
    IidGaussian(),
]


@pytest.mark.parametrize("model", SMOOTH_MODELS, ids=lambda m: repr(m))
def test_gradient_error_ratio_is_four(model):
    theta = model.param_template
    obs, _ = model.simulate(theta, 200, replication_rng(1, 0))
    f = loglik_function(model, model.default_grid(theta, G=101), obs, theta)
    D = [fd_gradient(f, theta.array, fd_steps(theta.array, 1e-3 / 2**k)) for k in range(3)]
    first, second = D[0] - D[1], D[1] - D[2]
    for j, name in enumerate(theta.names):
        if abs(first[j]) < 1e-9 * max(1.0, abs(D[2][j])):
            # loglik exactly quadratic in this coordinate: central differences are already exact
            assert abs(second[j]) < 1e-9 * max(1.0, abs(D[2][j])), name
            continue
        assert 3.5 < first[j] / second[j] < 4.5, name


def test_fd_gradient_exact_on_quadratic():
    A = np.array([[2.0, 0.3], [0.3, 1.0]])
    b = np.array([1.0, -2.0])
    f = lambda x: -0.5 * x @ A @ x + b @ x  # noqa: E731
    x = np.array([0.4, -1.1])
    np.testing.assert_allclose(fd_gradient(f, x, np.array([0.1, 0.2])), b - A @ x, atol=1e-12)


# -- observed information -------------------------------------------------------------------
def test_iid_observed_information_per_observation():
    iid = IidGaussian()
    theta = iid.params(v=1.3)
    n = 10_000
    obs, _ = iid.simulate(theta, n, replication_rng(3, 0))
    info = observed_information(iid, theta, finite_grid(1), obs)[0, 0] / n
    assert abs(info / (1 / (2 * 1.3**2)) - 1) < 0.02


@pytest.mark.parametrize("steps", [1e-3, 0.37])
def test_hessian_exact_on_quadratic(steps):
    rng = np.random.default_rng(0)
    M = rng.standard_normal((3, 3))
    A = M @ M.T + np.eye(3)
    b = rng.standard_normal(3)
    f = lambda x: -0.5 * x @ A @ x + b @ x + 4.0  # noqa: E731
    H, raw = fd_hessian(f, np.array([0.2, -0.5, 1.0]), steps)
    np.testing.assert_allclose(H, -A, atol=1e-9)
    np.testing.assert_allclose(raw, -A, atol=1e-9)


def test_observed_information_symmetry(lingauss_case):
    model, theta, grid, obs = lingauss_case
    info, raw = observed_information(model, theta, grid, obs, full=True)
    assert np.max(np.abs(raw - raw.T)) < 1e-6
    assert np.max(np.abs(info - info.T)) < 1e-8


# -- fitting -------------------------------------------------------------------------------------
def test_fit_reports_standard_errors(lingauss_fit):
    fit = lingauss_fit
    assert fit.names == ("alpha", "sigma_eta2", "sigma_eps2")
    np.testing.assert_allclose(fit.fisher_info_hat, fit.observed_info / fit.n_obs)
    np.testing.assert_allclose(fit.std_errors, np.sqrt(np.diag(np.linalg.inv(fit.observed_info))))
    assert np.all(np.linalg.eigvalsh(fit.fisher_info_hat) > 0)


def test_fit_started_at_estimate_stops_immediately(lingauss_fit, lingauss_case):
    model, _, grid, obs = lingauss_case
    again = fit_mle(model, lingauss_fit.theta_hat, grid, obs)
    assert again.converged and again.iterations == 0


def test_fit_agrees_with_kalman_maximizer(lingauss_fit, lingauss_case):
    from scipy.optimize import minimize

    _, theta, _, obs = lingauss_case
    res = minimize(
        lambda v: -kalman_loglik(theta.with_values(v), obs),
        theta.array,
        method="Nelder-Mead",
        options={"xatol": 1e-9, "fatol": 1e-11, "maxiter": 4000},
    )
    # the grid likelihood is spectrally accurate at G = 101, so the maximizers coincide closely
    np.testing.assert_allclose(lingauss_fit.theta_hat.array, res.x, atol=1e-5)


def test_interval_maps_reach_the_same_estimate(lingauss_fit, lingauss_case):
    model, theta, grid, obs = lingauss_case
    alt = fit_mle(model, theta, grid, obs, FitOptions(interval_map="algebraic"))
    assert alt.converged
    np.testing.assert_allclose(alt.theta_hat.array, lingauss_fit.theta_hat.array, atol=1e-6)


def test_fit_not_converged_within_one_iteration(lingauss_case):
    model, theta, grid, obs = lingauss_case
    fit = fit_mle(model, theta.replace(alpha=0.3), grid, obs, FitOptions(max_iter=1))
    assert not fit.converged
    assert fit.iterations == 1
    assert "maximum iterations" in fit.message


def test_fit_finishes_on_a_fine_grid_from_a_distant_start():
    # near the optimum the attainable gain is below the roundoff of the
    # log-likelihood; the ascent must still reach the gradient tolerance
    model = LinGaussModel()
    theta = model.params(alpha=0.8, sigma_eta2=1.0, sigma_eps2=1.0)
    obs, _ = model.simulate(theta, 500, replication_rng(1, 0))
    fit = fit_mle(model, theta.replace(alpha=0.5), model.default_grid(theta, G=401), obs)
    assert fit.converged, fit.message
    assert fit.iterations < 40


def test_fit_result_json_round_trip(lingauss_fit):
    text = lingauss_fit.to_json()
    back = FitResult.from_dict(json.loads(text), lingauss_fit.theta_hat)
    assert back.to_dict() == lingauss_fit.to_dict()


def test_unidentified_split_is_singular():
    # with alpha = 0 only sigma_eta2 + sigma_eps2 is identified
    model = LinGaussModel()
    theta = model.params(alpha=0.0, sigma_eta2=0.5, sigma_eps2=0.8)
    obs, _ = model.simulate(theta, 300, replication_rng(5, 0))
    with pytest.raises(SingularInformationError) as info:
        fit_mle(model, theta, model.default_grid(theta, G=101), obs, FitOptions(free=("sigma_eta2", "sigma_eps2")))
    assert info.value.condition_number > 1e8


def test_fit_free_subset_keeps_others_fixed(lingauss_case):
    model, theta, grid, obs = lingauss_case
    fit = fit_mle(model, theta, grid, obs, FitOptions(free=("alpha",)))
    assert fit.names == ("alpha",)
    assert fit.theta_hat["sigma_eta2"] == theta["sigma_eta2"]
    assert fit.observed_info.shape == (1, 1)


# -- bijections -----------------------------------------------------------------------------
BOUNDS = [(-1.0, 1.0), (0.0, math.inf), (-math.inf, 2.0), (0.0, 1.0), (-math.inf, math.inf)]


@pytest.mark.parametrize("interval_map", ["tanh", "algebraic"])
@pytest.mark.parametrize("bounds", BOUNDS)
@given(u=st.floats(-6.0, 6.0))
def test_bijection_round_trip_and_derivative(interval_map, bounds, u):
    b = Bijection(*bounds, interval_map=interval_map)
    t = b.to_natural(u)
    assert bounds[0] < t < bounds[1] or (bounds[0] <= t <= bounds[1] and abs(u) > 5)
    if bounds[0] < t < bounds[1]:
        assert b.to_unconstrained(t) == pytest.approx(u, abs=1e-6 * max(1.0, abs(u)))
    h = 1e-6
    fd = (b.to_natural(u + h) - b.to_natural(u - h)) / (2 * h)
    assert b.derivative(u) == pytest.approx(fd, rel=1e-5, abs=1e-9)


# -- Monte Carlo Fisher information ------------------------------------------------------------
def test_fisher_mc_iid_matches_closed_form():
    iid = IidGaussian()
    theta = iid.params(v=1.3)
    res = fisher_information_mc(iid, theta, finite_grid(1), reps=20, n_per_rep=5000, seed=11)
    target = 1 / (2 * 1.3**2)
    assert abs(res.outer_product[0, 0] / target - 1) < 0.03
    assert abs(res.hessian_based[0, 0] / target - 1) < 0.03
    assert res.warning is None


def test_fisher_mc_warns_when_too_short():
    iid = IidGaussian()
    with pytest.warns(RuntimeWarning, match="unreliable"):
        res = fisher_information_mc(iid, iid.params(v=1.0), finite_grid(1), reps=3, n_per_rep=100, seed=0)
    assert res.warning is not None


def test_fisher_mc_lingauss_is_symmetric_and_deterministic():
    model = LinGaussModel()
    theta = model.param_template
    grid = model.default_grid(theta, G=101)
    a = fisher_information_mc(model, theta, grid, reps=2, n_per_rep=600, seed=3)
    b = fisher_information_mc(model, theta, grid, reps=2, n_per_rep=600, seed=3)
    np.testing.assert_array_equal(a.outer_product, b.outer_product)
    assert a.outer_asymmetry < 1e-12
    assert a.hessian_asymmetry < 1e-6
    np.testing.assert_array_equal(a.outer_product, a.outer_product.T)
    assert a.burn_in == 60 and a.total_steps == 2 * 540


def test_fisher_mc_rejects_bad_sizes():
    iid = IidGaussian()
    with pytest.raises(ValueError):
        fisher_information_mc(iid, iid.params(v=1.0), finite_grid(1), reps=0, n_per_rep=100, seed=0)
    with pytest.raises(ValueError):
        fisher_information_mc(iid, iid.params(v=1.0), finite_grid(1), reps=2, n_per_rep=100, seed=0, burn_in=100)
