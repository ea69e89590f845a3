import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import erf

from ssm_mirfs.core import (
    FilterState,
    GridKind,
    GridMismatchError,
    ObservationSeq,
    ParamVector,
    StateGrid,
    finite_grid,
    make_trapezoid_grid,
    replication_rng,
    run_jobs,
    variation_distance,
)


# -- ParamVector ------------------------------------------------------------------
def test_param_vector_rejects_length_mismatch():
    with pytest.raises(ValueError):
        ParamVector((1.0, 2.0), ("a",), ((0, 3),))


def test_param_vector_values_must_be_strictly_inside_bounds():
    with pytest.raises(ValueError):
        ParamVector((1.0,), ("a",), ((1.0, 2.0),))
    ParamVector((1.5,), ("a",), ((1.0, 2.0),))


def test_param_vector_json_round_trip():
    p = ParamVector((0.5, 2.0), ("a", "b"), ((0, 1), (0, math.inf)))
    text = p.to_json()
    assert json.loads(text) == {"a": 0.5, "b": 2.0}
    assert ParamVector.from_json(p, text) == p


def test_param_vector_from_dict_rejects_unknown_and_missing():
    p = ParamVector((0.5,), ("a",), ((0, 1),))
    with pytest.raises(ValueError):
        ParamVector.from_dict(p, {"a": 0.5, "b": 1.0})
    with pytest.raises(ValueError):
        ParamVector.from_dict(p, {})


def test_param_vector_replace_and_lookup():
    p = ParamVector((0.5, 2.0), ("a", "b"), ((0, 1), (0, 5)))
    q = p.replace(b=3.0)
    assert q["b"] == 3.0 and q["a"] == 0.5 and p["b"] == 2.0


# -- grids ------------------------------------------------------------------------
def test_trapezoid_two_points():
    g = make_trapezoid_grid(0.0, 1.0, 2)
    np.testing.assert_array_equal(g.points, [0.0, 1.0])
    np.testing.assert_array_equal(g.weights, [0.5, 0.5])


def test_trapezoid_three_points():
    g = make_trapezoid_grid(-1.0, 1.0, 3)
    np.testing.assert_array_equal(g.points, [-1.0, 0.0, 1.0])
    np.testing.assert_array_equal(g.weights, [0.5, 1.0, 0.5])


def test_trapezoid_integrates_normal_density_against_erf():
    g = make_trapezoid_grid(-8.0, 8.0, 801)
    phi = np.exp(-0.5 * g.points**2) / math.sqrt(2 * math.pi)
    exact = erf(8.0 / math.sqrt(2.0))  # mass of [-8, 8]
    assert abs(g.integrate(phi) - exact) < 1e-10


@pytest.mark.parametrize("lo,hi,G", [(0.0, 1.0, 1), (1.0, 1.0, 5), (2.0, 1.0, 5)])
def test_trapezoid_rejects_bad_input(lo, hi, G):
    with pytest.raises(ValueError):
        make_trapezoid_grid(lo, hi, G)


def test_grid_invariants_enforced():
    with pytest.raises(ValueError):
        StateGrid(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        StateGrid(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        StateGrid(np.array([0.0, 1.0]), np.array([1.0, 2.0]), GridKind.FINITE)


def test_finite_grid_has_unit_weights_and_labels():
    g = finite_grid(3)
    assert g.kind is GridKind.FINITE
    np.testing.assert_array_equal(g.points, [0, 1, 2])
    np.testing.assert_array_equal(g.weights, [1, 1, 1])


def test_grids_are_immutable():
    g = make_trapezoid_grid(0, 1, 5)
    with pytest.raises(ValueError):
        g.points[0] = 3.0


# -- observations -----------------------------------------------------------------
def test_observation_csv_round_trip(tmp_path):
    obs = ObservationSeq(np.array([[0.1, -2.0], [3.5, 1e-300], [0.0, 7.0]]))
    path = tmp_path / "obs.csv"
    obs.to_csv(path)
    assert path.read_text().splitlines()[0] == "xi_0,xi_1"
    back = ObservationSeq.from_csv(path)
    np.testing.assert_array_equal(back.values, obs.values)
    assert back.dim == 2 and len(back) == 3


def test_observation_csv_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("xi_0\n")
    with pytest.raises(ValueError):
        ObservationSeq.from_csv(empty)
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1,2\n")
    with pytest.raises(ValueError):
        ObservationSeq.from_csv(bad)


def test_observation_needs_at_least_one_entry():
    with pytest.raises(ValueError):
        ObservationSeq(np.empty((0, 1)))


# -- filters and distance -----------------------------------------------------------
def test_filter_state_rejects_negative_or_zero():
    with pytest.raises(ValueError):
        FilterState(np.array([0.5, -0.1]))
    with pytest.raises(ValueError):
        FilterState(np.zeros(3))


def test_variation_distance_identity():
    g = finite_grid(4)
    h = FilterState(np.array([0.1, 0.2, 0.3, 0.4]), grid=g)
    assert variation_distance(h, h) == 0.0


def test_variation_distance_uniform_vs_point_mass():
    g = finite_grid(2)
    assert variation_distance(FilterState(np.array([0.5, 0.5]), grid=g), FilterState(np.array([1.0, 0.0]), grid=g)) == 0.5


def test_variation_distance_matches_loop(rng):
    g = make_trapezoid_grid(-3, 3, 64)
    a = FilterState.normalized(rng.exponential(size=64), g)
    b = FilterState.normalized(rng.exponential(size=64), g)
    brute = 0.0
    for i in range(64):
        brute = max(brute, abs(a.values[i] - b.values[i]))
    assert variation_distance(a, b) == brute


def test_variation_distance_grid_mismatch():
    a = FilterState(np.ones(3), grid=finite_grid(3))
    b = FilterState(np.ones(4), grid=finite_grid(4))
    with pytest.raises(GridMismatchError):
        variation_distance(a, b)
    c = FilterState(np.ones(3) / 2, grid=make_trapezoid_grid(0, 1, 3))
    d = FilterState(np.ones(3) / 4, grid=make_trapezoid_grid(0, 2, 3))
    with pytest.raises(GridMismatchError):
        variation_distance(c, d)


filters = st.lists(st.floats(0.0, 10.0), min_size=5, max_size=5).filter(lambda v: sum(v) > 0)


@given(filters, filters, filters)
def test_variation_distance_is_a_metric(a, b, c):
    g = finite_grid(5)
    ha, hb, hc = (FilterState.normalized(np.array(v), g) for v in (a, b, c))
    dab, dba = variation_distance(ha, hb), variation_distance(hb, ha)
    assert dab == dba
    assert dab >= 0
    assert variation_distance(ha, hc) <= dab + variation_distance(hb, hc) + 1e-15


# -- replication streams --------------------------------------------------------------
def test_replication_rng_is_deterministic_and_distinct():
    a = replication_rng(7, 3).standard_normal(5)
    b = replication_rng(7, 3).standard_normal(5)
    c = replication_rng(7, 4).standard_normal(5)
    d = replication_rng(8, 3).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)


def test_replication_rng_rejects_negative():
    with pytest.raises(ValueError):
        replication_rng(-1, 0)


def _square(x):
    return x * x


def test_run_jobs_preserves_order_across_workers():
    jobs = list(range(9))
    assert run_jobs(_square, jobs, 1) == run_jobs(_square, jobs, 2) == [j * j for j in jobs]
