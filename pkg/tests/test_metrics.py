from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covlab.metrics import (
    DimensionError,
    Euclidean,
    HebischSikora,
    HeisenbergEps,
    Koranyi,
    LpMeanProduct,
    MaxProduct,
    NonStandardGauge,
    PNorm,
    Snowflake,
    ball_contains,
    distance,
    eps_distance,
    heis_dilate,
    heis_inv,
    heis_mul,
    hs_distance,
    koranyi_distance,
    nonstandard_dilate,
    nonstandard_gauge,
    quasi_triangle_constant,
    sample_points,
    spec_from_dict,
)

from .oracles import hs_bisection

TRUE_METRICS = [
    Euclidean(1),
    Euclidean(3),
    PNorm(2, 1.0),
    PNorm(3, 3.5),
    PNorm(2, math.inf),
    Snowflake(Euclidean(2), 0.5),
    MaxProduct(Euclidean(1), Euclidean(2)),
    LpMeanProduct(2.0, 3.0),
    Koranyi(),
    HebischSikora(0.5),
    HebischSikora(2.0),
    HeisenbergEps(0.3),
    HeisenbergEps(8.0),
]
HEISENBERG = [Koranyi(), HebischSikora(1.0), HebischSikora(2.0), HeisenbergEps(1.0)]

coord = st.floats(-50, 50, allow_nan=False)
heis_point = st.tuples(coord, coord, coord)


# --- worked values -------------------------------------------------------

def test_euclidean_pythagoras():
    assert distance(Euclidean(2), (0, 0), (3, 4)) == 5.0


def test_snowflake_square_root():
    assert distance(Snowflake(Euclidean(1), 0.5), 0, 4) == pytest.approx(2.0, abs=1e-15)


def test_lp_mean_product_unit_square():
    assert distance(LpMeanProduct(2, 3), (0, 0), (1, 1)) == pytest.approx(math.sqrt(2), rel=1e-15)


def test_group_law_values():
    np.testing.assert_allclose(heis_mul((1, 0, 0), (0, 1, 0)), (1, 1, 0.5))
    np.testing.assert_allclose(heis_mul((0, 0, 0), (1.5, -2, 3)), (1.5, -2, 3))
    np.testing.assert_allclose(heis_inv((1, 2, 3)), (-1, -2, -3))
    np.testing.assert_allclose(heis_mul((1, 0, 0), (-1, 0, 0)), (0, 0, 0))
    p = np.array([0.3, -1.2, 2.5])
    np.testing.assert_allclose(heis_mul(p, heis_inv(p)), 0.0, atol=1e-15)


def test_dilations():
    np.testing.assert_allclose(heis_dilate(2, (1, 1, 1)), (2, 2, 4))
    np.testing.assert_allclose(nonstandard_dilate(2, 2, (1, 1, 1)), (2, 4, 8))
    p = np.array([0.7, -0.2, 1.9])
    np.testing.assert_allclose(heis_dilate(0.5, heis_dilate(2, p)), p)
    np.testing.assert_allclose(heis_dilate(1, p), p)
    np.testing.assert_allclose(nonstandard_dilate(3, 1, p), p)
    np.testing.assert_allclose(
        nonstandard_dilate(3, 2, nonstandard_dilate(3, 1.5, p)), nonstandard_dilate(3, 3, p), rtol=1e-14
    )


def test_koranyi_values():
    assert koranyi_distance((0, 0, 0), (1, 0, 0)) == pytest.approx(1.0)
    assert koranyi_distance((0, 0, 0), (0, 0, 1)) == pytest.approx(2.0)
    assert koranyi_distance((1, 2, 3), (1, 2, 3)) == 0.0


def test_hebisch_sikora_values():
    assert hs_distance(2, (0, 0, 0), (2, 0, 0)) == pytest.approx(1.0, rel=1e-15)
    assert hs_distance(2, (0, 0, 0), (0, 0, 1)) == pytest.approx(1 / math.sqrt(2), rel=1e-15)


def test_eps_values():
    assert eps_distance(1, (0, 0, 0), (0, 0, 1)) == pytest.approx(2.0)
    assert eps_distance(0.2, (1, 2, 3), (1, 2, 3)) == 0.0


def test_eps1_is_scaled_hs2():
    # both gauges are square roots of (weight * rho^2 + koranyi^2); weights 1 and 1/8
    rng = np.random.default_rng(3)
    w = rng.standard_normal((1000, 3))
    np.testing.assert_allclose(
        eps_distance(1, np.zeros(3), w), 2 * math.sqrt(2) * hs_distance(2, np.zeros(3), w), rtol=1e-13
    )
    assert not np.allclose(eps_distance(8, np.zeros(3), w), eps_distance(1, np.zeros(3), w))


def test_nonstandard_gauge_single_coordinate():
    assert nonstandard_gauge(2, (0, 0, 0), (0, 8, 0)) == pytest.approx(math.sqrt(8))


def test_ball_contains_closed_balls():
    assert ball_contains(Euclidean(1), 0.0, 1.0, 1.0) == (True, 0.0)
    inside, slack = ball_contains(Koranyi(), (0, 0, 0), 2.0, (0, 0, 1))
    assert inside and slack == pytest.approx(0.0, abs=1e-15)
    assert ball_contains(Euclidean(2), (0, 0), 1.0, (2, 0)) == (False, -1.0)


@pytest.mark.parametrize("radius", [0.0, -1.0, math.inf, math.nan])
def test_ball_contains_rejects_bad_radius(radius):
    with pytest.raises(ValueError):
        ball_contains(Euclidean(1), 0.0, radius, 0.5)


def test_dimension_mismatch_raises():
    with pytest.raises(DimensionError):
        distance(Euclidean(2), (0, 0, 0), (1, 1, 1))
    with pytest.raises(DimensionError):
        koranyi_distance((0, 0), (1, 1))


@pytest.mark.parametrize(
    "factory",
    [
        lambda: Euclidean(0),
        lambda: PNorm(2, 0.5),
        lambda: Snowflake(Euclidean(1), 1.0),
        lambda: LpMeanProduct(2, 1.5),
        lambda: HebischSikora(0.0),
        lambda: HeisenbergEps(-1.0),
        lambda: NonStandardGauge(1.0),
    ],
)
def test_parameter_ranges(factory):
    with pytest.raises(ValueError):
        factory()


@pytest.mark.parametrize("spec", TRUE_METRICS + [NonStandardGauge(2.5)], ids=lambda s: s.label())
def test_spec_round_trip(spec):
    assert spec_from_dict(spec.to_dict()) == spec


def test_spec_from_dict_rejects_unknown():
    with pytest.raises(ValueError):
        spec_from_dict({"kind": "hyperbolic"})
    with pytest.raises(ValueError):
        spec_from_dict({"kind": "euclidean", "radius": 3})


# --- axioms and structure ----------------------------------------------------

@pytest.mark.parametrize("spec", TRUE_METRICS, ids=lambda s: s.label())
def test_metric_axioms_sampled(spec):
    rng = np.random.default_rng(11)
    p, q, r = (sample_points(spec, rng, 20_000, scale=2.0) for _ in range(3))
    dpq, dqp = spec(p, q), spec(q, p)
    assert np.all(dpq >= 0)
    assert np.max(np.abs(dpq - dqp)) <= 1e-12 * (1 + dpq.max())
    assert np.all(spec(p, p) <= 1e-12)
    assert np.all(dpq > 0)
    slack = dpq + spec(q, r) - spec(p, r)
    assert slack.min() >= -1e-9


def test_nonstandard_quasi_constant_is_finite():
    rng = np.random.default_rng(5)
    c = quasi_triangle_constant(NonStandardGauge(2.0), rng, 20_000)
    assert math.isfinite(c) and c >= 1.0


@pytest.mark.parametrize("spec", HEISENBERG, ids=lambda s: s.label())
def test_left_invariance_and_homogeneity(spec):
    rng = np.random.default_rng(2)
    g, p, q = (rng.standard_normal((5000, 3)) * 2 for _ in range(3))
    d = spec(p, q)
    assert np.max(np.abs(spec(heis_mul(g, p), heis_mul(g, q)) - d) / (1 + d)) <= 1e-9
    t = np.exp(rng.uniform(-3, 3, 5000))
    scaled = spec(heis_dilate(t, p), heis_dilate(t, q))
    assert np.max(np.abs(scaled - t * d) / (t * d)) <= 1e-9


def test_nonstandard_homogeneity():
    spec = NonStandardGauge(2.5)
    rng = np.random.default_rng(4)
    p, q = rng.standard_normal((2, 5000, 3))
    t = np.exp(rng.uniform(-2, 2, 5000))
    d = spec(p, q)
    lhs = spec(nonstandard_dilate(2.5, t, p), nonstandard_dilate(2.5, t, q))
    assert np.max(np.abs(lhs - t * d) / (t * d)) <= 1e-9


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_hs_matches_bisection_oracle(gamma):
    rng = np.random.default_rng(int(gamma * 10))
    p, q = rng.standard_normal((2, 2000, 3))
    closed = hs_distance(gamma, p, q)
    np.testing.assert_allclose(closed, hs_bisection(gamma, p, q), rtol=0, atol=1e-10)


def test_hs_z_zero_branch():
    assert hs_distance(1.5, (0, 0, 0), (3, 4, 0)) == pytest.approx(5 / 1.5, rel=1e-15)
    assert hs_distance(1.5, (0, 0, 0), (0, 0, 0)) == 0.0


def test_snowflake_ball_identity():
    rng = np.random.default_rng(8)
    base = Euclidean(2)
    flake = Snowflake(base, 0.5)
    for _ in range(500):
        c, p = rng.standard_normal((2, 2))
        r = rng.uniform(0.05, 2.0)
        assert flake.ball_contains(c, r, p)[0] == base.ball_contains(c, r ** 2, p)[0]


@settings(max_examples=200, deadline=None)
@given(heis_point, heis_point, heis_point)
def test_group_law_associative(p, q, r):
    lhs = heis_mul(heis_mul(p, q), r)
    rhs = heis_mul(p, heis_mul(q, r))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(heis_point, heis_point, st.floats(0.01, 100))
def test_koranyi_properties(p, q, t):
    d = koranyi_distance(p, q)
    assert d == pytest.approx(koranyi_distance(q, p), rel=1e-12, abs=1e-12)
    assert koranyi_distance(heis_dilate(t, p), heis_dilate(t, q)) == pytest.approx(t * d, rel=1e-9, abs=1e-12)


def test_koranyi_scalar_and_batch_agree():
    rng = np.random.default_rng(0)
    p, q = rng.standard_normal((2, 10, 3))
    batch = koranyi_distance(p, q)
    assert [koranyi_distance(a, b) for a, b in zip(p, q)] == pytest.approx(list(batch), rel=1e-15)
