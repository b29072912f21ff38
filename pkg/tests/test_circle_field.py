import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kickburgers.circle_field import (
    VELOCITY,
    CircleSubset,
    GridProfile,
    circle_diameter,
    circle_distance,
    grid,
    lp_norm,
    mean_normalize,
    quotient_sup_distance,
    total_variation,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
profiles = arrays(np.float64, st.integers(8, 64), elements=finite)


def test_profile_is_frozen_copy():
    a = np.arange(8.0)
    p = GridProfile(a)
    a[0] = 99.0
    assert p.values[0] == 0.0
    with pytest.raises(ValueError):
        p.values[0] = 1.0


@pytest.mark.parametrize("vals, kind", [
    (np.zeros((2, 8)), "potential"),
    (np.zeros(7), "potential"),
    (np.r_[np.zeros(7), np.nan], "potential"),
    (np.zeros(8), "density"),
    (np.ones(8), VELOCITY),
])
def test_profile_rejects_bad_input(vals, kind):
    with pytest.raises(ValueError):
        GridProfile(vals, kind)


def test_velocity_difference_stays_zero_mean():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=64), rng.normal(size=64)
    u = GridProfile(a - a.mean(), VELOCITY)
    v = GridProfile(b - b.mean(), VELOCITY)
    assert (u - v).kind == VELOCITY


# -- lp_norm

@pytest.mark.parametrize("p", [1, 1.5, 2, 7, np.inf])
def test_lp_norm_zero_and_unit_modulus(p):
    assert lp_norm(np.zeros(16), p) == 0.0
    sign = np.where(np.arange(16) % 2 == 0, 1.0, -1.0)
    assert lp_norm(sign, p) == pytest.approx(1.0, abs=1e-15)


def test_lp_norm_cosine_l2():
    n = 256
    assert lp_norm(np.cos(2 * np.pi * grid(n)), 2) == pytest.approx(np.sqrt(0.5), abs=1 / n)


def test_lp_norm_rejects_p_below_one():
    with pytest.raises(ValueError):
        lp_norm(np.ones(8), 0.5)


@given(profiles, st.floats(1, 20))
def test_lp_norm_below_sup(v, p):
    assert lp_norm(v, p) <= lp_norm(v, np.inf) * (1 + 1e-12)


# -- total variation

def test_total_variation_examples():
    assert total_variation(np.full(16, 3.0)) == 0.0
    n = 1024
    assert total_variation(np.cos(2 * np.pi * grid(n))) == pytest.approx(4.0, abs=10 / n)


def test_total_variation_sawtooth_matches_refinement():
    # oracle: TV of the sampled sawtooth on grids 2^k, Richardson-extrapolated
    tv = {n: total_variation(grid(n) - 0.5) for n in (128, 256, 512)}
    extrap = 2 * tv[512] - tv[256]
    assert extrap == pytest.approx(2.0, abs=1e-12)
    assert tv[512] == pytest.approx(2.0, abs=2 / 512)


@given(profiles)
def test_total_variation_dominates_oscillation(v):
    assert total_variation(v) >= 2 * (v.max() - v.min()) * (1 - 1e-12) - 1e-9


# -- quotient sup distance

def test_quotient_distance_examples():
    x = grid(64)
    phi = np.sin(2 * np.pi * x)
    assert quotient_sup_distance(phi + 7, phi) == 0.0
    assert quotient_sup_distance(np.cos(2 * np.pi * x), np.zeros(64)) == 1.0
    w = np.ones(64)
    w[3], w[9] = 3.0, 1.0
    assert quotient_sup_distance(w, np.zeros(64)) == 1.0
    with pytest.raises(ValueError):
        quotient_sup_distance(np.zeros(8), np.zeros(16))


@given(st.integers(8, 40).flatmap(lambda n: st.tuples(*[arrays(np.float64, n, elements=finite)] * 3)),
       finite)
def test_quotient_distance_is_pseudometric(triple, c):
    a, b, z = triple
    d = quotient_sup_distance
    assert d(a, b) == d(b, a)
    assert d(a, z) <= d(a, b) + d(b, z) + 1e-9
    assert d(a + c, b) == pytest.approx(d(a, b), abs=1e-9)
    assert d(a, a + c) <= 1e-12 * max(1.0, abs(c))


def test_quotient_distance_equals_best_constant():
    rng = np.random.default_rng(3)
    w = rng.normal(size=50)
    ks = np.linspace(w.min(), w.max(), 20001)
    brute = np.min(np.max(np.abs(w[None, :] - ks[:, None]), axis=1))
    assert quotient_sup_distance(w, np.zeros(50)) == pytest.approx(brute, abs=1e-3)


# -- circle geometry

def test_circle_diameter_examples():
    assert circle_diameter(CircleSubset([0.3])) == 0.0
    assert circle_diameter(CircleSubset([0.0, 0.5])) == 0.5
    assert circle_diameter(CircleSubset([0.0, 0.1, 0.2])) == pytest.approx(0.2)
    assert circle_diameter(CircleSubset(grid(32))) == pytest.approx(1 - 1 / 32)
    with pytest.raises(ValueError):
        CircleSubset([])


@given(st.lists(st.integers(0, 255), min_size=1, max_size=30), st.integers(0, 255))
def test_circle_diameter_rotation_invariant(nodes, c):
    # dyadic positions keep the rotation exact
    z = np.array(nodes) / 256
    assert circle_diameter(CircleSubset(z)) == circle_diameter(CircleSubset((z + c / 256) % 1))


def test_circle_distance():
    assert circle_distance(0.1, 0.9) == pytest.approx(0.2)
    assert circle_distance(0.25, 0.75) == pytest.approx(0.5)
    assert circle_distance(0.3, 1.3) == pytest.approx(0.0)


# -- normalization and serialization

def test_mean_normalize_examples():
    x = grid(64)
    assert np.all(mean_normalize(GridProfile(np.full(64, 4.0))).values == 0)
    p = GridProfile(np.cos(2 * np.pi * x))
    assert np.allclose(mean_normalize(p).values, p.values, atol=1e-15)
    assert np.allclose(mean_normalize(GridProfile(np.cos(2 * np.pi * x) + 5)).values,
                       np.cos(2 * np.pi * x), atol=1 / 64)


@given(profiles)
def test_mean_normalize_idempotent(v):
    once = mean_normalize(GridProfile(v))
    assert np.allclose(mean_normalize(once).values, once.values, atol=1e-12)


@settings(max_examples=50)
@given(profiles)
def test_serialization_round_trip(v):
    p = GridProfile(v)
    assert np.array_equal(GridProfile.from_json(p.to_json()).values, p.values)
    assert np.array_equal(GridProfile.from_csv(p.to_csv()).values, p.values)
