import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kickburgers.circle_field import GridProfile, grid, lp_norm, quotient_sup_distance
from kickburgers.contraction_lab import (
    PHI_METRIC,
    STAT_KEYS,
    DistanceSeries,
    EnsembleSpec,
    Estimate,
    InsufficientDecayError,
    RateFit,
    coupled_distance_series,
    coupled_run,
    dirac,
    dual_lipschitz_series,
    dual_lipschitz_upper,
    fit_exponential,
    half_ensemble_agreement,
    interpolation_ratio,
    phi_floor,
    random_fourier,
    rate_chain_check,
    sawtooth,
    stationary_ensemble,
    summaries_agree,
    zero_profile,
)
from kickburgers.forcing import KickLaw, kicked_path
from kickburgers.variational_solver import derivative_field

seeds = st.integers(0, 2**31 - 1)


def _smooth(seed, n, amp=0.5):
    return random_fourier(amp, 6, 2.0)(np.random.default_rng(seed), n)


# -- coupled series

def test_constant_shift_gives_zero_distance():
    phi = _smooth(0, 128)
    out = coupled_distance_series(phi, GridProfile(phi.values + 5), 10, kicked_path(0, 10),
                                  (PHI_METRIC, 1.0, 2.0))
    for s in out:
        assert np.all(s.values <= 1e-12)


def test_unforced_sup_distance_non_increasing():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = random_fourier(0.5, 8, 1.5)(rng, 128)
        b = random_fourier(0.5, 8, 1.5)(rng, 128)
        (s,) = coupled_distance_series(a, b, 10, None, (PHI_METRIC,), substeps=2)
        assert np.all(np.diff(s.values) <= 1e-12)


def test_kicked_distance_decays_by_t60():
    n = 256
    (s,) = coupled_distance_series(_smooth(2, n), sawtooth(3)(np.random.default_rng(3), n), 60,
                                   kicked_path(0, 60), (PHI_METRIC,), substeps=2)
    assert s.values[-1] < 10 * phi_floor(n)


def test_shared_forcing_is_bit_identical():
    path = kicked_path(4, 8, audit=True)
    run = coupled_run(_smooth(4, 64), _smooth(5, 64), 8, path, 2)
    assert run.kicks_identical()
    a = [c for who, j, c in path.audit_log if who == "a"]
    b = [c for who, j, c in path.audit_log if who == "b"]
    assert len(a) == len(b) == 8
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


@settings(max_examples=10, deadline=None)
@given(seeds, seeds)
def test_l1_coupling_monotone(s1, s2):
    n = 128
    (s,) = coupled_distance_series(_smooth(s1, n), _smooth(s2, n, 1.0), 8, kicked_path(s1, 8), (1.0,),
                                   substeps=2)
    assert np.all(np.diff(s.values) <= 1e-9 + 4 / n)


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(-100, 100), st.floats(-100, 100))
def test_quotient_distance_ignores_constants(seed, c1, c2):
    a, b = _smooth(seed, 64).values, _smooth(seed + 1, 64).values
    base = quotient_sup_distance(a, b)
    assert quotient_sup_distance(a + c1, b + c2) == pytest.approx(base, abs=1e-12 * (1 + abs(c1) + abs(c2)))


def test_series_validation():
    with pytest.raises(ValueError):
        DistanceSeries("x", [0, 1], [1.0, -1.0])
    with pytest.raises(ValueError):
        DistanceSeries("x", [1, 0], [1.0, 1.0])


# -- fits

def _series(t, v, floor=0.0):
    return DistanceSeries("synthetic", np.asarray(t, float), np.asarray(v, float), None, floor)


def test_fit_exact_exponential():
    t = np.linspace(0, 10, 41)
    f = fit_exponential(_series(t, 3 * np.exp(-0.7 * t)), t_min=0)
    assert f.C_hat == pytest.approx(3, abs=1e-10)
    assert f.K_hat == pytest.approx(0.7, abs=1e-10)
    assert f.r2 == pytest.approx(1.0)


def test_fit_constant_series():
    f = fit_exponential(_series(np.arange(10.0), np.full(10, 0.3)), t_min=0)
    assert f.K_hat == 0.0


def test_fit_noisy_exponential():
    rng = np.random.default_rng(7)
    t = np.linspace(1, 20, 60)
    for _ in range(50):
        v = 2 * np.exp(-0.5 * t) * (1 + 0.01 * rng.standard_normal(t.size))
        assert fit_exponential(_series(t, v)).K_hat == pytest.approx(0.5, rel=0.05)


def test_fit_window_stops_at_floor():
    t = np.arange(0, 20.0)
    v = np.exp(-t)
    f = fit_exponential(_series(t, v, floor=1e-5))
    assert f.window == (1.0, 11.0)
    with pytest.raises(InsufficientDecayError, match="insufficient decay range"):
        fit_exponential(_series(t, v, floor=1e-2))


def test_fit_json():
    f = RateFit(1.0, 0.5, 0.99, (1.0, 5.0), 5)
    assert '"K_hat": 0.5' in f.to_json()


# -- rate chain

def test_interpolation_ratio_closed_form():
    # phi = a cos(2 pi x): |w|_1 = 2a/pi, u = -2 pi a sin, TV(u) = 8 pi a
    n = 4096
    for a in (0.01, 1.0):
        phi = GridProfile(a * np.cos(2 * np.pi * grid(n)))
        zero = GridProfile(np.zeros(n))
        assert interpolation_ratio(phi, zero, 1.0) == pytest.approx(1.0, abs=1e-3)
        assert interpolation_ratio(phi, zero, 2.0) == pytest.approx(math.sqrt(math.pi) / 4, abs=1e-3)


def test_interpolation_ratio_degenerate():
    phi = _smooth(0, 64)
    assert interpolation_ratio(phi, phi, 1.0) is None
    assert interpolation_ratio(phi, GridProfile(phi.values + 2.0), 2.0) is None


def test_rate_chain_identical_runs_degenerate():
    phi = _smooth(0, 64)
    run = coupled_run(phi, phi, 6, kicked_path(0, 6), 1)
    fit = RateFit(1.0, 1.0, 1.0, (1.0, 6.0), 6)
    rep = rate_chain_check(fit, {1.0: RateFit(1.0, 0.6, 1.0, (1.0, 6.0), 6)}, run)
    assert rep.degenerate and "degenerate, skipped" in rep.notes[0]


def test_rate_chain_thresholds():
    fphi = RateFit(1.0, 2.0, 1.0, (1.0, 10.0), 10)
    ok = rate_chain_check(fphi, {1.0: RateFit(1, 0.76, 1, (1.0, 8.0), 8)})
    bad = rate_chain_check(fphi, {1.0: RateFit(1, 0.74, 1, (1.0, 8.0), 8)})
    assert ok.passed and not bad.passed
    assert ok.required[1.0] == pytest.approx(0.75)
    with pytest.raises(ValueError):
        rate_chain_check(fphi, {1.0: RateFit(1, 1, 1, (11.0, 20.0), 9)})


def test_rate_chain_p1_on_kicked_run():
    n = 512
    a, b = _smooth(0, n), sawtooth(3)(np.random.default_rng(1), n)
    path = kicked_path(3, 40)
    run = coupled_run(a, b, 40, path, 2)
    phi_s, u_s = coupled_distance_series(a, b, 40, path, (PHI_METRIC, 1.0), run=run)
    rep = rate_chain_check(fit_exponential(phi_s), {1.0: fit_exponential(u_s)}, run)
    assert rep.rate_ok[1.0]
    assert rep.ratio_ok[1.0]


# -- dual-Lipschitz coupling bound

def test_identical_diracs_give_zero():
    d = dirac(_smooth(0, 64))
    spec = EnsembleSpec(4, d, d, horizon=5, n=64)
    _, ests, vals = dual_lipschitz_series(spec, [0.0, 2.0, 5.0])
    assert np.all(vals == 0)


def test_diracs_at_time_zero():
    a, b = _smooth(0, 64), _smooth(1, 64, 3.0)
    spec = EnsembleSpec(3, dirac(a), dirac(b), p=2.0, horizon=1, n=64)
    est = dual_lipschitz_upper(spec, 0.0)
    expected = min(2.0, lp_norm(derivative_field(a) - derivative_field(b), 2.0))
    assert est.mean == expected and est.se == 0.0


def test_ensemble_too_small():
    with pytest.raises(ValueError):
        dual_lipschitz_series(EnsembleSpec(1, zero_profile, zero_profile, n=16), [0.0])
    with pytest.raises(ValueError):
        Estimate.from_values([1.0])


def test_half_ensembles_agree():
    spec = EnsembleSpec(24, random_fourier(), sawtooth(), horizon=6, n=128)
    _, _, vals = dual_lipschitz_series(spec, [0.0, 2.0, 4.0, 6.0], workers=2)
    assert all(half_ensemble_agreement(vals))


def test_ensemble_independent_of_workers():
    spec = EnsembleSpec(6, random_fourier(), sawtooth(), horizon=4, n=64)
    one = dual_lipschitz_series(spec, [1.0, 4.0], workers=1)[2]
    three = dual_lipschitz_series(spec, [1.0, 4.0], workers=3)[2]
    assert np.array_equal(one, three)


# -- stationary ensembles

def test_stationary_collapse_without_forcing():
    zero = stationary_ensemble(zero_profile, 4, 10, 5, n=64, law=KickLaw((0.0,) * 4))
    assert all(zero.mean(k) == 0.0 for k in STAT_KEYS)
    # decaying unforced data keeps shrinking
    early = stationary_ensemble(random_fourier(), 6, 10, 5, n=128, law=KickLaw((0.0,) * 4))
    late = stationary_ensemble(random_fourier(), 6, 40, 5, n=128, law=KickLaw((0.0,) * 4))
    assert late.mean("L1") < early.mean("L1")


def test_stationary_burn_in_guard():
    with pytest.raises(ValueError):
        stationary_ensemble(zero_profile, 4, 5, 5, n=32)


def test_stationary_laws_agree():
    a = stationary_ensemble(zero_profile, 20, 20, 20, seed=0, n=128, workers=4)
    b = stationary_ensemble(sawtooth(8, 4.0), 20, 20, 20, seed=1, n=128, workers=4)
    assert summaries_agree(a, b, "TV", k=2)


def test_stationary_burn_in_doubling():
    a = stationary_ensemble(sawtooth(8, 4.0), 20, 20, 20, seed=2, n=128, workers=4)
    b = stationary_ensemble(sawtooth(8, 4.0), 20, 40, 20, seed=3, n=128, workers=4)
    assert all(summaries_agree(a, b, k, k=3) for k in STAT_KEYS)
