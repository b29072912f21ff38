import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kickburgers.circle_field import GridProfile, grid
from kickburgers.contraction_lab import random_fourier
from kickburgers.forcing import KickBasis, KickLaw, kick_potential, kicked_path
from kickburgers.minimiser_lab import (
    MINIMISER,
    EndpointMismatchError,
    MinimiserCurve,
    MisalignedScheduleError,
    MissingHistoryError,
    action_gap_check,
    action_of_curve,
    backtrack_minimiser,
    harvest_action_pairs,
    midpoint_gap_experiment,
    omega_decay_experiment,
    omega_set,
    perturb_curve,
)
from kickburgers.minimiser_lab import _backtrack_set
from kickburgers.reference_oracles import brute_force_hopf_lax
from kickburgers.variational_solver import SolverState, evolve, winding_bound


def _smooth(seed, n, amp=0.5):
    return random_fourier(amp, 6, 2.0)(np.random.default_rng(seed), n)


def _kicked(seed, n=128, horizon=6, substeps=2, phi0=None):
    phi0 = _smooth(seed, n) if phi0 is None else phi0
    path = kicked_path(seed, horizon)
    return evolve(SolverState(0.0, phi0), horizon, path, substeps), path


# -- backtracking

def test_rest_dynamics_give_constant_curves():
    traj = evolve(SolverState(0.0, GridProfile(np.zeros(64))), 5, None, 4)
    for x in (0, 17, 63):
        c = backtrack_minimiser(traj, x, 0.0)
        assert np.all(c.nodes == x)
        assert c.action == 0.0


def test_unforced_start_matches_direct_minimisation():
    # oracle: argmin over the unrolled grid of phi0(y) + (x - y)^2 / (2t)
    n, t = 256, 3.0
    phi0 = GridProfile(-np.cos(2 * np.pi * grid(n)) / (2 * np.pi) + 0.05 * np.sin(4 * np.pi * grid(n)))
    traj = evolve(SolverState(0.0, phi0), t, None, 3)
    y = np.arange(-3 * n, 4 * n)
    for x in range(0, n, 7):
        cost = phi0.values[y % n] + ((x - y) / n) ** 2 / (2 * t)
        c = backtrack_minimiser(traj, x, 0.0)
        best = int(y[np.argmin(cost)])
        # the multi-step grid polygon only approximates the one-shot minimum
        assert abs(int(c.nodes[0]) - best) <= 3
        assert cost[int(c.nodes[0] - y[0])] - cost.min() <= 1e-4


def test_kicked_start_matches_dynamic_programming():
    # oracle: unnormalized brute-force DP over the same step boundaries
    n, seed = 96, 3
    traj, path = _kicked(seed, n, 4, 2)
    basis = KickBasis(n)
    V = traj.start.phi.values.copy()
    for j in range(1, 5):
        for _ in range(2):
            g = GridProfile(V)
            V = brute_force_hopf_lax(g, 0.5, winding_bound(V, 0.5) + 1, normalize=False)[0].values
        V = V + kick_potential(path.coefficients(j), basis).values
    for x in range(n):
        c = backtrack_minimiser(traj, x, 0.0)
        total = action_of_curve(c, path) + traj.start.phi.values[c.nodes[0] % n]
        assert total == pytest.approx(V[x], abs=1e-10)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_value_identity(seed):
    n = 128
    traj, _ = _kicked(seed, n, 6, 2)
    raw_t = traj.raw_phi_at(6)
    raw_s = traj.raw_phi_at(2)
    for x in range(0, n, 5):
        c = backtrack_minimiser(traj, x, 2.0)
        assert raw_t[x] == pytest.approx(c.action + raw_s[c.nodes[0] % n], abs=1e-8 + 1 / n)
        assert c.nodes[-1] == x
        assert c.endpoint == x / n


def test_missing_history():
    traj, path = _kicked(1, 64, 6, 2)
    # a restart without carried history only covers [3, 6]
    late = evolve(SolverState(3.0, traj.phi_at(3.0)), 6, path, 2)
    with pytest.raises(MissingHistoryError):
        backtrack_minimiser(late, 5, 1.0)
    with pytest.raises(MissingHistoryError):
        backtrack_minimiser(traj, 5, 0.2)
    with pytest.raises(ValueError):
        backtrack_minimiser(traj, 64, 0.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(0, 63))
def test_restriction_property(seed, tau, x):
    traj, path = _kicked(seed, 64, 6, 2)
    whole = backtrack_minimiser(traj, x, 0.0)
    restarted = evolve(traj.state_at(float(tau)), 6, path, 2)
    again = backtrack_minimiser(restarted, x, float(tau))
    assert np.array_equal(whole.restrict(float(tau)).nodes, again.nodes)


# -- actions

def test_straight_segment_action():
    c = MinimiserCurve(np.array([0.0, 2.0]), np.array([10, 64 + 30]), 64)
    assert action_of_curve(c) == pytest.approx((84 / 64) ** 2 / 4, abs=1e-15)
    assert action_of_curve(MinimiserCurve(np.array([0.0, 1.0, 3.0]), np.array([5, 5, 5]), 64)) == 0.0


def test_misaligned_schedule():
    c = MinimiserCurve(np.array([0.0, 0.5, 2.0]), np.array([1, 2, 3]), 64)
    with pytest.raises(MisalignedScheduleError):
        action_of_curve(c, kicked_path(0, 2))


def test_backtracked_action_matches_recomputed():
    traj, path = _kicked(5, 128, 6, 2)
    for x in (0, 40, 100):
        c = backtrack_minimiser(traj, x, 0.0)
        assert action_of_curve(c, path) == pytest.approx(c.action, abs=1e-10)


def test_perturbations_never_beat_minimiser():
    traj, path = _kicked(7, 128, 6, 4)
    rng = np.random.default_rng(0)
    for x in (3, 64, 111):
        c = backtrack_minimiser(traj, x, 0.0)
        a = action_of_curve(c, path)
        for _ in range(100):
            assert action_of_curve(perturb_curve(c, rng), path) >= a - 1e-12


# -- Omega sets

def test_omega_at_endpoint_time_is_everything():
    n = 64
    traj, _ = _kicked(2, n, 4, 2)
    om = omega_set(traj, 4.0)
    assert len(om) == n and om.diameter == pytest.approx(1 - 1 / n)


def test_omega_without_forcing_is_everything():
    traj = evolve(SolverState(0.0, GridProfile(np.zeros(64))), 6, None, 2)
    assert len(omega_set(traj, 2.0)) == 64


def test_omega_outside_span():
    traj, _ = _kicked(2, 64, 4, 2)
    with pytest.raises(ValueError):
        omega_set(traj, 5.0)


def test_omega_concentrates_over_long_run():
    n = 256
    traj = evolve(SolverState(0.0, _smooth(0, n)), 40, kicked_path(0, 40), 2, stride=10**9)
    assert omega_set(traj, 20.0).diameter < 0.05


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 2))
def test_omega_nesting(seed, s1, gap):
    traj, _ = _kicked(seed, 64, 6, 2)
    s2 = s1 + gap
    om1, om2 = omega_set(traj, float(s1)), omega_set(traj, float(s2))
    back = _backtrack_set(traj.history, 64, float(s1), float(s2), om2.nodes)
    assert np.all(np.isin(back, om1.nodes))


def test_omega_experiment_at_zero_lag():
    ics = [_smooth(1, 128), _smooth(2, 128)]
    res = omega_decay_experiment(ics, [0.0], [0])
    assert res[0].series.values[0] == pytest.approx(1 - 1 / 128)
    assert res[0].fit is None and res[0].error


def test_omega_experiment_rejects_unsorted_grid():
    with pytest.raises(ValueError):
        omega_decay_experiment([_smooth(1, 32)], [2.0, 1.0], [0])


# -- midpoint gap

def test_gap_zero_without_forcing_from_rest():
    z = GridProfile(np.zeros(64))
    res = midpoint_gap_experiment(z, z, [1.0, 2.0], [0], law=KickLaw((0.0,) * 4))
    assert np.all(res[0].series.values == 0)


def test_identical_problems_have_identical_proxies():
    # with phibar0 = phi0 the proxy set coincides with the long-horizon phi0 set
    phi = _smooth(4, 128)
    res = midpoint_gap_experiment(phi, phi, [0.5, 1.0, 1.5, 2.0], [3])
    assert all(r.eps == 0 for r in res[0].replay)
    assert res[0].replay_passed


def test_gap_replay_holds_for_distinct_data():
    res = midpoint_gap_experiment(_smooth(5, 128), _smooth(6, 128, 1.0), [0.5, 1.0, 2.0], [0, 1])
    assert all(r.replay_passed for r in res)
    assert all(r.note for r in res)


def test_gap_requires_long_proxy():
    with pytest.raises(ValueError):
        midpoint_gap_experiment(_smooth(1, 32), _smooth(2, 32), [1.0], [0], extra_factor=1.0)


# -- action gap

def test_action_gap_identical_curves():
    traj, path = _kicked(8, 128, 4, 2)
    c = backtrack_minimiser(traj, 9, 0.0).restrict(1.0, 4.0, MINIMISER)
    rep = action_gap_check(c, c, path)
    assert rep.gap == 0.0 and rep.eps == 0.0 and rep.passed


@pytest.mark.parametrize("d, e", [(10, 3), (0, 5), (40, 1)])
def test_action_gap_straight_lines(d, e):
    n, x = 256, 100
    g1 = MinimiserCurve(np.array([0.0, 1.0]), np.array([x - d, x]), n)
    g2 = MinimiserCurve(np.array([0.0, 1.0]), np.array([x - d - e, x]), n)
    rep = action_gap_check(g1, g2)
    dd, eps = d / n, e / n
    assert rep.gap == pytest.approx(eps * (2 * dd + eps) / 2, abs=1e-14)
    assert rep.eps == pytest.approx(eps)
    assert rep.passed


def test_action_gap_endpoint_mismatch():
    g1 = MinimiserCurve(np.array([0.0, 1.0]), np.array([0, 5]), 64)
    g2 = MinimiserCurve(np.array([0.0, 1.0]), np.array([0, 6]), 64)
    with pytest.raises(EndpointMismatchError):
        action_gap_check(g1, g2)


def test_action_gap_on_harvested_pairs():
    n = 128
    path = kicked_path(9, 8)
    ta = evolve(SolverState(0.0, _smooth(10, n)), 8, path, 4)
    tb = evolve(SolverState(0.0, _smooth(11, n, 1.0)), 8, path, 4)
    pairs = harvest_action_pairs(ta, tb, 2.0, 8.0, range(0, n, 4))
    reps = [action_gap_check(a, b, path) for a, b in pairs]
    assert all(r.passed for r in reps)


@pytest.mark.slow
def test_omega_rate_stable_under_grid_doubling():
    from test_acceptance import _family

    s_grid = np.arange(1, 81) * 0.25
    med = {}
    for n in (512, 1024):
        res = omega_decay_experiment(_family(n, 0), s_grid, list(range(12)), workers=4)
        med[n] = np.median([r.fit.K_hat for r in res if r.fit])
    assert med[512] > 0
    assert abs(med[1024] - med[512]) <= 0.25 * med[512]
