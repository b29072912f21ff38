"""Minimising curves rebuilt from stored flight winners, their actions,
Omega sets and the concentration experiments built on them.

Curve positions are kept as integer node indices in the universal cover
(``nodes / n`` is the unrolled position), so set diameters and gap
inequalities are evaluated exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circle_field import CircleSubset, GridProfile
from .contraction_lab import DistanceSeries, InsufficientDecayError, RateFit, fit_exponential
from .forcing import DEFAULT_BASIS, ForcingPath, KickBasis, KickLaw, kicked_path
from .parallel import pmap
from .variational_solver import TIME_TOL, FlightStep, KickStep, SolverState, Trajectory, evolve

__all__ = [
    "PHI0_MINIMISER",
    "MINIMISER",
    "ONE_SIDED_PROXY",
    "MissingHistoryError",
    "MisalignedScheduleError",
    "EndpointMismatchError",
    "MinimiserCurve",
    "OmegaSet",
    "DecaySeries",
    "backtrack_minimiser",
    "action_of_curve",
    "perturb_curve",
    "omega_set",
    "omega_diameter_units",
    "OmegaDecay",
    "omega_decay_experiment",
    "GapReplay",
    "MidpointGap",
    "midpoint_gap_experiment",
    "harvest_action_pairs",
    "ActionGapReport",
    "action_gap_check",
]

PHI0_MINIMISER = "phi0-minimiser"
MINIMISER = "minimiser"
ONE_SIDED_PROXY = "one-sided proxy"

DecaySeries = DistanceSeries


class MissingHistoryError(LookupError):
    """The stored steps do not cover the requested time interval."""


class MisalignedScheduleError(ValueError):
    """A kick time inside the curve's span is not one of its boundaries."""


class EndpointMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MinimiserCurve:
    """A grid curve: step-boundary times and unrolled node indices.

    Between consecutive boundaries the curve is a straight segment.
    """

    times: np.ndarray
    nodes: np.ndarray
    n: int
    label: str = PHI0_MINIMISER
    action: float | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        k = np.asarray(self.nodes, dtype=np.int64)
        if t.shape != k.shape or t.ndim != 1 or t.size < 1:
            raise ValueError("times and nodes must be matching 1-d arrays")
        if np.any(np.diff(t) <= 0):
            raise ValueError("curve times must increase")
        t.setflags(write=False)
        k.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "nodes", k)

    @property
    def unrolled(self) -> np.ndarray:
        return self.nodes / self.n

    @property
    def positions(self) -> np.ndarray:
        return np.mod(self.nodes, self.n) / self.n

    @property
    def endpoint(self) -> float:
        return float(self.positions[-1])

    @property
    def span(self) -> tuple:
        return float(self.times[0]), float(self.times[-1])

    def at(self, t: float) -> float:
        """Position mod 1 at time ``t`` (linear between boundaries)."""
        if t < self.times[0] - TIME_TOL or t > self.times[-1] + TIME_TOL:
            raise ValueError(f"t={t} outside the curve span")
        return float(np.interp(t, self.times, self.unrolled) % 1.0)

    def restrict(self, t0: float, t1: float | None = None, label: str | None = None) -> "MinimiserCurve":
        t1 = self.times[-1] if t1 is None else t1
        keep = (self.times >= t0 - TIME_TOL) & (self.times <= t1 + TIME_TOL)
        t = self.times[keep]
        if t.size == 0 or abs(t[0] - t0) > TIME_TOL or abs(t[-1] - t1) > TIME_TOL:
            raise ValueError("restriction bounds must be curve boundaries")
        return MinimiserCurve(t, self.nodes[keep], self.n, label or self.label)


# -- backtracking ------------------------------------------------------------------

def _flights(history, s: float, t: float):
    fl = [st for st in history if isinstance(st, FlightStep)
          and st.t0 >= s - TIME_TOL and st.t1 <= t + TIME_TOL]
    if abs(t - s) <= TIME_TOL:
        return []
    if not fl or abs(fl[0].t0 - s) > TIME_TOL or abs(fl[-1].t1 - t) > TIME_TOL:
        raise MissingHistoryError(f"history does not cover [{s}, {t}] on step boundaries")
    for a, b in zip(fl, fl[1:]):
        if abs(a.t1 - b.t0) > TIME_TOL:
            raise MissingHistoryError(f"history gap between t={a.t1} and t={b.t0}")
    return fl


def _end_time(traj: Trajectory, t):
    return traj.t_end if t is None else float(t)


def backtrack_minimiser(traj: Trajectory, x: int, s: float, t: float | None = None,
                        label: str = PHI0_MINIMISER) -> MinimiserCurve:
    """Follow the winner chain from node ``x`` at time ``t`` back to time ``s``.

    The action accumulated on the way uses the stored kick potentials, so
    ``raw phi(t, x) = action + raw phi(s, gamma(s))`` up to rounding.
    """
    t = _end_time(traj, t)
    n = traj.n
    if not 0 <= x < n:
        raise ValueError(f"node {x} outside the grid")
    history = traj.history
    fl = _flights(history, s, t)
    kicks = {round(k.t, 9): k for k in history if isinstance(k, KickStep)
             and s + TIME_TOL < k.t <= t + TIME_TOL}
    u = int(x)
    nodes = [u]
    times = [t]
    action = 0.0
    for st in reversed(fl):
        k = kicks.get(round(st.t1, 9))
        if k is not None:
            action += float(k.potential[u % n])
        d = int(st.record.displacement()[u % n])
        action += (d / n) ** 2 / (2.0 * (st.t1 - st.t0))
        u -= d
        nodes.append(u)
        times.append(st.t0)
    return MinimiserCurve(np.array(times[::-1]), np.array(nodes[::-1]), n, label, action)


def action_of_curve(curve: MinimiserCurve, path: ForcingPath | None = None,
                    basis: KickBasis | None = None) -> float:
    """Kinetic action of the polygon plus realized kicks at times in ``(s, t]``.

    Kick potentials are evaluated from their closed form, independently of
    the grid arrays the solver used.
    """
    x = curve.unrolled
    dt = np.diff(curve.times)
    total = float(np.sum(np.diff(x) ** 2 / (2.0 * dt)))
    if path is None:
        return total
    if basis is None:
        basis = KickBasis(8, DEFAULT_BASIS[: path.law.K])
    s, t = curve.span
    j = int(math.floor(s / path.dt + 1e-9)) + 1
    while j * path.dt <= t + TIME_TOL:
        tj = path.kick_time(j)
        hit = np.flatnonzero(np.abs(curve.times - tj) <= TIME_TOL)
        if hit.size == 0:
            raise MisalignedScheduleError(f"kick at t={tj} is not a curve boundary")
        pos = (int(curve.nodes[hit[0]]) % curve.n) / curve.n
        total += float(path.coefficients(j) @ basis.evaluate(pos))
        j += 1
    return total


def perturb_curve(curve: MinimiserCurve, rng, max_shift: int = 3) -> MinimiserCurve:
    """Random integer node shifts at interior boundaries; endpoints fixed."""
    shift = rng.integers(-max_shift, max_shift + 1, size=curve.nodes.size)
    shift[0] = shift[-1] = 0
    return MinimiserCurve(curve.times, curve.nodes + shift, curve.n, "perturbed")


# -- Omega sets ----------------------------------------------------------------------

def _backtrack_set(history, n: int, s: float, t: float, start=None) -> np.ndarray:
    """Nodes (mod n, sorted, unique) reached at ``s`` by the winner chains from ``start`` at ``t``."""
    u = np.arange(n) if start is None else np.unique(np.mod(start, n))
    for st in reversed(_flights(history, s, t)):
        u = np.unique(np.mod(u - st.record.displacement()[u], n))
    return u


def omega_diameter_units(nodes: np.ndarray, n: int) -> int:
    """Circle diameter of a sorted node set, in grid units."""
    if nodes.size == 1:
        return 0
    gaps = np.diff(np.append(nodes, nodes[0] + n))
    return int(n - gaps.max())


def _circ_units(a, b, n: int):
    d = np.mod(np.asarray(a) - np.asarray(b), n)
    return np.minimum(d, n - d)


@dataclass(frozen=True, eq=False)
class OmegaSet:
    r: float
    s: float
    t: float
    tag: str
    nodes: np.ndarray
    n: int
    points: CircleSubset = field(init=False)

    def __post_init__(self):
        if self.nodes.size == 0:
            raise ValueError("Omega set must be nonempty")
        object.__setattr__(self, "points", CircleSubset(self.nodes / self.n))

    @property
    def diameter(self) -> float:
        return omega_diameter_units(self.nodes, self.n) / self.n

    @property
    def at_floor(self) -> bool:
        return omega_diameter_units(self.nodes, self.n) < 2

    def __len__(self):
        return self.nodes.size


def omega_set(traj: Trajectory, s: float, t: float | None = None, tag: str = "phi0") -> OmegaSet:
    """Positions at time ``s`` of the minimisers ending at every node at time ``t``."""
    t = _end_time(traj, t)
    r = traj.history[0].t0 if traj.history and isinstance(traj.history[0], FlightStep) else traj.t_start
    if s < r - TIME_TOL or s > t + TIME_TOL or t > traj.t_end + TIME_TOL:
        raise ValueError(f"s={s} outside the trajectory span [{r}, {t}]")
    nodes = _backtrack_set(traj.history, traj.n, s, t)
    return OmegaSet(r, s, t, tag, nodes, traj.n)


def _run(phi0: GridProfile, horizon: float, path, substeps: int, basis, consumer=None) -> Trajectory:
    # snapshots are not needed for backtracking: keep only the endpoints
    return evolve(SolverState(0.0, phi0), horizon, path, substeps, basis, stride=10**9,
                  consumer=consumer)


def _resolution_floor(n: int) -> float:
    # values k/n with k < 2 are at the floor
    return 1.5 / n


@dataclass
class OmegaDecay:
    series: DistanceSeries
    fit: RateFit | None
    reached_floor: bool
    error: str = ""


def _omega_seed(args):
    phi0_list, s_grid, seed, s, substeps, law, descriptors, t_min = args
    n = phi0_list[0].n
    horizon = s + max(s_grid)
    horizon = math.ceil(horizon - 1e-9)
    path = kicked_path(seed, horizon, law, tag="omega")
    basis = KickBasis(n, descriptors)
    diam = np.zeros(len(s_grid), dtype=np.int64)
    for phi0 in phi0_list:
        traj = _run(phi0, horizon, path, substeps, basis)
        hist = traj.history
        for k, sp in enumerate(s_grid):
            nodes = _backtrack_set(hist, n, s, s + sp)
            diam[k] = max(diam[k], omega_diameter_units(nodes, n))
    series = DistanceSeries("omega_diameter", s_grid, diam / n, None, _resolution_floor(n), seed)
    return _finish(series, t_min)


def _finish(series: DistanceSeries, t_min: float) -> OmegaDecay:
    reached = bool(np.any(series.values <= series.floor))
    try:
        return OmegaDecay(series, fit_exponential(series, t_min=t_min), reached)
    except InsufficientDecayError as exc:
        return OmegaDecay(series, None, reached, str(exc))


def omega_decay_experiment(phi0_list, s_prime_grid, seeds, s: float = 1.0, substeps: int = 4,
                           law: KickLaw | None = None, basis=DEFAULT_BASIS, t_min: float = 1.0,
                           workers: int = 1):
    """Max over ``phi0_list`` of ``d(Omega_{0, s, s+s'})`` along ``s_prime_grid``, per seed.

    Times ``s`` and ``s + s'`` must fall on flight boundaries.  Each seed gets
    an exponential fit over ``s' >= t_min`` above the resolution floor.
    """
    s_grid = np.asarray(s_prime_grid, dtype=float)
    if np.any(np.diff(s_grid) <= 0):
        raise ValueError("s' values must increase")
    law = law or KickLaw()
    tasks = [(list(phi0_list), s_grid, int(sd), float(s), substeps, law, tuple(basis), t_min)
             for sd in seeds]
    return pmap(_omega_seed, tasks, workers)


# -- midpoint gap ---------------------------------------------------------------------

@dataclass
class GapReplay:
    """Per-time replay of the triangle chain, in grid units."""

    t: float
    gap: int
    diam_G: int
    eps: int
    diam_D: int
    restriction_ok: bool
    chain_ok: bool

    @property
    def passed(self) -> bool:
        return self.restriction_ok and self.chain_ok


@dataclass
class MidpointGap:
    series: DistanceSeries
    fit: RateFit | None
    replay: list
    reached_floor: bool
    error: str = ""
    note: str = "one-sided minimisers replaced by finite-horizon proxies"

    @property
    def replay_passed(self) -> bool:
        return all(r.passed for r in self.replay)


def _chains(history, n: int, s: float, t: float) -> np.ndarray:
    """Node at time ``s`` (mod n) of the winner chain from every node at ``t``."""
    u = np.arange(n)
    for st in reversed(_flights(history, s, t)):
        u = np.mod(u - st.record.displacement()[u], n)
    return u


def _gap_seed(args):
    phi0, phibar0, t_grid, seed, extra, substeps, law, descriptors, t_min = args
    n = phi0.n
    horizon = math.ceil((2.0 + extra) * max(t_grid) - 1e-9)
    path = kicked_path(seed, horizon, law, tag="midpoint")
    basis = KickBasis(n, descriptors)
    ha = _run(phi0, horizon, path, substeps, basis, "a").history
    hb = _run(phibar0, horizon, path, substeps, basis, "b").history
    gaps, replay = [], []
    for t in t_grid:
        T_long = (2.0 + extra) * t
        g = _chains(ha, n, t, 2.0 * t)
        d = _chains(hb, n, t, T_long)
        G = np.unique(g)
        G_long = np.unique(_chains(ha, n, t, T_long))
        D = np.unique(d)
        gap = int(_circ_units(g, d, n).max())
        dG, dD = omega_diameter_units(G, n), omega_diameter_units(D, n)
        cross = _circ_units(G_long[:, None], D[None, :], n)
        ia, ib = np.unravel_index(np.argmin(cross), cross.shape)
        eps = int(cross[ia, ib])
        gs, ds = G_long[ia], D[ib]
        restriction_ok = bool(np.all(np.isin(G_long, G)))
        leg1 = _circ_units(g, gs, n)
        leg3 = _circ_units(ds, d, n)
        chain_ok = bool(np.all(leg1 <= dG) and np.all(leg3 <= dD)
                        and np.all(_circ_units(g, d, n) <= leg1 + eps + leg3))
        gaps.append(gap)
        replay.append(GapReplay(float(t), gap, dG, eps, dD, restriction_ok, chain_ok))
    series = DistanceSeries("midpoint_gap", t_grid, np.array(gaps) / n, None, _resolution_floor(n), seed)
    dec = _finish(series, t_min)
    return MidpointGap(series, dec.fit, replay, dec.reached_floor, dec.error)


def midpoint_gap_experiment(phi0: GridProfile, phibar0: GridProfile, t_grid, seeds,
                            extra_factor: float = 2.0, substeps: int = 4, law: KickLaw | None = None,
                            basis=DEFAULT_BASIS, t_min: float = 1.0, workers: int = 1):
    """Gap between ``phi0``-minimisers on ``[0, 2t]`` and ``phibar0`` proxies at time ``t``.

    For each endpoint node ``x`` the ``phi0``-minimiser on ``[0, 2t]`` and the
    ``phibar0``-minimiser on ``[0, 2t + T_extra]`` (``T_extra = extra_factor * t``)
    are compared at time ``t``; the series holds the max over ``x``.
    """
    if extra_factor < 2.0:
        raise ValueError("one-sided proxy needs T_extra >= 2t")
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0) or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t grid must be positive and increasing")
    law = law or KickLaw()
    tasks = [(phi0, phibar0, t_grid, int(sd), float(extra_factor), substeps, law, tuple(basis), t_min)
             for sd in seeds]
    return pmap(_gap_seed, tasks, workers)


def harvest_action_pairs(traj_a: Trajectory, traj_b: Trajectory, t: float, T: float, nodes):
    """Pairs of minimisers on ``[t, T]`` ending at each node, one from each run."""
    out = []
    for x in nodes:
        g1 = backtrack_minimiser(traj_a, int(x), 0.0, T).restrict(t, T, MINIMISER)
        g2 = backtrack_minimiser(traj_b, int(x), 0.0, T).restrict(t, T, MINIMISER)
        out.append((g1, g2))
    return out


# -- action gap -------------------------------------------------------------------------

@dataclass
class ActionGapReport:
    eps: float
    gap: float
    certificate: float
    C_bound: float
    bound: float
    C_emp: float
    passed: bool


def _shifted(curve: MinimiserCurve, e: int) -> MinimiserCurve:
    # linear interpolation of the offset e over [t, t+1], rounded to nodes
    lam = np.clip(1.0 - (curve.times - curve.times[0]), 0.0, 1.0)
    shift = np.rint(lam * e).astype(np.int64)
    return MinimiserCurve(curve.times, curve.nodes + shift, curve.n, "connecting")


def action_gap_check(g1: MinimiserCurve, g2: MinimiserCurve, path: ForcingPath | None = None,
                     basis: KickBasis | None = None, tol: float = 1e-9) -> ActionGapReport:
    """Compare ``|A(g1) - A(g2)|`` with ``C (eps + eps^2)``.

    The certificate is the excess action of the connecting curves, each
    following the other curve's start into this curve over ``[t, t+1]``.
    """
    if g1.n != g2.n or not np.array_equal(g1.times, g2.times):
        raise EndpointMismatchError("curves must share grid and time boundaries")
    n = g1.n
    if (int(g1.nodes[-1]) - int(g2.nodes[-1])) % n:
        raise EndpointMismatchError("curves end at different points")
    t, T = g1.span
    if T < t + 1.0 - TIME_TOL:
        raise ValueError("action gap needs T >= t + 1")
    e = int((int(g2.nodes[0]) - int(g1.nodes[0]) + n // 2) % n) - n // 2
    eps = abs(e) / n
    a1 = action_of_curve(g1, path, basis)
    a2 = action_of_curve(g2, path, basis)
    c1 = action_of_curve(_shifted(g1, e), path, basis) - a1
    c2 = action_of_curve(_shifted(g2, -e), path, basis) - a2
    cert = max(c1, c2, 0.0)
    gap = abs(a1 - a2)

    head = g1.times <= t + 1.0 + TIME_TOL
    dts = np.diff(g1.times[head])
    V = max(float(np.max(np.abs(np.diff(g.unrolled[head]) / dts))) for g in (g1, g2))
    S = 1.0 / float(dts.min())
    lip = 0.0
    if path is not None:
        b = basis or KickBasis(8, DEFAULT_BASIS[: path.law.K])
        j = int(math.floor(t / path.dt + 1e-9)) + 1
        while path.kick_time(j) <= t + 1.0 + TIME_TOL:
            lip += b.lipschitz(path.coefficients(j))
            j += 1
    C = max((1.0 + S) * V + 2.0 * lip, (1.0 + S) ** 2 / 2.0)
    bound = C * (eps + eps**2)
    C_emp = cert / (eps + eps**2) if eps > 0 else 0.0
    passed = gap <= cert + tol and cert <= bound + tol
    return ActionGapReport(eps, gap, cert, C, bound, C_emp, bool(passed))
