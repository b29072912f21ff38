"""Coupled-solution experiments: distance series, exponential fits, the
interpolation rate chain, dual-Lipschitz coupling bounds and stationary
ensembles.

Two solutions are *coupled* when they are driven by one :class:`ForcingPath`
object, so they consume bit-identical kicks.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .circle_field import GridProfile, lp_norm, total_variation
from .forcing import DEFAULT_BASIS, ForcingPath, KickBasis, KickLaw, kicked_path
from .parallel import pmap
from .variational_solver import SolverState, Trajectory, derivative_field, evolve

__all__ = [
    "PHI_METRIC",
    "InsufficientDecayError",
    "DistanceSeries",
    "RateFit",
    "CoupledRun",
    "coupled_run",
    "coupled_distance_series",
    "pairwise_max_series",
    "phi_floor",
    "velocity_floor",
    "fit_exponential",
    "RateChainReport",
    "interpolation_ratio",
    "rate_chain_check",
    "EnsembleSpec",
    "Estimate",
    "half_ensemble_agreement",
    "dual_lipschitz_upper",
    "dual_lipschitz_series",
    "StationarySummary",
    "stationary_ensemble",
    "summaries_agree",
    "zero_profile",
    "random_fourier",
    "sawtooth",
    "dirac",
]

PHI_METRIC = "Linf/R"


class InsufficientDecayError(ValueError):
    """Fewer valid points above the resolution floor than a fit needs."""


@dataclass
class DistanceSeries:
    metric: str
    times: np.ndarray
    values: np.ndarray
    p: float | None = None
    floor: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values differ in length")
        if np.any(self.values < 0):
            raise ValueError("distances are nonnegative")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must increase")

    @property
    def label(self) -> str:
        return self.metric if self.p is None else f"{self.metric}(p={self.p:g})"

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(["t", "value", "seed"])
        for t, v in zip(self.times, self.values):
            w.writerow([repr(float(t)), repr(float(v)), "" if self.seed is None else self.seed])
        return buf.getvalue()


@dataclass
class RateFit:
    C_hat: float
    K_hat: float
    r2: float
    window: tuple
    n_points: int

    def to_json(self) -> str:
        return json.dumps({"C_hat": self.C_hat, "K_hat": self.K_hat, "r2": self.r2,
                           "window": list(self.window), "n_points": self.n_points})


def phi_floor(n: int) -> float:
    """Resolution floor for ``L_inf/R`` distances of potentials: ``10/n`` times the spacing ``1/n``."""
    return 10.0 / n**2


def velocity_floor(n: int, p: float) -> float:
    """Resolution floor for ``L_p`` distances of velocities.

    A velocity difference confined to one cell with unit jump has ``L_p``
    norm ``n**(-1/p)``; the floor sits a decade below that.
    """
    return 0.1 * n ** (-1.0 / p)


def fit_exponential(series: DistanceSeries, floor: float | None = None, t_min: float = 1.0,
                    min_points: int = 5) -> RateFit:
    """Least squares of ``log(value)`` against ``t`` over the automatic window.

    The window opens at the first sample with ``t >= t_min`` and closes just
    before the first sample at or below the floor.
    """
    floor = series.floor if floor is None else floor
    t, v = series.times, series.values
    start = int(np.searchsorted(t, t_min - 1e-9))
    stop = start
    while stop < t.size and v[stop] > floor:
        stop += 1
    if stop - start < min_points:
        raise InsufficientDecayError(
            f"insufficient decay range: {stop - start} points above floor {floor:.3g} after t={t_min}"
        )
    tt = t[start:stop]
    ly = np.log(v[start:stop])
    A = np.column_stack([tt, np.ones_like(tt)])
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * tt + icpt)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(resid @ resid)
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res < 1e-20 else 0.0
        slope = 0.0 if ss_res < 1e-20 else slope
    else:
        r2 = 1.0 - ss_res / ss_tot
    return RateFit(float(math.exp(icpt)), float(-slope), float(r2), (float(tt[0]), float(tt[-1])),
                   int(tt.size))


# -- coupled runs -------------------------------------------------------------

@dataclass(eq=False)
class CoupledRun:
    path: ForcingPath | None
    a: Trajectory
    b: Trajectory

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.a.times)

    def kicks_identical(self) -> bool:
        ka, kb = self.a.kicks(), self.b.kicks()
        return len(ka) == len(kb) and all(
            x.j == y.j and np.array_equal(x.coeffs, y.coeffs) for x, y in zip(ka, kb)
        )


def coupled_run(phi0: GridProfile, phibar0: GridProfile, horizon: float,
                path: ForcingPath | None, substeps: int = 4, basis: KickBasis | None = None,
                stride: int = 1) -> CoupledRun:
    if phi0.n != phibar0.n:
        raise ValueError("coupled profiles must share the grid")
    ta = evolve(SolverState(0.0, phi0), horizon, path, substeps, basis, stride, consumer="a")
    tb = evolve(SolverState(0.0, phibar0), horizon, path, substeps, basis, stride, consumer="b")
    return CoupledRun(path, ta, tb)


def coupled_distance_series(phi0: GridProfile, phibar0: GridProfile, horizon: float,
                            path: ForcingPath | None, metrics: Sequence = (PHI_METRIC, 1.0),
                            substeps: int = 4, basis: KickBasis | None = None, stride: int = 1,
                            run: CoupledRun | None = None):
    """Distances between coupled solutions at every snapshot.

    ``metrics`` mixes :data:`PHI_METRIC` (quotient sup distance of potentials)
    and numbers ``p`` (``L_p`` distance of velocities).
    """
    if run is None:
        run = coupled_run(phi0, phibar0, horizon, path, substeps, basis, stride)
    n = run.a.n
    pa = np.asarray(run.a.phis)
    pb = np.asarray(run.b.phis)
    out = []
    seed = path.seed if path is not None else None
    for m in metrics:
        if m == PHI_METRIC:
            w = pa - pb
            vals = (w.max(axis=1) - w.min(axis=1)) / 2.0
            out.append(DistanceSeries(PHI_METRIC, run.times, vals, None, phi_floor(n), seed))
        else:
            p = float(m)
            vals = [lp_norm(derivative_field(GridProfile(x)) - derivative_field(GridProfile(y)), p)
                    for x, y in zip(pa, pb)]
            out.append(DistanceSeries("Lp(u)", run.times, vals, p, velocity_floor(n, p), seed))
    return out


def _velocities(traj: Trajectory) -> np.ndarray:
    u = np.roll(np.asarray(traj.phis), -1, axis=1) - np.asarray(traj.phis)
    u *= traj.n
    return u - u.mean(axis=1, keepdims=True)


def pairwise_max_series(profiles, horizon: float, path: ForcingPath | None,
                        metrics: Sequence = (PHI_METRIC,), substeps: int = 4,
                        basis: KickBasis | None = None, stride: int = 1):
    """Max over all pairs of a coupled family of the distance series.

    Every profile is evolved once under the shared path; the returned
    series hold, at each snapshot, the largest pairwise distance.  Also
    returns the trajectories.
    """
    if len(profiles) < 2:
        raise ValueError("need at least two profiles")
    trajs = [evolve(SolverState(0.0, phi), horizon, path, substeps, basis, stride, consumer=str(k))
             for k, phi in enumerate(profiles)]
    n = trajs[0].n
    times = np.asarray(trajs[0].times)
    phis = [np.asarray(t.phis) for t in trajs]
    us = [_velocities(t) for t in trajs]
    seed = path.seed if path is not None else None
    out = []
    for m in metrics:
        best = np.zeros(times.size)
        for i in range(len(trajs)):
            for j in range(i + 1, len(trajs)):
                if m == PHI_METRIC:
                    w = phis[i] - phis[j]
                    d = (w.max(axis=1) - w.min(axis=1)) / 2.0
                else:
                    d = np.array([lp_norm(a - b, float(m)) for a, b in zip(us[i], us[j])])
                best = np.maximum(best, d)
        if m == PHI_METRIC:
            out.append(DistanceSeries(PHI_METRIC, times, best, None, phi_floor(n), seed))
        else:
            out.append(DistanceSeries("Lp(u)", times, best, float(m), velocity_floor(n, float(m)), seed))
    return out, trajs


# -- interpolation rate chain ----------------------------------------------------

def interpolation_ratio(phi: GridProfile, phibar: GridProfile, p: float) -> float | None:
    """``|u-ubar|_p / (|w - mean w|_1^(1/2p) * TV(u-ubar)^(1-1/2p))`` with ``w = phi - phibar``.

    Returns ``None`` when numerator and denominator both vanish, counting
    differences at rounding level as zero.
    """
    w = phi.values - phibar.values
    w = w - w.mean()
    scale = max(np.max(np.abs(phi.values)), np.max(np.abs(phibar.values)), 1.0)
    if np.max(np.abs(w)) <= 1e-13 * scale:
        return None
    du = derivative_field(phi) - derivative_field(phibar)
    num = lp_norm(du, p)
    e = 1.0 / (2.0 * p)
    den = lp_norm(w, 1) ** e * total_variation(du) ** (1.0 - e)
    if den == 0.0:
        if num == 0.0:
            return None
        return math.inf
    return num / den


@dataclass
class RateChainReport:
    passed: bool
    K_phi: float
    K_u: dict
    required: dict
    rate_ok: dict
    ratio_bound: dict = field(default_factory=dict)
    ratio_max: dict = field(default_factory=dict)
    ratio_ok: dict = field(default_factory=dict)
    degenerate: bool = False
    notes: list = field(default_factory=list)


def rate_chain_check(fit_phi: RateFit, fits_u: dict, run: CoupledRun | None = None,
                     rel_tol: float = 0.25, head_fraction: float = 0.1) -> RateChainReport:
    """Check ``K_u(p) >= K_phi/(2p) - tol`` with ``tol = rel_tol * K_phi/(2p)``.

    With a coupled run, also tracks the interpolation ratio along the run and
    requires it to stay below its maximum over the first ``head_fraction`` of
    all samples; 0/0 samples are skipped.
    """
    for p, f in fits_u.items():
        lo = max(f.window[0], fit_phi.window[0])
        hi = min(f.window[1], fit_phi.window[1])
        if lo > hi:
            raise ValueError(f"fit windows for p={p} and for phi do not overlap")
    required, rate_ok = {}, {}
    for p, f in fits_u.items():
        need = fit_phi.K_hat / (2.0 * p)
        required[p] = need * (1.0 - rel_tol)
        rate_ok[p] = bool(f.K_hat >= required[p])
    rep = RateChainReport(all(rate_ok.values()), fit_phi.K_hat,
                          {p: f.K_hat for p, f in fits_u.items()}, required, rate_ok)
    if run is None:
        return rep
    head = max(1, int(math.ceil(head_fraction * len(run.a.phis))))
    for p in fits_u:
        ratios = [interpolation_ratio(GridProfile(x), GridProfile(y), p)
                  for x, y in zip(run.a.phis, run.b.phis)]
        # 0/0 samples (merged solutions) carry no information
        first = [r for r in ratios[:head] if r is not None]
        ratios = [r for r in ratios if r is not None]
        if not first:
            rep.degenerate = True
            rep.notes.append(f"p={p}: degenerate, skipped")
            continue
        bound = max(first)
        rep.ratio_bound[p] = bound
        rep.ratio_max[p] = max(ratios)
        rep.ratio_ok[p] = bool(max(ratios) <= bound)
    rep.passed = rep.passed and all(rep.ratio_ok.values())
    return rep


# -- initial-condition samplers --------------------------------------------------

def zero_profile(rng, n):
    return GridProfile(np.zeros(n))


@dataclass(frozen=True)
class random_fourier:
    """Sampler of random trigonometric potentials with spectrum ``~ k**-decay``."""

    amplitude: float = 0.5
    modes: int = 8
    decay: float = 1.5

    def __call__(self, rng, n):
        x = np.arange(n) / n
        k = np.arange(1, self.modes + 1)
        c = rng.standard_normal(self.modes) / k**self.decay
        ph = rng.uniform(0.0, 2.0 * np.pi, self.modes)
        return GridProfile(self.amplitude * np.cos(2.0 * np.pi * np.outer(x, k) + ph) @ c)


@dataclass(frozen=True)
class sawtooth:
    """Sampler of randomly shifted potentials whose derivative is a sawtooth.

    ``u`` rises linearly with slope ``amplitude`` and drops by
    ``amplitude/teeth`` at each of ``teeth`` shocks.
    """

    teeth: int = 4
    amplitude: float = 1.0

    def __call__(self, rng, n):
        x = np.arange(n) / n
        y = (x * self.teeth + rng.uniform()) % 1.0
        return GridProfile(self.amplitude / self.teeth**2 * (y * y - y) / 2.0)


@dataclass(frozen=True, eq=False)
class dirac:
    """Sampler that always returns one fixed profile."""

    profile: GridProfile

    def __call__(self, rng, n):
        if n != self.profile.n:
            raise ValueError("Dirac profile grid does not match the ensemble grid")
        return self.profile


# -- ensembles -------------------------------------------------------------------

@dataclass
class EnsembleSpec:
    members: int
    law1: Callable
    law2: Callable
    p: float = 1.0
    horizon: float = 20.0
    seed: int = 0
    n: int = 256
    substeps: int = 1
    kick_law: KickLaw = field(default_factory=KickLaw)
    basis: tuple = DEFAULT_BASIS


@dataclass
class Estimate:
    mean: float
    se: float
    values: np.ndarray

    def agrees_with(self, other: "Estimate", k: float = 3.0, rtol: float = 1e-12) -> bool:
        """Means within ``k`` combined standard errors.

        ``rtol`` absorbs rounding when both estimates are (near) deterministic
        and the standard errors vanish.
        """
        slack = rtol * max(abs(self.mean), abs(other.mean))
        return abs(self.mean - other.mean) <= k * math.hypot(self.se, other.se) + slack

    @classmethod
    def from_values(cls, values) -> "Estimate":
        v = np.asarray(values, dtype=float)
        if v.size < 2:
            raise ValueError("ensemble size must be at least 2")
        return cls(float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)), v)


def half_ensemble_agreement(values, k: float = 3.0) -> list:
    """Per column of ``values`` (pairs x times): do even and odd halves agree?"""
    values = np.asarray(values, dtype=float)
    return [Estimate.from_values(values[0::2, j]).agrees_with(Estimate.from_values(values[1::2, j]), k)
            for j in range(values.shape[1])]


def _ic_rng(seed, member, tag):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(member), hash_tag(tag)]))


def hash_tag(tag: str) -> int:
    import zlib

    return zlib.crc32(tag.encode())


def _pair_distances(args):
    spec, i, times = args
    phi0 = spec.law1(_ic_rng(spec.seed, i, "law1"), spec.n)
    phibar0 = spec.law2(_ic_rng(spec.seed, i, "law2"), spec.n)
    path = kicked_path(spec.seed, spec.horizon, spec.kick_law, member=i, tag="ensemble")
    basis = KickBasis(spec.n, spec.basis)
    t_end = max(times)
    out = np.empty(len(times))
    run = None
    if t_end > 0:
        run = coupled_run(phi0, phibar0, t_end, path, spec.substeps, basis)
    for k, t in enumerate(times):
        if t == 0:
            a, b = phi0, phibar0
        else:
            a, b = run.a.phi_at(t), run.b.phi_at(t)
        out[k] = min(2.0, lp_norm(derivative_field(a) - derivative_field(b), spec.p))
    return out


def dual_lipschitz_series(spec: EnsembleSpec, times, workers: int = 1):
    """Coupling upper bounds on the dual-Lipschitz distance at each time.

    Returns ``(times, [Estimate per time], values)`` where ``values[i, k]`` is
    ``min(2, |u_i(t_k) - ubar_i(t_k)|_p)`` for pair ``i``.
    """
    if spec.members < 2:
        raise ValueError("ensemble needs at least two pairs")
    times = [float(t) for t in times]
    vals = np.array(pmap(_pair_distances, [(spec, i, times) for i in range(spec.members)], workers))
    ests = []
    for k in range(len(times)):
        ests.append(Estimate.from_values(vals[:, k]))
    return times, ests, vals


def dual_lipschitz_upper(spec: EnsembleSpec, t: float, workers: int = 1) -> Estimate:
    """Monte Carlo mean of ``min(2, |u(t) - ubar(t)|_p)`` over coupled pairs."""
    return dual_lipschitz_series(spec, [t], workers)[1][0]


@dataclass
class StationarySummary:
    stats: dict
    members: int

    def mean(self, key):
        return self.stats[key][0]

    def se(self, key):
        return self.stats[key][1]


STAT_KEYS = ("L1", "TV", "energy")


def _stationary_member(args):
    sampler, i, seed, n, substeps, law, basis, burn_in, samples = args
    phi0 = sampler(_ic_rng(seed, i, "stationary"), n)
    path = kicked_path(seed, burn_in + samples, law, member=i, tag="stationary")
    traj = evolve(SolverState(0.0, phi0), burn_in + samples, path, substeps, KickBasis(n, basis),
                  stride=substeps)
    rows = []
    for t, phi in zip(traj.times, traj.phis):
        if t > burn_in + 1e-9:
            u = derivative_field(GridProfile(phi))
            rows.append((lp_norm(u, 1), total_variation(u), 0.5 * lp_norm(u, 2) ** 2))
    return np.mean(rows, axis=0)


def stationary_ensemble(sampler, members: int, burn_in: float, samples: int, seed: int = 0,
                        n: int = 256, substeps: int = 1, law: KickLaw | None = None,
                        basis=DEFAULT_BASIS, workers: int = 1) -> StationarySummary:
    """Time-averaged statistics after burn-in over independent members.

    Each member contributes the average of ``|u|_1``, ``TV(u)`` and
    ``|u|_2^2/2`` over ``samples`` unit-spaced snapshots; the summary holds the
    member mean and its standard error.
    """
    if burn_in < 10:
        raise ValueError("burn-in must cover at least 10 kick periods")
    law = law or KickLaw()
    per = np.array(pmap(_stationary_member,
                        [(sampler, i, seed, n, substeps, law, basis, burn_in, samples)
                         for i in range(members)], workers))
    stats = {}
    for k, key in enumerate(STAT_KEYS):
        col = per[:, k]
        se = float(col.std(ddof=1) / math.sqrt(members)) if members > 1 else math.inf
        stats[key] = (float(col.mean()), se)
    return StationarySummary(stats, members)


def summaries_agree(a: StationarySummary, b: StationarySummary, key: str = "TV", k: float = 2.0) -> bool:
    return abs(a.mean(key) - b.mean(key)) <= k * math.hypot(a.se(key), b.se(key))
