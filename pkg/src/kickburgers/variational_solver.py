"""Pathwise (Lax-Oleinik) solution operator for the kicked Hamilton-Jacobi equation.

Free flight over a time ``delta`` is the min-plus convolution of ``phi`` with
the quadratic kernel ``d**2 / (2*delta)`` taken over all periodic images of
the grid sources; a kick adds the kick potential pointwise.  Every flight
keeps an :class:`ArgminRecord` so minimising curves can be traced backwards.

The cost matrix ``C[i, k] = phi[k mod n] + (x_i - z_k)**2 / (2 delta)`` over
unrolled sources ``z_k`` is Monge, so leftmost row minima move monotonically
and a divide-and-conquer search needs ``O((n + cols) log n)`` evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circle_field import POTENTIAL, VELOCITY, GridProfile
from .forcing import DEFAULT_BASIS, ForcingPath, KickBasis

__all__ = [
    "WindingTruncationError",
    "ForcingExhaustedError",
    "ArgminRecord",
    "FlightStep",
    "KickStep",
    "SolverState",
    "Trajectory",
    "winding_bound",
    "hopf_lax_step",
    "apply_kick",
    "derivative_field",
    "semiconcavity_check",
    "SemiconcavityReport",
    "evolve",
]

TIME_TOL = 1e-9


class WindingTruncationError(RuntimeError):
    """A flight winner sat on the outermost allowed winding."""


class ForcingExhaustedError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ArgminRecord:
    """Winners of one flight: endpoint node ``i`` came from node ``source[i]``
    shifted by ``winding[i]`` periods."""

    duration: float
    source: np.ndarray
    winding: np.ndarray
    w_max: int

    @property
    def n(self) -> int:
        return self.source.size

    @property
    def unrolled(self) -> np.ndarray:
        """Winner positions in the universal cover, in grid units."""
        return self.source + self.winding * self.n

    def displacement(self) -> np.ndarray:
        """Endpoint minus source position in grid units (length of each segment)."""
        return np.arange(self.n) - self.unrolled

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.unrolled) >= 0))


@dataclass(frozen=True, eq=False)
class FlightStep:
    t0: float
    t1: float
    record: ArgminRecord
    shift: float = 0.0


@dataclass(frozen=True, eq=False)
class KickStep:
    t: float
    j: int
    coeffs: np.ndarray
    potential: np.ndarray
    shift: float = 0.0


@dataclass(frozen=True, eq=False)
class SolverState:
    time: float
    phi: GridProfile
    history: tuple = ()
    offset: float = 0.0

    @property
    def n(self) -> int:
        return self.phi.n


def winding_bound(values: np.ndarray, delta: float) -> int:
    """Number of periodic images to search on each side.

    A winner's displacement never exceeds ``delta * Lip(phi) + 1/(2n)``, so
    windings up to ``ceil(delta * Lip + 1/n)`` suffice and one more is kept as
    a guard band that must stay empty.
    """
    n = values.size
    lip = n * np.max(np.abs(np.roll(values, -1) - values))
    return int(math.ceil(delta * lip + 1.0 / n)) + 1


def _monotone_row_minima(cost, n_rows: int, n_cols: int):
    """Leftmost row minima of an implicit Monge matrix.

    Rows are solved level by level: each pass takes the midpoint of every
    unsolved gap and scans only the column range fenced by its solved
    neighbours.  ``cost(rows, cols)`` is evaluated elementwise on flat arrays.
    """
    vals = np.empty(n_rows)
    args = np.empty(n_rows, dtype=np.int64)
    solved_rows = np.array([-1, n_rows], dtype=np.int64)
    solved_args = np.array([0, n_cols - 1], dtype=np.int64)
    while True:
        left, right = solved_rows[:-1], solved_rows[1:]
        gap = right - left > 1
        if not gap.any():
            break
        mids = (left[gap] + right[gap]) // 2
        lo = solved_args[:-1][gap]
        hi = solved_args[1:][gap]
        lengths = hi - lo + 1
        starts = np.zeros(mids.size, dtype=np.int64)
        np.cumsum(lengths[:-1], out=starts[1:])
        cols = np.arange(lengths.sum(), dtype=np.int64) - np.repeat(starts - lo, lengths)
        c = cost(np.repeat(mids, lengths), cols)
        seg_min = np.minimum.reduceat(c, starts)
        cand = np.where(c == np.repeat(seg_min, lengths), cols, n_cols)
        seg_arg = np.minimum.reduceat(cand, starts)
        vals[mids] = seg_min
        args[mids] = seg_arg
        solved_rows = np.concatenate((solved_rows, mids))
        solved_args = np.concatenate((solved_args, seg_arg))
        order = np.argsort(solved_rows, kind="stable")
        solved_rows = solved_rows[order]
        solved_args = solved_args[order]
    return vals, args


def _flight(values: np.ndarray, delta: float, w: int):
    """Raw min-plus flight; returns (new values, source nodes, windings)."""
    n = values.size
    two_delta = 2.0 * delta
    shift = w * n

    def cost(rows, cols):
        d = (rows - cols + shift) / n
        return values[cols % n] + d * d / two_delta

    new, col = _monotone_row_minima(cost, n, (2 * w + 1) * n)
    src = col % n
    winding = col // n - w
    if np.any(np.abs(winding) >= w):
        raise WindingTruncationError(
            f"winner reached winding {int(np.abs(winding).max())} with W_max={w}"
        )
    return new, src, winding


def hopf_lax_step(phi: GridProfile, delta: float, w_max: int | None = None,
                  normalize: bool = True):
    """Free flight of duration ``delta``: ``min_{j,m} phi(y_j) + (x_i - y_j - m)^2 / (2 delta)``.

    Parameters
    ----------
    phi : GridProfile
        Potential at the start of the flight.
    delta : float
        Flight duration, positive.
    w_max : int, optional
        Winding search half-width; defaults to :func:`winding_bound`.
    normalize : bool
        Subtract the mean of the result.

    Returns
    -------
    (GridProfile, ArgminRecord)
    """
    if delta <= 0:
        raise ValueError("flight duration must be positive")
    vals = phi.values
    w = winding_bound(vals, delta) if w_max is None else int(w_max)
    new, src, winding = _flight(vals, delta, w)
    if normalize:
        new = new - new.mean()
    src.setflags(write=False)
    winding.setflags(write=False)
    return GridProfile(new, POTENTIAL), ArgminRecord(float(delta), src, winding, w)


def apply_kick(phi: GridProfile, F: GridProfile, normalize: bool = True) -> GridProfile:
    if phi.n != F.n:
        raise ValueError(f"grid size mismatch: {phi.n} vs {F.n}")
    out = phi.values + F.values
    if normalize:
        out = out - out.mean()
    return GridProfile(out, POTENTIAL)


def derivative_field(phi: GridProfile) -> GridProfile:
    """Forward differences ``u_i = n (phi_{i+1} - phi_i)``: cell averages of ``phi_x``."""
    a = phi.values
    u = phi.n * (np.roll(a, -1) - a)
    return GridProfile(u - u.mean(), VELOCITY)


@dataclass
class SemiconcavityReport:
    passed: bool
    bound: float
    worst_node: int
    worst_excess: float


def semiconcavity_check(phi: GridProfile, delta: float, tol: float = 1e-10) -> SemiconcavityReport:
    """Centered second differences of a flight output must not exceed ``h^2 / delta``."""
    a = phi.values
    h = 1.0 / phi.n
    second = np.roll(a, -1) - 2.0 * a + np.roll(a, 1)
    bound = h * h / delta
    excess = second - bound
    worst = int(np.argmax(excess))
    return SemiconcavityReport(bool(excess[worst] <= tol), bound, worst, float(excess[worst]))


@dataclass(eq=False)
class Trajectory:
    """Output of :func:`evolve`.

    ``steps`` lists flights and kicks in time order.  Snapshots are taken at
    step boundaries (after any kick at that boundary) and hold mean-normalized
    potentials; ``offsets`` accumulate the subtracted means so the raw
    solution is ``phi + offset``.
    """

    start: SolverState
    steps: list = field(default_factory=list)
    times: list = field(default_factory=list)
    phis: list = field(default_factory=list)
    offsets: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.start.n

    @property
    def t_start(self) -> float:
        return self.start.time

    @property
    def t_end(self) -> float:
        return self.times[-1]

    @property
    def history(self) -> tuple:
        return tuple(self.start.history) + tuple(self.steps)

    def snapshot_index(self, t: float) -> int:
        times = np.asarray(self.times)
        k = int(np.argmin(np.abs(times - t)))
        if abs(times[k] - t) > TIME_TOL:
            raise KeyError(f"no snapshot at t={t}")
        return k

    def phi_at(self, t: float) -> GridProfile:
        return GridProfile(self.phis[self.snapshot_index(t)], POTENTIAL)

    def u_at(self, t: float) -> GridProfile:
        return derivative_field(self.phi_at(t))

    def raw_phi_at(self, t: float) -> np.ndarray:
        k = self.snapshot_index(t)
        return self.phis[k] + self.offsets[k]

    def state_at(self, t: float) -> SolverState:
        k = self.snapshot_index(t)
        steps = [s for s in self.steps if _step_end(s) <= t + TIME_TOL]
        return SolverState(self.times[k], GridProfile(self.phis[k], POTENTIAL),
                           tuple(self.start.history) + tuple(steps), self.offsets[k])

    @property
    def final(self) -> SolverState:
        return self.state_at(self.t_end)

    def flights(self):
        return [s for s in self.steps if isinstance(s, FlightStep)]

    def kicks(self):
        return [s for s in self.steps if isinstance(s, KickStep)]


def _step_end(step) -> float:
    return step.t1 if isinstance(step, FlightStep) else step.t


def evolve(state: SolverState, horizon: float, path: ForcingPath | None = None,
           substeps: int = 4, basis: KickBasis | None = None, stride: int = 1,
           consumer: str | None = None) -> Trajectory:
    """Alternate free flights and kicks from ``state.time`` up to ``horizon``.

    Each kick interval (length ``path.dt``, or 1 without forcing) is split into
    ``substeps`` flights; the kick for time ``j*dt`` is applied at the end of
    the flight arriving there.  Snapshots are kept every ``stride`` flights and
    always at the final time.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if horizon <= state.time + TIME_TOL:
        raise ValueError("horizon must exceed the current time")
    dt = path.dt if path is not None else 1.0
    j0 = state.time / dt
    j1 = horizon / dt
    if abs(j0 - round(j0)) > 1e-9 or abs(j1 - round(j1)) > 1e-9:
        raise ValueError("start time and horizon must sit on the kick grid")
    j0, j1 = int(round(j0)), int(round(j1))
    if path is not None and path.n_kicks is not None and path.n_kicks < j1:
        raise ForcingExhaustedError(f"forcing covers {path.n_kicks} kicks, need {j1}")
    n = state.n
    if path is not None:
        if basis is None:
            basis = KickBasis(n, DEFAULT_BASIS[: path.law.K])
        if basis.K != path.law.K or basis.n != n:
            raise ValueError("kick basis does not match the forcing law or grid")

    traj = Trajectory(state)
    phi = state.phi.values.copy()
    offset = state.offset
    traj.times.append(state.time)
    traj.phis.append(phi.copy())
    traj.offsets.append(offset)
    delta = dt / substeps
    count = 0
    for j in range(j0 + 1, j1 + 1):
        t_base = (j - 1) * dt
        for k in range(substeps):
            t0 = t_base + k * delta
            t1 = j * dt if k == substeps - 1 else t_base + (k + 1) * delta
            w = winding_bound(phi, delta)
            new, src, wind = _flight(phi, delta, w)
            m = new.mean()
            phi = new - m
            offset += m
            src.setflags(write=False)
            wind.setflags(write=False)
            traj.steps.append(FlightStep(t0, t1, ArgminRecord(delta, src, wind, w), m))
            if k == substeps - 1 and path is not None:
                c = path.coefficients(j, consumer)
                pot = c @ basis.potentials
                pot.setflags(write=False)
                phi = phi + pot
                m = phi.mean()
                phi = phi - m
                offset += m
                traj.steps.append(KickStep(t1, j, c, pot, m))
            count += 1
            if count % stride == 0 or (j == j1 and k == substeps - 1):
                traj.times.append(t1)
                traj.phis.append(phi.copy())
                traj.offsets.append(offset)
    return traj
