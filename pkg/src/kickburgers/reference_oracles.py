"""Slow, independent solvers used to validate the variational solver.

None of these share code with the fast paths beyond the grid type:

* :func:`brute_force_hopf_lax` -- exhaustive min-plus over all sources and windings;
* :func:`godunov_evolve` -- first-order finite-volume Godunov scheme for ``u``;
* :func:`viscous_evolve` -- viscous Hamilton-Jacobi by splitting (upwind
  Hamiltonian step plus exact spectral heat step).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .circle_field import POTENTIAL, VELOCITY, GridProfile
from .forcing import DEFAULT_BASIS, ForcingPath, KickBasis
from .variational_solver import ArgminRecord

__all__ = [
    "OracleReport",
    "ViscousInstabilityError",
    "brute_force_hopf_lax",
    "godunov_evolve",
    "viscous_evolve",
    "append_reports",
    "shock_profile",
    "cross_solver_check",
    "viscous_ladder",
]

log = logging.getLogger(__name__)


@dataclass
class OracleReport:
    oracle: str
    norm: str
    discrepancy: float
    tolerance: float
    passed: bool
    detail: str = ""

    def __post_init__(self):
        if self.discrepancy < 0:
            raise ValueError("discrepancy must be nonnegative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def append_reports(path, reports):
    """Append reports to a JSON-lines audit file."""
    with open(path, "a", encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


class ViscousInstabilityError(RuntimeError):
    pass


def brute_force_hopf_lax(phi: GridProfile, delta: float, w_max: int, normalize: bool = True,
                         chunk: int = 256):
    """Exhaustive flight: every endpoint against every source and winding ``|m| <= w_max``.

    Ties go to the leftmost source in the universal cover.
    """
    vals = phi.values
    n = vals.size
    windings = np.arange(-w_max, w_max + 1)
    # unrolled source index j + m*n, increasing along the flattened axis
    m_grid, j_grid = np.meshgrid(windings, np.arange(n), indexing="ij")
    m_flat = m_grid.ravel()
    j_flat = j_grid.ravel()
    src_vals = vals[j_flat]
    best = np.empty(n)
    best_k = np.empty(n, dtype=np.int64)
    for lo in range(0, n, chunk):
        i = np.arange(lo, min(lo + chunk, n))[:, None]
        d = (i - j_flat[None, :] - m_flat[None, :] * n) / n
        total = src_vals[None, :] + d * d / (2.0 * delta)
        k = np.argmin(total, axis=1)  # first occurrence = leftmost
        best_k[lo:lo + i.shape[0]] = k
        best[lo:lo + i.shape[0]] = total[np.arange(i.shape[0]), k]
    if normalize:
        best = best - best.mean()
    rec = ArgminRecord(float(delta), j_flat[best_k].copy(), m_flat[best_k].copy(), int(w_max))
    return GridProfile(best, POTENTIAL), rec


def _godunov_flux(ul, ur):
    # exact Riemann flux for f(u) = u^2/2
    return np.maximum(np.maximum(ul, 0.0) ** 2, np.minimum(ur, 0.0) ** 2) / 2.0


def godunov_evolve(u0: GridProfile, horizon: float, path: ForcingPath | None = None,
                   basis: KickBasis | None = None, cfl: float = 0.9, t0: float = 0.0,
                   sample_times=None):
    """Finite-volume Godunov run of ``u_t + (u^2/2)_x = (F)_x``.

    Cell ``i`` covers ``[i/n, (i+1)/n]``.  Kicks add the forward difference of
    the kick potential, i.e. its exact cell averages of ``F_x``.

    Returns
    -------
    list of (t, GridProfile)
        The state at ``t0``, after every kick, and at any ``sample_times``.
    """
    u = np.array(u0.values, dtype=float)
    n = u.size
    dx = 1.0 / n
    dt_kick = path.dt if path is not None else 1.0
    if path is not None and basis is None:
        basis = KickBasis(n, DEFAULT_BASIS[: path.law.K])
    stops = set()
    j = int(math.floor(t0 / dt_kick + 1e-9)) + 1
    while j * dt_kick < horizon - 1e-12:
        stops.add(round(j * dt_kick, 12))
        j += 1
    stops.add(round(horizon, 12))
    for s in sample_times or ():
        stops.add(round(float(s), 12))
    out = [(t0, GridProfile(u.copy(), VELOCITY))]
    t = t0
    reductions = 0
    for stop in sorted(s for s in stops if s > t0 + 1e-12):
        while t < stop - 1e-13:
            vmax = np.max(np.abs(u))
            dt = stop - t
            if vmax > 0 and dt > cfl * dx / vmax:
                dt = cfl * dx / vmax
                reductions += 1
            flux = _godunov_flux(u, np.roll(u, -1))
            u = u - dt / dx * (flux - np.roll(flux, 1))
            t = stop if dt == stop - t else t + dt
        jk = stop / dt_kick
        if path is not None and abs(jk - round(jk)) < 1e-9 and round(jk) >= 1:
            c = path.coefficients(int(round(jk)))
            pot = c @ basis.potentials
            u = u + n * (np.roll(pot, -1) - pot)
        out.append((stop, GridProfile(u.copy(), VELOCITY)))
    log.debug("godunov: %d CFL-limited steps", reductions)
    return out


def _hamiltonian_step(phi, dt, n):
    # Godunov numerical Hamiltonian for H(p) = p^2/2 (convex, minimum at 0)
    pm = n * (phi - np.roll(phi, 1))
    pp = n * (np.roll(phi, -1) - phi)
    h = np.maximum(np.maximum(pm, 0.0) ** 2, np.minimum(pp, 0.0) ** 2) / 2.0
    return phi - dt * h


def viscous_evolve(phi0: GridProfile, nu: float, horizon: float, path: ForcingPath | None = None,
                   basis: KickBasis | None = None, cfl: float = 0.5, sample_times=None):
    """Viscous Hamilton-Jacobi ``phi_t + phi_x^2/2 = nu phi_xx`` plus kicks.

    Lie splitting per step: explicit upwind Hamiltonian update under a CFL
    limit, then the exact Fourier heat propagator ``exp(-nu k^2 dt)``.

    Returns
    -------
    list of (t, GridProfile)
        Mean-normalized potentials at ``t=0``, after each kick and at any
        ``sample_times``.
    """
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    phi = np.array(phi0.values, dtype=float)
    n = phi.size
    dx = 1.0 / n
    dt_kick = path.dt if path is not None else 1.0
    if path is not None and basis is None:
        basis = KickBasis(n, DEFAULT_BASIS[: path.law.K])
    wave = 2.0 * np.pi * np.fft.rfftfreq(n, d=dx)
    stops = {round(j * dt_kick, 12) for j in range(1, int(math.floor(horizon / dt_kick + 1e-9)) + 1)}
    stops.add(round(horizon, 12))
    for s in sample_times or ():
        stops.add(round(float(s), 12))
    scale0 = max(np.max(np.abs(phi)), 1.0)
    out = [(0.0, GridProfile(phi - phi.mean(), POTENTIAL))]
    t = 0.0
    for stop in sorted(stops):
        while t < stop - 1e-13:
            slope = n * np.max(np.abs(np.roll(phi, -1) - phi))
            dt = stop - t
            if slope > 0:
                dt = min(dt, cfl * dx / slope)
            phi = _hamiltonian_step(phi, dt, n)
            phi = np.fft.irfft(np.fft.rfft(phi) * np.exp(-nu * wave**2 * dt), n)
            t = stop if dt == stop - t else t + dt
            phi = phi - phi.mean()
            if not np.all(np.isfinite(phi)) or np.max(np.abs(phi)) > 1e6 * scale0:
                raise ViscousInstabilityError(
                    f"viscous run blew up at t={t:.4g} (nu={nu}, n={n}, max|phi|={np.max(np.abs(phi)):.3g})"
                )
        jk = stop / dt_kick
        if path is not None and abs(jk - round(jk)) < 1e-9 and round(jk) >= 1:
            c = path.coefficients(int(round(jk)))
            phi = phi + c @ basis.potentials
            phi = phi - phi.mean()
        out.append((stop, GridProfile(phi, POTENTIAL)))
    return out


# -- packaged comparisons ------------------------------------------------------------

def shock_profile(n: int, amplitude: float = 1.0) -> GridProfile:
    """Potential of ``u0 = amplitude * sin(2 pi x)``; a shock forms at ``t = 1/(2 pi amplitude)``."""
    x = np.arange(n) / n
    return GridProfile(-amplitude * np.cos(2.0 * np.pi * x) / (2.0 * np.pi), POTENTIAL)


def _inviscid(phi0, horizon, path, basis, substeps):
    from .variational_solver import SolverState, evolve

    return evolve(SolverState(0.0, phi0), horizon, path, substeps, basis)


def cross_solver_check(n: int, horizon: float = 2.0, path: ForcingPath | None = None,
                       amplitude: float = 1.0, substeps: int = 4, tol: float = 0.05) -> OracleReport:
    """L1 distance at ``horizon`` between the Lax-Oleinik velocity and a Godunov run."""
    from .variational_solver import derivative_field

    phi0 = shock_profile(n, amplitude)
    basis = KickBasis(n, DEFAULT_BASIS[: path.law.K]) if path is not None else None
    lo = derivative_field(_inviscid(phi0, horizon, path, basis, substeps).phi_at(horizon)).values
    gd = godunov_evolve(derivative_field(phi0), horizon, path, basis)[-1][1].values
    gd = gd - gd.mean()
    err = float(np.mean(np.abs(lo - gd)))
    return OracleReport("godunov", "L1", err, tol, err <= tol, f"n={n} t={horizon}")


def viscous_ladder(n: int, nus=(1e-2, 1e-3, 1e-4), horizon: float = 2.0,
                   path: ForcingPath | None = None, amplitude: float = 1.0, substeps: int = 4):
    """L1 distances of viscous velocities from the inviscid one, per viscosity.

    The report for ``nus[k]`` passes when its distance is below the one for
    ``nus[k-1]``.
    """
    from .variational_solver import derivative_field

    phi0 = shock_profile(n, amplitude)
    basis = KickBasis(n, DEFAULT_BASIS[: path.law.K]) if path is not None else None
    ref = derivative_field(_inviscid(phi0, horizon, path, basis, substeps).phi_at(horizon)).values
    reports, prev = [], math.inf
    for nu in nus:
        v = viscous_evolve(phi0, nu, horizon, path, basis)[-1][1]
        d = float(np.mean(np.abs(derivative_field(v).values - ref)))
        reports.append(OracleReport("viscous", "L1", d, prev, d < prev, f"nu={nu:g} n={n}"))
        prev = d
    return reports
