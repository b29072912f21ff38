"""Backward minimisers bunch together as the lag grows.

Run with ``python demos/minimiser_demo.py``.  Backtracks a few minimisers
from a kicked run, checks the value identity along them, then prints how
the set of starting points shrinks and how the midpoint gap behaves.
"""
import numpy as np

from kickburgers.contraction_lab import random_fourier, sawtooth
from kickburgers.forcing import kicked_path
from kickburgers.minimiser_lab import (
    action_of_curve,
    backtrack_minimiser,
    midpoint_gap_experiment,
    omega_set,
)
from kickburgers.variational_solver import SolverState, evolve

n, horizon = 512, 24
rng = np.random.default_rng(1)
phi0 = random_fourier(0.5, 8, 1.5)(rng, n)
path = kicked_path(5, horizon)
traj = evolve(SolverState(0.0, phi0), horizon, path, substeps=4)

raw_end, raw_start = traj.raw_phi_at(horizon), traj.raw_phi_at(0.0)
for x in (0, n // 3, 2 * n // 3):
    c = backtrack_minimiser(traj, x, 0.0)
    lhs = raw_end[x]
    rhs = action_of_curve(c, path) + raw_start[c.nodes[0] % n]
    print(f"x = {x / n:.3f}: start {c.positions[0]:.3f}, value identity error {abs(lhs - rhs):.1e}")

print("\nset of time-s positions of all minimisers ending at t = 24")
for s in (23.0, 20.0, 16.0, 12.0, 8.0, 4.0):
    om = omega_set(traj, s)
    print(f"  s = {s:4.1f}: {len(om):4d} points, diameter {om.diameter:.4f}")

res = midpoint_gap_experiment(phi0, sawtooth(3)(rng, n), np.arange(1, 13) * 0.5, [0, 1])
for r in res:
    print(f"\nmidpoint gap, seed {r.series.seed} ({r.note}); replay passed: {r.replay_passed}")
    print("  " + " ".join(f"{v:.3f}" for v in r.series.values))
