"""Periodic grid fields on the circle S^1 = R/Z.

A :class:`GridProfile` holds ``n`` samples at ``x_i = i/n``.  Potentials
(``kind="potential"``) are solutions of the Hamilton-Jacobi equation and are
only meaningful up to an additive constant; velocities (``kind="velocity"``)
are their space derivatives and carry zero mean.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

__all__ = [
    "POTENTIAL",
    "VELOCITY",
    "GridProfile",
    "CircleSubset",
    "grid",
    "lp_norm",
    "total_variation",
    "quotient_sup_distance",
    "circle_distance",
    "circle_diameter",
    "mean_normalize",
]

POTENTIAL = "potential"
VELOCITY = "velocity"
MIN_GRID = 8


def grid(n: int) -> np.ndarray:
    """Node positions ``i/n`` for ``i = 0..n-1``."""
    return np.arange(n) / n


@dataclass(frozen=True, eq=False)
class GridProfile:
    """Samples of a periodic field on a uniform grid.

    The sample array is copied and frozen on construction.
    """

    values: np.ndarray
    kind: str = POTENTIAL
    n: int = field(init=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.ndim != 1:
            raise ValueError("profile values must be one-dimensional")
        if vals.size < MIN_GRID:
            raise ValueError(f"grid size {vals.size} below minimum {MIN_GRID}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("profile contains non-finite samples")
        if self.kind not in (POTENTIAL, VELOCITY):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == VELOCITY:
            scale = np.max(np.abs(vals))
            if abs(vals.mean()) > 1e-12 * max(scale, 1e-300) and scale > 0:
                raise ValueError("velocity-like profile must have zero mean")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "n", vals.size)

    @classmethod
    def from_function(cls, f, n: int, kind: str = POTENTIAL) -> "GridProfile":
        return cls(f(grid(n)), kind)

    @property
    def x(self) -> np.ndarray:
        return grid(self.n)

    def _combine(self, other, op):
        if isinstance(other, GridProfile):
            _check_same_size(self, other)
            other = other.values
        out = op(self.values, other)
        if self.kind == VELOCITY:
            # rounding in the difference of two zero-mean fields
            out = out - out.mean()
        return GridProfile(out, self.kind)

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __len__(self):
        return self.n

    # -- serialization -------------------------------------------------
    def to_json(self) -> str:
        return json.dumps(
            {"n": self.n, "kind": self.kind, "values": [float(v) for v in self.values]}
        )

    @classmethod
    def from_json(cls, text: str) -> "GridProfile":
        rec = json.loads(text)
        prof = cls(np.asarray(rec["values"], dtype=float), rec["kind"])
        if prof.n != rec["n"]:
            raise ValueError("record size does not match its values")
        return prof

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x", "value"])
        for xi, vi in zip(self.x, self.values):
            writer.writerow([repr(float(xi)), repr(float(vi))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, kind: str = POTENTIAL) -> "GridProfile":
        rows = list(csv.reader(io.StringIO(text)))
        return cls(np.array([float(r[1]) for r in rows[1:]]), kind)


def _check_same_size(a: GridProfile, b: GridProfile):
    if a.n != b.n:
        raise ValueError(f"grid size mismatch: {a.n} vs {b.n}")


def _values(v) -> np.ndarray:
    return v.values if isinstance(v, GridProfile) else np.asarray(v, dtype=float)


@dataclass(frozen=True, eq=False)
class CircleSubset:
    """A finite nonempty subset of [0, 1), stored sorted and deduplicated."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.unique(np.mod(np.asarray(self.points, dtype=float).ravel(), 1.0))
        if pts.size == 0:
            raise ValueError("circle subset must be nonempty")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.size


def lp_norm(v, p: float) -> float:
    """Rectangle-rule L_p norm on the unit circle; ``p=np.inf`` gives max |v|."""
    if p < 1:
        raise ValueError(f"L_p norm needs p >= 1, got {p}")
    a = np.abs(_values(v))
    if np.isinf(p):
        return float(a.max())
    if p == 1:
        return float(a.mean())
    scale = a.max()
    if scale == 0:
        return 0.0
    # rescale so large p does not overflow
    return float(scale * np.mean((a / scale) ** p) ** (1.0 / p))


def total_variation(u) -> float:
    """Sum of periodic absolute increments, the discrete homogeneous W^{1,1} norm."""
    a = _values(u)
    return float(np.abs(np.roll(a, -1) - a).sum())


def quotient_sup_distance(phi, psi) -> float:
    """Sup distance modulo additive constants: ``inf_K max|phi - psi - K|``."""
    a, b = _values(phi), _values(psi)
    if a.shape != b.shape:
        raise ValueError(f"grid size mismatch: {a.size} vs {b.size}")
    w = a - b
    return float((w.max() - w.min()) / 2.0)


def circle_distance(a, b):
    """Geodesic distance on R/Z, elementwise."""
    d = np.abs(np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), 1.0))
    return np.minimum(d, 1.0 - d)


def circle_diameter(z) -> float:
    """``1 - a(Z)`` with ``a(Z)`` the largest gap between cyclically consecutive points."""
    if not isinstance(z, CircleSubset):
        z = CircleSubset(np.asarray(list(z) if isinstance(z, Iterable) else [z]))
    pts = z.points
    if pts.size == 1:
        return 0.0
    gaps = np.diff(np.append(pts, pts[0] + 1.0))
    return float(1.0 - gaps.max())


def mean_normalize(phi: GridProfile) -> GridProfile:
    """Subtract the discrete mean."""
    a = phi.values
    return GridProfile(a - a.mean(), phi.kind)
