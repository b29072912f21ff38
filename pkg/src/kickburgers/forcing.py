"""Random kick potentials and replayable noise streams.

Kicks are ``F_j(x) = sum_k c_k(j) F^k(x)`` on a fixed smooth basis.  In kicked
mode they arrive at integer times with i.i.d. coefficient vectors; in white
mode they arrive every ``dt`` with Gaussian increments of variance ``dt`` per
unit scale, a splitting approximation of a white-in-time force.

Coefficient streams are block-seeded: the block holding kick ``j`` is drawn
from a Philox generator keyed by ``(seed, member, tag, block)``, so any kick
can be regenerated in isolation and distinct members never share a stream.
"""

from __future__ import annotations

import csv
import io
import re
import threading
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .circle_field import POTENTIAL, GridProfile, grid

__all__ = [
    "DEFAULT_BASIS",
    "DEFAULT_SIGMA",
    "KickBasis",
    "KickLaw",
    "ForcingPath",
    "EmbeddingReport",
    "kicked_path",
    "white_kick_schedule",
    "sample_kick",
    "kick_potential",
    "verify_embedding",
]

DEFAULT_BASIS = ("cos1", "sin1", "cos2", "sin2")
DEFAULT_SIGMA = (0.1, 0.1, 0.05, 0.05)
BLOCK = 64

_DESCRIPTOR = re.compile(r"^(cos|sin)(\d+)$")


def _parse(desc: str):
    m = _DESCRIPTOR.match(desc.strip())
    if not m or int(m.group(2)) < 1:
        raise ValueError(f"bad basis descriptor {desc!r}; expected e.g. 'cos1', 'sin2'")
    return m.group(1), int(m.group(2))


class KickBasis:
    """Trigonometric potentials ``cos(2 pi k x)`` / ``sin(2 pi k x)`` sampled on a grid.

    Parameters
    ----------
    n : int
        Grid size.
    descriptors : sequence of str
        Tokens such as ``"cos1"`` or ``"sin2"``.
    """

    def __init__(self, n: int, descriptors=DEFAULT_BASIS):
        self.n = int(n)
        self.descriptors = tuple(descriptors)
        if not self.descriptors:
            raise ValueError("kick basis needs at least one potential")
        self._terms = [_parse(d) for d in self.descriptors]
        x = grid(self.n)
        pots = np.array([self._eval_term(t, x) for t in self._terms])
        pots.setflags(write=False)
        self.potentials = pots

    @property
    def K(self) -> int:
        return len(self._terms)

    @staticmethod
    def _eval_term(term, x):
        fn, k = term
        arg = 2.0 * np.pi * k * np.asarray(x, dtype=float)
        return np.cos(arg) if fn == "cos" else np.sin(arg)

    def evaluate(self, x) -> np.ndarray:
        """Basis values at arbitrary positions; shape ``(K,) + shape(x)``."""
        return np.array([self._eval_term(t, x) for t in self._terms])

    def gradient(self, x) -> np.ndarray:
        out = []
        for fn, k in self._terms:
            arg = 2.0 * np.pi * k * np.asarray(x, dtype=float)
            w = 2.0 * np.pi * k
            out.append(-w * np.sin(arg) if fn == "cos" else w * np.cos(arg))
        return np.array(out)

    def lipschitz(self, coeffs) -> float:
        """Upper bound on the Lipschitz constant of ``sum c_k F^k``."""
        ks = np.array([k for _, k in self._terms], dtype=float)
        return float(np.sum(np.abs(coeffs) * 2.0 * np.pi * ks))

    def profiles(self):
        return [GridProfile(p, POTENTIAL) for p in self.potentials]

    def labels(self):
        return [f"{fn}(2*pi*{k}*x)" for fn, k in self._terms]

    def __repr__(self):
        return f"KickBasis(n={self.n}, descriptors={list(self.descriptors)})"


@dataclass(frozen=True)
class KickLaw:
    """Independent centered Gaussian coefficients with per-mode scales."""

    sigma: tuple = DEFAULT_SIGMA

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigma)
        if any(s < 0 or not np.isfinite(s) for s in sig):
            raise ValueError("kick scales must be finite and nonnegative")
        object.__setattr__(self, "sigma", sig)

    @property
    def K(self) -> int:
        return len(self.sigma)

    @property
    def degenerate(self) -> bool:
        return not any(self.sigma)

    @property
    def absolutely_continuous(self) -> bool:
        return all(s > 0 for s in self.sigma)


def _tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


@dataclass(eq=False)
class ForcingPath:
    """A seeded, lazily generated sequence of kick coefficient vectors.

    Kick ``j`` (``j = 1, 2, ...``) acts at time ``j * dt``.  Coupled runs must
    share one instance; the block cache is guarded so concurrent readers see
    identical coefficients.
    """

    law: KickLaw = field(default_factory=KickLaw)
    seed: int = 0
    member: int = 0
    mode: str = "kicked"
    dt: float = 1.0
    horizon: float | None = None
    tag: str = "forcing"
    audit: bool = False

    def __post_init__(self):
        if self.mode not in ("kicked", "white"):
            raise ValueError(f"unknown forcing mode {self.mode!r}")
        if self.mode == "kicked" and self.dt != 1.0:
            raise ValueError("kicked mode uses unit kick spacing")
        if self.dt <= 0:
            raise ValueError("kick spacing must be positive")
        self._cache: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()
        self.audit_log: list[tuple[str, int, tuple]] = []

    @property
    def scale(self) -> np.ndarray:
        sig = np.asarray(self.law.sigma)
        return sig * np.sqrt(self.dt) if self.mode == "white" else sig

    @property
    def n_kicks(self) -> int | None:
        if self.horizon is None:
            return None
        return int(round(self.horizon / self.dt))

    def kick_time(self, j: int) -> float:
        return j * self.dt

    def _block(self, b: int) -> np.ndarray:
        blk = self._cache.get(b)
        if blk is not None:
            return blk
        # generated outside the lock; any racing duplicate is bit-identical
        ss = np.random.SeedSequence([int(self.seed), int(self.member), _tag_key(self.tag), int(b)])
        gen = np.random.Generator(np.random.Philox(ss))
        blk = gen.standard_normal((BLOCK, self.law.K)) * self.scale
        blk.setflags(write=False)
        with self._lock:
            return self._cache.setdefault(b, blk)

    def coefficients(self, j: int, consumer: str | None = None) -> np.ndarray:
        if j < 1:
            raise IndexError(f"kick indices start at 1, got {j}")
        if self.n_kicks is not None and j > self.n_kicks:
            raise IndexError(f"kick {j} beyond forcing horizon ({self.n_kicks} kicks)")
        c = self._block((j - 1) // BLOCK)[(j - 1) % BLOCK]
        if self.audit and consumer is not None:
            with self._lock:
                self.audit_log.append((consumer, j, tuple(c.tolist())))
        return c

    def replay(self) -> "ForcingPath":
        """A fresh path with the same stream and an empty cache."""
        return ForcingPath(
            self.law, self.seed, self.member, self.mode, self.dt, self.horizon, self.tag, self.audit
        )

    def to_csv(self, j_max: int | None = None) -> str:
        j_max = j_max if j_max is not None else self.n_kicks
        if j_max is None:
            raise ValueError("need j_max for an unbounded path")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["j", "t"] + [f"c{k + 1}" for k in range(self.law.K)])
        for j in range(1, j_max + 1):
            w.writerow([j, repr(self.kick_time(j))] + [repr(float(v)) for v in self.coefficients(j)])
        return buf.getvalue()


def kicked_path(seed: int, horizon: float | None = None, law: KickLaw | None = None,
                member: int = 0, tag: str = "forcing", audit: bool = False) -> ForcingPath:
    return ForcingPath(law or KickLaw(), seed, member, "kicked", 1.0, horizon, tag, audit)


def white_kick_schedule(dt: float, horizon: float, seed: int, law: KickLaw | None = None,
                        member: int = 0, tag: str = "forcing") -> ForcingPath:
    """Kicks every ``dt`` with N(0, sigma_k^2 dt) coefficients."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt > 0.1:
        raise ValueError("white-force splitting needs dt <= 0.1")
    return ForcingPath(law or KickLaw(), seed, member, "white", float(dt), horizon, tag)


def sample_kick(path: ForcingPath, j: int) -> np.ndarray:
    return path.coefficients(j)


def kick_potential(c, basis: KickBasis) -> GridProfile:
    """Pointwise combination ``sum_k c_k F^k`` on the basis grid."""
    c = np.asarray(c, dtype=float)
    if c.shape != (basis.K,):
        raise ValueError(f"coefficient vector of length {c.size} for a basis of size {basis.K}")
    return GridProfile(c @ basis.potentials, POTENTIAL)


@dataclass
class EmbeddingReport:
    passed: bool
    reason: str = ""
    witnesses: list = field(default_factory=list)


def verify_embedding(basis: KickBasis, eps: float = 1e-3) -> EmbeddingReport:
    """Grid test that ``x -> (F^1(x), ..., F^K(x))`` is an embedding.

    Fails when two nodes more than ``2/n`` apart land within ``eps`` of each
    other, or when the discrete derivative vector is shorter than ``eps``.
    Witnesses are node positions.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = basis.n
    pts = basis.potentials.T
    x = grid(n)

    deriv = n * (np.roll(pts, -1, axis=0) - pts)
    speed = np.linalg.norm(deriv, axis=1)
    flat = np.flatnonzero(speed < eps)

    pairs = cKDTree(pts).query_pairs(eps, output_type="ndarray")
    if len(pairs):
        sep = np.abs(pairs[:, 0] - pairs[:, 1])
        sep = np.minimum(sep, n - sep)
        pairs = pairs[sep > 2]
    if len(pairs):
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        wit = [(float(x[a]), float(x[b])) for a, b in pairs[order][:10]]
        return EmbeddingReport(False, "not injective", wit)
    if flat.size:
        return EmbeddingReport(False, "not an immersion", [float(x[i]) for i in flat[:10]])
    return EmbeddingReport(True)
