"""Command-line experiment runner.

Usage::

    kickburgers SUBCOMMAND [--config PATH] [--seed S] [--workers W] [--out DIR]
                           [--svg] [--override-assumptions] [--set SECTION.KEY=VALUE ...]

Exit codes: 0 ok, 2 configuration error, 3 oracle failure, 4 incomplete run.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import sys
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .circle_field import GridProfile, lp_norm, total_variation
from .contraction_lab import (
    PHI_METRIC,
    DistanceSeries,
    EnsembleSpec,
    InsufficientDecayError,
    coupled_distance_series,
    coupled_run,
    dirac,
    dual_lipschitz_series,
    fit_exponential,
    random_fourier,
    sawtooth,
    stationary_ensemble,
    summaries_agree,
    zero_profile,
)
from .forcing import DEFAULT_BASIS, DEFAULT_SIGMA, ForcingPath, KickBasis, KickLaw, verify_embedding
from .minimiser_lab import midpoint_gap_experiment, omega_decay_experiment
from .parallel import pmap
from .reference_oracles import (
    OracleReport,
    append_reports,
    brute_force_hopf_lax,
    cross_solver_check,
    viscous_ladder,
)
from .variational_solver import SolverState, derivative_field, evolve, hopf_lax_step, winding_bound

log = logging.getLogger("kickburgers")

KINDS = ("simulate", "contract", "omega", "midpoint-gap", "stationary", "dual-lipschitz", "oracle-check")
EXIT_OK, EXIT_CONFIG, EXIT_ORACLE, EXIT_INCOMPLETE = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# -- configuration ---------------------------------------------------------------------

# field name -> config section
_SECTIONS = {
    "kind": "experiment", "seeds": "experiment", "horizon": "experiment", "substeps": "experiment",
    "p": "experiment", "workers": "experiment",
    "n": "grid",
    "mode": "forcing", "dt": "forcing", "sigma": "forcing", "basis": "forcing",
    "phi0": "initial", "phibar0": "initial", "ic_list": "initial",
    "s": "omega", "step": "omega",
    "extra_factor": "midpoint",
    "members": "ensemble", "burn_in": "ensemble", "samples": "ensemble",
    "oracle_n": "oracle", "oracle_profiles": "oracle",
    "out": "output", "svg": "output",
}


@dataclass
class ExperimentConfig:
    kind: str = "simulate"
    seeds: tuple = (0,)
    horizon: float = 20.0
    substeps: int = 4
    p: tuple = (1.0,)
    workers: int = 1
    n: int = 256
    mode: str = "kicked"
    dt: float = 1.0
    sigma: tuple = DEFAULT_SIGMA
    basis: tuple = DEFAULT_BASIS
    phi0: str = "fourier"
    phibar0: str = "sawtooth"
    ic_list: tuple = ("zero", "fourier", "sawtooth")
    s: float = 1.0
    step: float = 0.25
    extra_factor: float = 2.0
    members: int = 16
    burn_in: float = 20.0
    samples: int = 20
    oracle_n: int = 256
    oracle_profiles: int = 20
    out: str = "out"
    svg: bool = False

    # -- serialization: flat keys in sections, floats via repr
    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for f in dataclasses.fields(self):
            sec = _SECTIONS[f.name]
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, f.name, _fmt(getattr(self, f.name)))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from None
        cfg = cls()
        known = {(sec, name) for name, sec in _SECTIONS.items()}
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                if (sec, key) not in known:
                    raise ConfigError(f"unknown config key [{sec}] {key}")
                cfg = cfg.with_value(key, raw)
        return cfg

    def with_value(self, key: str, raw: str) -> "ExperimentConfig":
        types = {f.name: f.type for f in dataclasses.fields(self)}
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        default = getattr(ExperimentConfig(), key)
        try:
            val = _parse_value(raw, default)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        return dataclasses.replace(self, **{key: val})

    def to_dict(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in dataclasses.fields(self)}

    def digest(self) -> str:
        """Hash of the settings that determine results (not workers, paths or plots)."""
        core = dataclasses.replace(self, workers=1, out="", svg=False)
        return hashlib.sha256(core.to_ini().encode()).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _parse_value(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected a boolean")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        proto = default[0] if default else ""
        if isinstance(proto, int):
            out = []
            for it in items:
                # "a-b" expands to an inclusive range
                if "-" in it[1:]:
                    a, b = it.split("-", 1) if not it.startswith("-") else it[1:].split("-", 1)
                    out.extend(range(int(a), int(b) + 1))
                else:
                    out.append(int(it))
            return tuple(out)
        if isinstance(proto, float):
            return tuple(float(x) for x in items)
        return tuple(items)
    return raw


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


# -- initial conditions -----------------------------------------------------------

def make_sampler(spec: str):
    """Sampler from a spec such as ``zero``, ``fourier:amplitude=0.5;modes=8``,
    ``sawtooth:teeth=4`` or ``cos:k=1;a=0.1``.  ``dirac:SPEC`` is accepted by
    the dual-Lipschitz experiment."""
    name, _, rest = spec.partition(":")
    if name.strip() == "dirac":
        return make_sampler(rest)
    kw = {}
    for part in filter(None, (x.strip() for x in rest.split(";"))):
        k, _, v = part.partition("=")
        try:
            kw[k.strip()] = float(v)
        except ValueError:
            raise ConfigError(f"bad initial condition {spec!r}") from None
    name = name.strip()
    try:
        if name == "zero":
            return zero_profile
        if name == "fourier":
            return random_fourier(kw.get("amplitude", 0.5), int(kw.get("modes", 8)), kw.get("decay", 1.5))
        if name == "sawtooth":
            return sawtooth(int(kw.get("teeth", 4)), kw.get("amplitude", 1.0))
        if name == "cos":
            return _CosProfile(int(kw.get("k", 1)), kw.get("a", 0.1))
    except TypeError as exc:
        raise ConfigError(f"bad initial condition {spec!r}: {exc}") from None
    raise ConfigError(f"unknown initial condition {spec!r}")


@dataclass(frozen=True)
class _CosProfile:
    k: int
    a: float

    def __call__(self, rng, n):
        return GridProfile(self.a * np.cos(2.0 * np.pi * self.k * np.arange(n) / n))


def initial_profile(spec: str, seed: int, role: str, n: int) -> GridProfile:
    ss = np.random.SeedSequence([int(seed), zlib.crc32(role.encode())])
    return make_sampler(spec)(np.random.default_rng(ss), n)


# -- validation ----------------------------------------------------------------------

@dataclass
class ValidationReport:
    passed: bool
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    witnesses: list = field(default_factory=list)

    def to_dict(self):
        return dataclasses.asdict(self)


def validate_config(cfg: ExperimentConfig) -> ValidationReport:
    """Check the standing assumptions and numerical feasibility of a config."""
    rep = ValidationReport(True)

    def err(msg):
        rep.errors.append(msg)
        rep.passed = False

    if cfg.kind not in KINDS:
        err(f"unknown experiment kind {cfg.kind!r}")
    for name in ("horizon", "substeps", "n", "dt", "members", "samples", "workers", "step",
                 "burn_in", "oracle_n", "oracle_profiles", "s", "extra_factor"):
        v = getattr(cfg, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            err(f"{name} must be positive, got {v!r}")
    if not cfg.seeds:
        err("seeds must be nonempty")
    if any(p < 1 for p in cfg.p) or not cfg.p:
        err("p values must be >= 1")
    if cfg.mode not in ("kicked", "white"):
        err(f"unknown forcing mode {cfg.mode!r}")
    if cfg.mode == "kicked" and cfg.dt != 1.0:
        err("kicked forcing uses dt = 1")
    if cfg.mode == "white" and cfg.dt > 0.1:
        err("white-force splitting needs dt <= 0.1")
    if cfg.dt > 0 and abs(cfg.horizon / cfg.dt - round(cfg.horizon / cfg.dt)) > 1e-9:
        err("horizon must be a multiple of the kick spacing")
    if len(cfg.sigma) != len(cfg.basis):
        err(f"{len(cfg.sigma)} kick scales for {len(cfg.basis)} basis potentials")
    for spec in (cfg.phi0, cfg.phibar0) + tuple(cfg.ic_list):
        try:
            make_sampler(spec)
        except ConfigError as exc:
            err(str(exc))
    if not rep.passed:
        return rep
    try:
        law = KickLaw(cfg.sigma)
        basis = KickBasis(cfg.n, cfg.basis)
    except ValueError as exc:
        err(str(exc))
        return rep
    emb = verify_embedding(basis)
    if not emb.passed:
        err(f"kick basis is not an embedding ({emb.reason})")
        rep.witnesses = emb.witnesses
    if law.degenerate:
        rep.warnings.append("degenerate forcing: Assumption support condition trivially met "
                            "but dynamics deterministic")
    elif not law.absolutely_continuous:
        rep.warnings.append("some kick scales are zero; the coefficient law is not absolutely continuous")
    # winding feasibility at a 6-sigma kick gradient
    delta = cfg.dt / cfg.substeps
    lip = 6.0 * basis.lipschitz(np.asarray(law.sigma) * (math.sqrt(cfg.dt) if cfg.mode == "white" else 1.0))
    w = math.ceil(delta * lip * 4.0 + 1.0 / cfg.n) + 1
    if (2 * w + 1) * cfg.n > 2**24:
        err(f"flight search of {(2 * w + 1) * cfg.n} columns is not feasible; raise substeps")
    if cfg.kind == "omega" and abs(cfg.s / delta - round(cfg.s / delta)) > 1e-9:
        err("omega start time s must be a flight boundary")
    if cfg.kind in ("omega", "midpoint-gap") and abs(cfg.step / delta - round(cfg.step / delta)) > 1e-9:
        err("time step must be a multiple of the flight duration")
    if cfg.kind == "stationary" and cfg.burn_in < 10 * cfg.dt * (1 if cfg.mode == "kicked" else 1 / cfg.dt):
        err("burn-in must cover at least 10 forcing correlation times")
    return rep


# -- output helpers -------------------------------------------------------------------

class Writer:
    """Collects artifacts under one directory and records their digests."""

    def __init__(self, out: str):
        self.out = out
        os.makedirs(out, exist_ok=True)
        self.files: dict[str, str] = {}

    def text(self, name: str, content: str):
        path = os.path.join(self.out, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)
        self.files[name] = hashlib.sha256(content.encode()).hexdigest()

    def json(self, name: str, obj):
        self.text(name, json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _csv_rows(header, rows) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in r))
    return "\n".join(lines) + "\n"


def svg_plot(series: list, title: str = "", logy: bool = False, width: int = 640, height: int = 400) -> str:
    """Self-contained SVG line chart of ``[(label, x, y), ...]``."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]
    pad = 50
    pts = []
    for label, x, y in series:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if logy:
            keep = y > 0
            x, y = x[keep], np.log10(y[keep])
        pts.append((label, x, y))
    allx = np.concatenate([p[1] for p in pts]) if pts else np.array([0.0, 1.0])
    ally = np.concatenate([p[2] for p in pts]) if pts else np.array([0.0, 1.0])
    if allx.size == 0:
        allx, ally = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>']
    for v, anchor in ((x0, "start"), (x1, "end")):
        out.append(f'<text x="{sx(v):.1f}" y="{height - pad + 16}" font-size="11" '
                   f'text-anchor="{anchor}">{v:.3g}</text>')
    for v in (y0, y1):
        lab = f"1e{v:.2g}" if logy else f"{v:.3g}"
        out.append(f'<text x="{pad - 4}" y="{sy(v) + 4:.1f}" font-size="11" text-anchor="end">{lab}</text>')
    for k, (label, x, y) in enumerate(pts):
        c = colors[k % len(colors)]
        if x.size:
            d = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{d}"/>')
        out.append(f'<text x="{width - pad}" y="{pad + 14 * k}" font-size="11" fill="{c}" '
                   f'text-anchor="end">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _fit_dict(series, t_min=1.0):
    try:
        f = fit_exponential(series, t_min=t_min)
        return {"C_hat": f.C_hat, "K_hat": f.K_hat, "r2": f.r2, "window": list(f.window),
                "n_points": f.n_points}
    except InsufficientDecayError as exc:
        return {"error": str(exc)}


def _fit_summary(metric, p, seeds, fits):
    ks = [f["K_hat"] for f in fits if "K_hat" in f]
    r2 = [f["r2"] for f in fits if "r2" in f]
    out = {"metric": metric, "p": p, "seeds": list(seeds), "fitted": len(ks)}
    if ks:
        q1, med, q3 = np.percentile(ks, [25, 50, 75])
        out.update({"median_K_hat": float(med), "IQR": [float(q1), float(q3)],
                    "r2_min": float(min(r2)), "r2_median": float(np.median(r2))})
    return out


# -- per-seed tasks (top-level so they pickle) --------------------------------------

def _path(cfg, seed, tag, member=0):
    return ForcingPath(KickLaw(cfg.sigma), int(seed), member, cfg.mode, float(cfg.dt), cfg.horizon, tag)


def _simulate_task(args):
    cfg, seed = args
    n = cfg.n
    phi0 = initial_profile(cfg.phi0, seed, "phi0", n)
    traj = evolve(SolverState(0.0, phi0), cfg.horizon, _path(cfg, seed, "simulate"), cfg.substeps,
                  KickBasis(n, cfg.basis))
    rows = []
    for t, phi in zip(traj.times, traj.phis):
        u = derivative_field(GridProfile(phi))
        rows.append((float(t), lp_norm(u, 1), total_variation(u), 0.5 * lp_norm(u, 2) ** 2))
    return rows, traj.final.phi.to_csv()


def _contract_task(args):
    cfg, seed = args
    n = cfg.n
    phi0 = initial_profile(cfg.phi0, seed, "phi0", n)
    phibar0 = initial_profile(cfg.phibar0, seed, "phibar0", n)
    path = _path(cfg, seed, "contract")
    run = coupled_run(phi0, phibar0, cfg.horizon, path, cfg.substeps, KickBasis(n, cfg.basis))
    series = coupled_distance_series(phi0, phibar0, cfg.horizon, path, (PHI_METRIC,) + tuple(cfg.p),
                                     run=run)
    return [(s.label, s.p, s.times, s.values, _fit_dict(s)) for s in series], run.kicks_identical()


def _dual_law(spec, cfg, role):
    # a Dirac law at the seed-0 profile of the spec, or the sampler itself
    if spec.startswith("dirac:"):
        return dirac(initial_profile(spec[len("dirac:"):], 0, role, cfg.n))
    return make_sampler(spec)


# -- subcommands -------------------------------------------------------------------------

def _run_simulate(cfg, w, seeds, workers):
    summary = {}
    for seed, (rows, final) in zip(seeds, pmap(_simulate_task, [(cfg, s) for s in seeds], workers)):
        w.text(f"simulate_seed{seed}.csv", _csv_rows(["t", "L1", "TV", "energy"], rows))
        w.text(f"final_phi_seed{seed}.csv", final)
        arr = np.array(rows)
        summary[str(seed)] = {"final_L1": float(arr[-1, 1]), "final_TV": float(arr[-1, 2]),
                              "final_energy": float(arr[-1, 3])}
        if cfg.svg:
            w.text(f"simulate_seed{seed}.svg",
                   svg_plot([("TV", arr[:, 0], arr[:, 2]), ("L1", arr[:, 0], arr[:, 1])], f"seed {seed}"))
    w.json("simulate_summary.json", summary)
    return EXIT_OK


def _run_contract(cfg, w, seeds, workers):
    by_metric: dict = {}
    coupled_ok = True
    results = pmap(_contract_task, [(cfg, s) for s in seeds], workers)
    for seed, (series, same) in zip(seeds, results):
        coupled_ok &= same
        for label, p, t, v, fit in series:
            by_metric.setdefault((label, p), []).append((seed, t, v, fit))
    summaries = []
    for (label, p), items in by_metric.items():
        tag = "phi" if p is None else f"u_p{p:g}"
        rows = [(float(tt), float(vv), seed) for seed, t, v, _ in items for tt, vv in zip(t, v)]
        w.text(f"contract_{tag}.csv", _csv_rows(["t", "value", "seed"], rows))
        fits = [f for *_, f in items]
        s = _fit_summary(label, p, seeds, fits)
        s["fits"] = {str(seed): f for seed, *_, f in items}
        summaries.append(s)
        if cfg.svg:
            w.text(f"contract_{tag}.svg",
                   svg_plot([(f"seed {sd}", t, v) for sd, t, v, _ in items], label, logy=True))
    w.json("contract_summary.json", {"series": summaries, "shared_forcing_identical": coupled_ok})
    return EXIT_OK


def _run_omega(cfg, w, seeds, workers):
    ics = [initial_profile(spec, 0, f"ic{k}", cfg.n) for k, spec in enumerate(cfg.ic_list)]
    s_grid = np.arange(1, int(round((cfg.horizon - cfg.s) / cfg.step)) + 1) * cfg.step
    res = omega_decay_experiment(ics, s_grid, seeds, cfg.s, cfg.substeps, KickLaw(cfg.sigma),
                                 cfg.basis, workers=workers)
    rows, fits = [], {}
    for seed, r in zip(seeds, res):
        rows.extend((float(a), float(b), seed) for a, b in zip(r.series.times, r.series.values))
        fits[str(seed)] = _decay_fit(r)
    w.text("omega_diameter.csv", _csv_rows(["s_prime", "value", "seed"], rows))
    summ = _fit_summary("omega_diameter", None, seeds, list(fits.values()))
    summ["fits"] = fits
    w.json("omega_summary.json", summ)
    if cfg.svg:
        w.text("omega_diameter.svg", svg_plot([(f"seed {sd}", r.series.times, r.series.values)
                                               for sd, r in zip(seeds, res)], "Omega diameter", True))
    return EXIT_OK


def _decay_fit(r):
    d = ({"C_hat": r.fit.C_hat, "K_hat": r.fit.K_hat, "r2": r.fit.r2, "window": list(r.fit.window),
          "n_points": r.fit.n_points} if r.fit else {"error": r.error})
    d["reached_floor"] = r.reached_floor
    return d


def _run_midpoint(cfg, w, seeds, workers):
    phi0 = initial_profile(cfg.phi0, 0, "phi0", cfg.n)
    phibar0 = initial_profile(cfg.phibar0, 0, "phibar0", cfg.n)
    t_max = cfg.horizon / (2.0 + cfg.extra_factor)
    t_grid = np.arange(1, int(math.floor(t_max / cfg.step + 1e-9)) + 1) * cfg.step
    res = midpoint_gap_experiment(phi0, phibar0, t_grid, seeds, cfg.extra_factor, cfg.substeps,
                                  KickLaw(cfg.sigma), cfg.basis, workers=workers)
    rows, fits = [], {}
    for seed, r in zip(seeds, res):
        rows.extend((float(a), float(b), seed) for a, b in zip(r.series.times, r.series.values))
        d = _decay_fit(r)
        d["replay_passed"] = r.replay_passed
        fits[str(seed)] = d
    w.text("midpoint_gap.csv", _csv_rows(["t", "value", "seed"], rows))
    summ = _fit_summary("midpoint_gap", None, seeds, list(fits.values()))
    summ["fits"] = fits
    summ["note"] = res[0].note if res else ""
    w.json("midpoint_summary.json", summ)
    if cfg.svg:
        w.text("midpoint_gap.svg", svg_plot([(f"seed {sd}", r.series.times, r.series.values)
                                             for sd, r in zip(seeds, res)], "midpoint gap", True))
    return EXIT_OK


def _run_stationary(cfg, w, seeds, workers):
    law = KickLaw(cfg.sigma)
    out = {}
    for seed in seeds:
        a = stationary_ensemble(make_sampler(cfg.phi0), cfg.members, cfg.burn_in, cfg.samples, seed,
                                cfg.n, cfg.substeps, law, cfg.basis, workers)
        b = stationary_ensemble(make_sampler(cfg.phibar0), cfg.members, cfg.burn_in, cfg.samples,
                                seed + 10**6, cfg.n, cfg.substeps, law, cfg.basis, workers)
        out[str(seed)] = {"law1": a.stats, "law2": b.stats,
                          "agree": {k: summaries_agree(a, b, k) for k in a.stats}}
    w.json("stationary_summary.json", out)
    return EXIT_OK


def _run_dual(cfg, w, seeds, workers):
    times = np.arange(0, int(round(cfg.horizon)) + 1, dtype=float)
    summary = {}
    for seed in seeds:
        spec = EnsembleSpec(cfg.members, _dual_law(cfg.phi0, cfg, "phi0"), _dual_law(cfg.phibar0, cfg, "phibar0"),
                            cfg.p[0], cfg.horizon, seed, cfg.n, cfg.substeps, KickLaw(cfg.sigma), cfg.basis)
        ts, ests, _ = dual_lipschitz_series(spec, times, workers)
        w.text(f"dual_lipschitz_seed{seed}.csv",
               _csv_rows(["t", "mean", "se"], [(t, e.mean, e.se) for t, e in zip(ts, ests)]))
        ser = DistanceSeries("dual_lipschitz", ts, [e.mean for e in ests], cfg.p[0], 0.1 / cfg.n, seed)
        summary[str(seed)] = _fit_dict(ser)
        if cfg.svg:
            w.text(f"dual_lipschitz_seed{seed}.svg", svg_plot([("estimate", ser.times, ser.values)],
                                                              "dual-Lipschitz bound", True))
    w.json("dual_lipschitz_summary.json", summary)
    return EXIT_OK


def _oracle_task(args):
    cfg, seed, k = args
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), k, zlib.crc32(b"oracle")]))
    phi = random_fourier(1.0, 8, 1.0)(rng, cfg.oracle_n)
    delta = cfg.dt / cfg.substeps
    w = winding_bound(phi.values, delta)
    fast, rf = hopf_lax_step(phi, delta, w)
    slow, rs = brute_force_hopf_lax(phi, delta, w)
    err = float(np.max(np.abs(fast.values - slow.values)))
    same = bool(np.array_equal(rf.unrolled, rs.unrolled))
    return err, same


def _run_oracle(cfg, w, seeds, workers):
    reports = []
    for seed in seeds:
        res = pmap(_oracle_task, [(cfg, seed, k) for k in range(cfg.oracle_profiles)], workers)
        err = max(r[0] for r in res)
        same = all(r[1] for r in res)
        reports.append(OracleReport("brute_force", "Linf", err, 1e-12, err <= 1e-12 and same,
                                    f"seed={seed} profiles={cfg.oracle_profiles} winners_equal={same}"))
        path = ForcingPath(KickLaw(cfg.sigma), int(seed), 0, cfg.mode, float(cfg.dt), 2.0, "oracle")
        reports.append(cross_solver_check(1024, 2.0, path))
        reports.extend(viscous_ladder(1024, path=path))
    audit = os.path.join(w.out, "oracle_audit.jsonl")
    if os.path.exists(audit):
        os.remove(audit)
    append_reports(audit, reports)
    with open(audit, encoding="utf-8") as fh:
        w.files["oracle_audit.jsonl"] = hashlib.sha256(fh.read().encode()).hexdigest()
    w.json("oracle_summary.json", {"passed": all(r.passed for r in reports), "count": len(reports)})
    return EXIT_OK if all(r.passed for r in reports) else EXIT_ORACLE


def config_oracle_suite(cfg: ExperimentConfig, profiles: int = 2):
    """Brute-force check of the fast flight at the configuration's grid and step."""
    res = [_oracle_task((dataclasses.replace(cfg, oracle_n=cfg.n), 0, k)) for k in range(profiles)]
    err = max(r[0] for r in res)
    same = all(r[1] for r in res)
    return [OracleReport("brute_force", "Linf", err, 1e-12, err <= 1e-12 and same,
                         f"config grid n={cfg.n} profiles={profiles} winners_equal={same}")]


RUNNERS = {
    "simulate": _run_simulate,
    "contract": _run_contract,
    "omega": _run_omega,
    "midpoint-gap": _run_midpoint,
    "stationary": _run_stationary,
    "dual-lipschitz": _run_dual,
    "oracle-check": _run_oracle,
}


def _now():
    return datetime.now(timezone.utc).isoformat()


def run(cfg: ExperimentConfig, override: bool = False) -> int:
    """Run one experiment, writing artifacts and ``manifest.json`` under ``cfg.out``."""
    rep = validate_config(cfg)
    for msg in rep.warnings:
        log.warning(msg)
    if not rep.passed and not override:
        for msg in rep.errors:
            print(f"config error: {msg}", file=sys.stderr)
        if rep.witnesses:
            print(f"witnesses: {rep.witnesses}", file=sys.stderr)
        return EXIT_CONFIG
    w = Writer(cfg.out)
    w.text("config.ini", cfg.to_ini())
    core = cfg.to_dict()
    execution = {k: core.pop(k) for k in ("workers", "out", "svg")}
    manifest = {"version": __version__, "config": core, "execution": execution,
                "config_hash": cfg.digest(),
                "validation": rep.to_dict(), "started": _now(),
                "incomplete": False}
    suite = config_oracle_suite(cfg)
    manifest["oracle_suite"] = [dataclasses.asdict(r) for r in suite]
    manifest["validated"] = rep.passed and all(r.passed for r in suite)
    status = EXIT_INCOMPLETE
    try:
        status = RUNNERS[cfg.kind](cfg, w, list(cfg.seeds), cfg.workers)
    except (Exception, KeyboardInterrupt) as exc:  # flush what exists, flag the run
        manifest["incomplete"] = True
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        print(f"run incomplete: {manifest['error']}", file=sys.stderr)
    manifest["finished"] = _now()
    manifest["outputs"] = dict(sorted(w.files.items()))
    with open(os.path.join(cfg.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return EXIT_INCOMPLETE if manifest["incomplete"] else status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kickburgers", description="Kicked Burgers experiments")
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", metavar="PATH")
    ap.add_argument("--seed", type=int, metavar="S", help="run a single seed")
    ap.add_argument("--workers", type=int, metavar="W")
    ap.add_argument("--out", metavar="DIR")
    ap.add_argument("--svg", action="store_true", help="also write SVG plots")
    ap.add_argument("--override-assumptions", action="store_true",
                    help="run even if the standing assumptions fail")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override any config key (section prefix optional)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = ExperimentConfig.from_ini(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    cfg = dataclasses.replace(cfg, kind=args.kind)
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg = cfg.with_value(key.split(".")[-1].strip(), val)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seeds=(args.seed,))
    if args.workers is not None:
        cfg = dataclasses.replace(cfg, workers=args.workers)
    if args.out:
        cfg = dataclasses.replace(cfg, out=args.out)
    if args.svg:
        cfg = dataclasses.replace(cfg, svg=True)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, override=args.override_assumptions)


if __name__ == "__main__":
    sys.exit(main())
