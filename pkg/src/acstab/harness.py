"""Experiment orchestration: configuration, pipelines per energy, comparison and emission.

Every experiment returns a :class:`ComparisonReport` whose JSON and CSV
renderings depend only on the configuration (no timings, ordered by input),
so re-running with the same config and seed reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .asymptotics import (compute_L1_q1, compute_DL, fit_decay_exponent,
                          predict, q_tail)
from .bloch import bloch_function, find_bands, free_basis
from .errors import AcstabError, AlignmentError, ConfigError, DegenerateFitError
from .ode import EnergyGrid, IntegratorConfig, Trajectory, integrate_ivp
from .potentials import PotentialSpec, zero

KINDS = ("free_thm11", "periodic_thm12", "full_line_thm13", "full_line_thm14",
         "maximal_thm21", "norm_thm31")
EXPONENT_SENTINEL = -99.0


def _spec(d):
    if d is None:
        return zero()
    if isinstance(d, PotentialSpec):
        return d
    return PotentialSpec.from_dict(dict(d))


@dataclass
class ExperimentConfig:
    """Everything needed to run one experiment.

    ``grids`` is the partition ``{S_i}`` of the energy set.  For the
    periodic kinds it may be left empty, in which case ``bands`` (1-based,
    counted from the bottom of ``lam_range``) are each sampled with
    ``n_per_band`` interior energies at relative margin ``band_margin``.
    """

    kind: str
    U: PotentialSpec = field(default_factory=zero)
    V: PotentialSpec = field(default_factory=zero)
    grids: list = field(default_factory=list)
    x_max: float = 8000.0
    x_compare: float = 4000.0
    checkpoint: float = 1000.0
    ratio_window: tuple = (0.95, 1.05)
    pass_fraction: float = 0.9
    form: str = "auto"
    rtol: float = 1e-11
    atol: float = 1e-13
    bands: tuple = (1,)
    n_per_band: int = 8
    band_margin: float = 0.05
    lam_range: tuple = (-2.0, 10.0)
    out: str | None = None
    seed: int = 0
    workers: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        self.U = _spec(self.U)
        self.V = _spec(self.V)
        self.grids = [g if isinstance(g, EnergyGrid) else
                      EnergyGrid(np.asarray(g["values"] if isinstance(g, dict) else g, float),
                                 g.get("label", f"S{i + 1}") if isinstance(g, dict) else f"S{i + 1}")
                      for i, g in enumerate(self.grids)]
        seen = set()
        for g in self.grids:
            for v in g.values:
                if float(v) in seen:
                    raise ConfigError("energy grids must be disjoint")
                seen.add(float(v))
        if self.kind in ("free_thm11", "full_line_thm13") and not self.grids:
            raise ConfigError(f"{self.kind} needs at least one energy grid")
        if self.kind in ("periodic_thm12", "full_line_thm14") and self.U.is_zero:
            raise ConfigError(f"{self.kind} needs a periodic background U")
        if self.form not in ("auto", "thm17", "thm18"):
            raise ConfigError(f"unknown prediction form {self.form!r}")
        if not (0.0 <= self.pass_fraction <= 1.0):
            raise ConfigError("pass_fraction must lie in [0, 1]")
        if not self.checkpoint < self.x_compare <= self.x_max:
            raise ConfigError("need checkpoint < x_compare <= x_max")
        lo, hi = self.ratio_window
        if not lo < hi:
            raise ConfigError("ratio_window must be increasing")
        self.ratio_window = (float(lo), float(hi))
        self.lam_range = tuple(float(v) for v in self.lam_range)
        self.bands = tuple(int(b) for b in self.bands)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        extra = {k: d.pop(k) for k in list(d) if k not in known}
        params = dict(d.pop("params", {}))
        params.update(extra)
        if "energy" in d:
            raise ConfigError("use 'grids' for energies")
        for key in ("ratio_window", "lam_range", "bands"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(params=params, **d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)

    def integrator(self, sampler=None) -> IntegratorConfig:
        return IntegratorConfig(rtol=self.rtol, atol=self.atol, max_step=0.1, sampler=sampler)


def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(x) for x in v]
    return v


@dataclass
class ComparisonReport:
    """Ordered per-item records plus aggregate pass statistics."""

    kind: str
    records: list
    pass_fraction: float
    passed: bool
    summary: dict = field(default_factory=dict)
    columns: tuple = ()

    def to_json(self) -> str:
        d = {"kind": self.kind, "pass_fraction": self.pass_fraction, "passed": self.passed,
             "summary": self.summary, "records": self.records}
        return json.dumps(_clean(d), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        cols = list(self.columns) or sorted({k for r in self.records for k in r})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.records:
            row = []
            for c in cols:
                v = _clean(r.get(c))
                row.append("" if v is None else repr(v) if isinstance(v, float) else v)
            w.writerow(row)
        return buf.getvalue()

    def write(self, out_dir, stem=None):
        """Write ``<stem>.json`` and ``<stem>.csv``; returns both paths."""
        stem = stem or self.kind
        os.makedirs(out_dir, exist_ok=True)
        pj = os.path.join(out_dir, stem + ".json")
        pc = os.path.join(out_dir, stem + ".csv")
        with open(pj, "w") as fh:
            fh.write(self.to_json())
        with open(pc, "w") as fh:
            fh.write(self.to_csv())
        return pj, pc


# --- comparison --------------------------------------------------------

COMPARE_COLUMNS = ("lam", "grid", "status", "ratio", "ratio_100", "error_exponent",
                   "beta_q", "beta_q_width", "converged_q", "beta_q1", "beta_q1_width",
                   "converged_q1", "form", "message")


def compare_prediction(trajectory: Trajectory, prediction, checkpoint: float = 1000.0,
                       ratio_window=(0.95, 1.05), fit_window=None,
                       wronskian_min: float = 1e-12) -> dict:
    """Project the solution onto ``(phi, conj(phi))`` and measure ``|c1(x)| / |c1(end)|``.

    ``c1 = W[u, conj(phi)] / W[phi, conj(phi)]`` is the coefficient of
    ``phi``; the prediction is correct to leading order exactly when ``c1``
    tends to a nonzero limit, approximated by its value at the last point.
    The fitted error exponent is the log-log slope of ``|r - 1|`` over
    ``fit_window`` (default ``[100, x_end / 2]``).

    Raises
    ------
    AlignmentError
        The two objects do not share their x-grid.
    """
    x = np.asarray(trajectory.x)
    n = x.size
    if prediction.x.size < n or not np.allclose(prediction.x[:n], x, rtol=0, atol=1e-9):
        raise AlignmentError("trajectory and prediction must share the x-grid")
    phi, dphi = prediction.phi[:n], prediction.dphi[:n]
    u, du = trajectory.u, trajectory.du
    wp = phi * np.conj(dphi) - dphi * np.conj(phi)
    rec = {"lam": float(trajectory.lam), "form": prediction.form}
    if np.min(np.abs(wp)) < wronskian_min:
        rec.update(status="degenerate", ratio=float("nan"), ratio_100=float("nan"),
                   error_exponent=float("nan"),
                   message="prediction basis degenerate (Wronskian below threshold)")
        return rec
    c1 = (u * np.conj(dphi) - du * np.conj(phi)) / wp
    ref = abs(c1[-1])
    if ref == 0:
        rec.update(status="degenerate", ratio=float("nan"), ratio_100=float("nan"),
                   error_exponent=float("nan"), message="solution has no phi component")
        return rec
    r = np.abs(c1) / ref
    rc = float(np.interp(checkpoint, x, r))
    r100 = float(np.interp(100.0, x, r)) if x[-1] >= 100 else float("nan")
    err = np.abs(r - 1.0)
    fw = fit_window or (100.0, x[-1] / 2)
    if np.all(err[(x >= fw[0]) & (x <= fw[1])] == 0):
        ee = EXPONENT_SENTINEL
    else:
        try:
            ee = fit_decay_exponent((x, np.maximum(err, 1e-300)), fw,
                                    envelope_halfwidth=10.0 if _uniform(x) else None)[0]
        except DegenerateFitError:
            ee = float("nan")
    lo, hi = ratio_window
    rec.update(status="pass" if lo <= rc <= hi else "fail", ratio=rc, ratio_100=r100,
               error_exponent=max(ee, EXPONENT_SENTINEL) if math.isfinite(ee) else ee,
               message="")
    return rec


def _uniform(x):
    d = np.diff(x)
    return d.size > 0 and np.allclose(d, d[0], rtol=1e-6, atol=0)


def _decay_exponent(V: PotentialSpec) -> float:
    if V.kind == "sum":
        return min((_decay_exponent(t) for t in V.terms if not t.is_zero), default=math.inf)
    if V.is_zero:
        return math.inf
    if V.kind == "exponential":
        return math.inf
    if V.kind == "tabulated":
        return math.inf
    return float(V.decay_exponent)


def choose_form(form: str, V: PotentialSpec) -> str:
    """``auto``: the one-stage prediction when the decay exponent exceeds 3/4."""
    if form != "auto":
        return form
    return "thm17" if _decay_exponent(V) > 0.75 else "thm18"


def _basis(U: PotentialSpec, lam: float):
    return free_basis(lam) if U.is_zero else bloch_function(U, lam)


def compare_energy(U: PotentialSpec, V: PotentialSpec, lam: float, cfg: ExperimentConfig) -> dict:
    """Full pipeline and ODE comparison at one energy."""
    form = choose_form(cfg.form, V)
    bd = _basis(U, lam)
    c = compute_DL(V, bd, None, cfg.x_max)
    qt = q_tail(c, cfg.x_max)
    s2 = compute_L1_q1(V, bd, coeffs=c, X_max=cfg.x_max)
    pr = predict(form, V, bd, stage2=s2 if form == "thm18" else None, coeffs=c, X_max=cfg.x_max)
    sel = pr.x <= cfg.x_compare + 1e-9
    x = pr.x[sel]
    tr = integrate_ivp(V, lam, float(x[0]), float(x[-1]), (pr.phi[0], pr.dphi[0]),
                       cfg.integrator(sampler=x), background=U)
    rec = compare_prediction(tr, pr, cfg.checkpoint, cfg.ratio_window)
    rec.update(beta_q=qt.beta, beta_q_width=qt.beta_width, converged_q=bool(qt.converged),
               beta_q1=s2.q1.beta, beta_q1_width=s2.q1.beta_width,
               converged_q1=bool(s2.q1.converged))
    return rec


def _energy_jobs(cfg: ExperimentConfig, U: PotentialSpec):
    if cfg.grids:
        return [(g.label, float(v)) for g in cfg.grids for v in g.values]
    bands = find_bands(U, cfg.lam_range)
    jobs = []
    for b in cfg.bands:
        if not 1 <= b <= len(bands):
            raise ConfigError(f"band {b} not found in {cfg.lam_range}")
        band = bands[b - 1]
        jobs += [(f"band{b}", float(v)) for v in band.interior(cfg.n_per_band, cfg.band_margin)]
    return jobs


def _map(fn, items, workers):
    if workers == 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers or min(8, os.cpu_count() or 1)) as ex:
        return list(ex.map(fn, items))


def _comparison_run(cfg: ExperimentConfig, U: PotentialSpec, V: PotentialSpec, kind: str,
                    jobs=None) -> ComparisonReport:
    jobs = jobs if jobs is not None else _energy_jobs(cfg, U)

    def one(job):
        label, lam = job
        try:
            rec = compare_energy(U, V, lam, cfg)
        except AcstabError as exc:
            rec = {"lam": lam, "status": "error", "message": f"{type(exc).__name__}: {exc}"}
        rec["grid"] = label
        return rec

    records = _map(one, jobs, cfg.workers)
    n_pass = sum(r["status"] == "pass" for r in records)
    frac = n_pass / len(records) if records else 0.0
    summary = {
        "n": len(records), "n_pass": n_pass,
        "n_error": sum(r["status"] in ("error", "degenerate") for r in records),
        "median_beta_q": _median([r.get("beta_q") for r in records]),
        "median_beta_q1": _median([r.get("beta_q1") for r in records]),
        "converged_q_fraction": _frac([r.get("converged_q") for r in records]),
        "converged_q1_fraction": _frac([r.get("converged_q1") for r in records]),
        "threshold": cfg.pass_fraction, "checkpoint": cfg.checkpoint,
        "ratio_window": list(cfg.ratio_window), "form": choose_form(cfg.form, V),
    }
    return ComparisonReport(kind, records, frac, frac >= cfg.pass_fraction, summary,
                            COMPARE_COLUMNS)


def _median(vals):
    v = [x for x in vals if x is not None and math.isfinite(x)]
    return float(np.median(v)) if v else float("nan")


def _frac(vals):
    return sum(bool(v) for v in vals) / len(vals) if vals else 0.0


# --- experiments -------------------------------------------------------

def full_line_scan(cfg: ExperimentConfig) -> tuple:
    """Half-line runs towards ``+inf`` (on ``V``) and ``-inf`` (on ``V(-x)``).

    Each half keeps only its own side of the potential, i.e. the line is
    split at 0.  Returns ``(right, left, combined)``; ``combined`` marks an
    energy as passing on both sides (intersection) or on either (union)
    and passes when the intersection fraction reaches the threshold.
    """
    U = cfg.U
    jobs = _energy_jobs(cfg, U)
    right = _comparison_run(cfg, U, cfg.V.restrict_positive(), cfg.kind + "_right", jobs)
    left = _comparison_run(cfg, U.reflect(), cfg.V.reflect().restrict_positive(),
                           cfg.kind + "_left", jobs)
    recs = []
    for a, b in zip(right.records, left.records):
        pa, pb = a["status"] == "pass", b["status"] == "pass"
        recs.append({"lam": a["lam"], "grid": a["grid"], "right": a["status"],
                     "left": b["status"], "both": pa and pb, "either": pa or pb})
    n = len(recs)
    both = sum(r["both"] for r in recs) / n if n else 0.0
    either = sum(r["either"] for r in recs) / n if n else 0.0
    combined = ComparisonReport(cfg.kind, recs, both, both >= cfg.pass_fraction,
                                {"both_fraction": both, "either_fraction": either,
                                 "threshold": cfg.pass_fraction, "n": n},
                                ("lam", "grid", "right", "left", "both", "either"))
    return right, left, combined


def maximal_experiment(cfg: ExperimentConfig) -> ComparisonReport:
    from .opnorms import KernelSpec, maximal_bound_experiment

    p = cfg.params
    kd = dict(p.get("kernel", {"kind": "fourier", "window": [0.5, 4.0]}))
    kernel = KernelSpec(kd.pop("kind"), tuple(kd.pop("window", (0.5, 4.0))), **kd)
    q = float(p.get("q", 4.0))
    pp = float(p.get("p", q / (q - 1.0)))
    supports = tuple(float(s) for s in p.get("supports", [2.0 ** j for j in range(7)]))
    rep = maximal_bound_experiment(kernel, pp, q, int(p.get("ensemble", 100)), supports,
                                   cfg.seed, int(p.get("n_pieces", 16)),
                                   float(p.get("slack", 3.0)))
    recs = [{"support_n": r[0], "ensemble_idx": r[1], "ratio": r[2]} for r in rep.rows]
    summary = {"baseline": rep.baseline, "per_support_max": {repr(k): v for k, v in
                                                             rep.per_support_max.items()},
               "trend_slope": rep.trend_slope, "max_over_baseline": rep.max_over_baseline,
               "p": pp, "q": q}
    return ComparisonReport(cfg.kind, recs, 1.0 if rep.passed else 0.0, rep.passed, summary,
                            ("support_n", "ensemble_idx", "ratio"))


def norm_experiment(cfg: ExperimentConfig) -> ComparisonReport:
    from .opnorms import KernelSpec, check_symbol_class, estimate_l2_norm, free_phase_symbol

    p = cfg.params
    window = tuple(p.get("window", (1.0, 2.0)))
    kernel = KernelSpec("free_phase", window, V=cfg.V)
    Xs = [float(x) for x in p.get("X", [250.0, 500.0, 1000.0])]
    growth_max = float(p.get("growth_max", 0.10))
    recs, prev = [], None
    ok = True
    for X in Xs:
        est = estimate_l2_norm(kernel, X, float(p.get("dx", 0.5)))
        g = (est.value / prev - 1.0) if prev else float("nan")
        good = prev is None or g < growth_max
        ok &= good
        recs.append({"X": X, "norm": est.value, "refined": est.refined, "delta": est.delta,
                     "growth": g, "status": "pass" if good else "fail"})
        prev = est.value
    sym = check_symbol_class(free_phase_symbol(cfg.V, x_max=float(p.get("symbol_x_max", 1e4))),
                             float(p.get("rho", 0.5)), float(p.get("sigma", 0.5)), window,
                             margin=float(p.get("margin", 0.05)))
    passed = ok and sym.passed
    summary = {"symbol_exponents": sym.exponents, "symbol_bounds": sym.bounds,
               "symbol_passed": sym.passed, "resolution_warning": sym.resolution_warning,
               "plateau_passed": ok}
    return ComparisonReport(cfg.kind, recs, 1.0 if passed else 0.0, passed, summary,
                            ("X", "norm", "refined", "delta", "growth", "status"))


def run_experiment(cfg: ExperimentConfig, out: str | None = None) -> ComparisonReport:
    """Dispatch on ``cfg.kind``; writes ``<kind>.json/.csv`` into ``out`` (or ``cfg.out``)."""
    out = out or cfg.out
    if cfg.kind in ("free_thm11", "periodic_thm12"):
        U = zero() if cfg.kind == "free_thm11" else cfg.U
        rep = _comparison_run(cfg, U, cfg.V, cfg.kind)
    elif cfg.kind in ("full_line_thm13", "full_line_thm14"):
        right, left, rep = full_line_scan(cfg)
        if out:
            right.write(out)
            left.write(out)
    elif cfg.kind == "maximal_thm21":
        rep = maximal_experiment(cfg)
    else:
        rep = norm_experiment(cfg)
    if out:
        rep.write(out)
    return rep


def decay_fit_experiment(V: PotentialSpec, lams, U: PotentialSpec | None = None,
                         x_max: float = 2.0e4, window=(1.0e2, 1.0e4), stage: int = 1,
                         beta_max: float = -0.2, converged_min: float = 0.75,
                         workers: int | None = None) -> ComparisonReport:
    """Decay exponents of ``q`` (stage 1) or ``q1`` (stage 2) over an energy list.

    Passes iff the median exponent is at most ``beta_max`` and at least
    ``converged_min`` of the energies have a converged tail.
    """
    U = U or zero()

    def one(lam):
        try:
            bd = _basis(U, lam)
            c = compute_DL(V, bd, None, x_max)
            t = q_tail(c, x_max, window=window) if stage == 1 else \
                compute_L1_q1(V, bd, coeffs=c, X_max=x_max, window=window).q1
            return {"lam": float(lam), "beta": t.beta, "beta_width": t.beta_width,
                    "converged": bool(t.converged), "status": "ok", "message": ""}
        except AcstabError as exc:
            return {"lam": float(lam), "beta": float("nan"), "beta_width": float("nan"),
                    "converged": False, "status": "error", "message": str(exc)}

    recs = _map(one, [float(l) for l in lams], workers)
    med = _median([r["beta"] for r in recs])
    conv = _frac([r["converged"] for r in recs])
    passed = bool(med <= beta_max and conv >= converged_min)
    return ComparisonReport(f"decay_q{'' if stage == 1 else '1'}", recs, conv, passed,
                            {"median_beta": med, "converged_fraction": conv,
                             "beta_max": beta_max, "converged_min": converged_min,
                             "window": list(window), "x_max": x_max},
                            ("lam", "beta", "beta_width", "converged", "status", "message"))
