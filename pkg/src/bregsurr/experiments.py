"""Data generation, experiment runners, trace export and slope fitting.

Every runner returns an :class:`ExperimentResult` holding one or more trace
tables and a flat summary. Nothing is written until every plain trace has
passed the averaged error-term inequality check.

RNG contract: streams are ``numpy.random.default_rng(seed ^ k)`` (PCG64).
Stream ``k = 0`` generates shared data; ``k = run_id`` (run ids start at 1)
generates that run's start, or the whole replication for sparse regression.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .accel import AccelConfig, AccelProblem, run_accelerated
from .errors import (BoundViolation, ConfigError, InsufficientData, LpFailure,
                     SolverError)
from .losses import ItakuraSaitoLoss, SquaredLoss, TukeyLoss, spectral_norm
from .solvers import (BOUND_TOL, DcSvmProblem, IterateTrace, LlaProblem,
                      MirrorProblem, RunConfig, TispProblem, run)

log = logging.getLogger(__name__)

COLUMNS = ("run_id", "iter", "objective", "opt_error", "stat_error", "theta", "rho",
           "R_t", "searches_used", "wall_ns")
EXPERIMENTS = ("is-mirror", "dc-svm", "sparse-reg", "robust-reg", "accel-compare", "invariants")
SLOPE_GATE = -0.9
SLOPE_WINDOW_START = 10
Y_FLOOR = 1e-6
PLATEAU_RTOL = 1e-6
SPARSE_ERROR_GATE = 5.0
SUPPORT_GATE = 0.9
SLOPE_FRACTION_GATE = 0.95
ACCEL_FRACTION_GATE = 0.9
ACCEL_IS_BUDGET = 100
ROBUST_PLATEAU_RATIO = 0.7

__all__ = [
    "ExperimentConfig", "ExperimentResult", "TraceTable", "gen_design", "run_is_mirror",
    "run_dc_svm", "run_sparse_reg", "run_robust_reg", "run_accel_compare", "run_experiment",
    "fit_loglog_slope", "write_trace_csv", "read_trace_csv", "format_float", "load_config",
    "write_summary", "read_summary", "trace_rows", "iterations_to_target", "stream",
    "COLUMNS",
]


# ---------------------------------------------------------------------------
# configuration

_DEFAULTS = {
    "is-mirror": dict(n=200, p=200, replications=50, iters=1000, noise_sigma2=10.0,
                      design="uniform01", beta_star="uniform(0,5)", rho=100.0),
    "dc-svm": dict(n=100, p=150, replications=20, iters=100, noise_sigma2=10.0,
                   design="gaussian_ar(0.5)", beta_star="15,10", lam=1.0),
    "sparse-reg": dict(n=800, p=1000, replications=20, iters=200, noise_sigma2=10.0,
                       design="gaussian_ar(0.15)", beta_star="12,8", lambda_A=2.0),
    "robust-reg": dict(n=800, p=1000, replications=20, iters=200, noise_sigma2=10.0,
                       design="gaussian_ar(0.15)", beta_star="12,8", lambda_A=2.0),
    "accel-compare": dict(n=200, p=200, replications=50, iters=1000, noise_sigma2=10.0,
                          design="uniform01", beta_star="uniform(0,5)", rho=100.0),
    "invariants": dict(n=1, p=1, replications=1, iters=1),
}
_FULL_SCALE = {
    "is-mirror": dict(n=1000, p=1000),
    "dc-svm": dict(n=1000, p=1500),
    "accel-compare": dict(n=1000, p=1000),
}
_DESK_ROBUST = dict(n=200, p=250)
_ACCEL_ROBUST = dict(n=200, p=250, replications=20, iters=200, noise_sigma2=10.0,
                     design="gaussian_ar(0.15)", beta_star="12,8", lambda_A=2.0)


@dataclass
class ExperimentConfig:
    """Settings for one experiment. Unset numeric fields take per-experiment defaults.

    ``target`` picks the accel-compare family (``is-mirror`` or ``robust-reg``).
    ``tukey_scale`` is ``response`` (MAD of ``y``) or ``oracle`` (MAD of the true errors).
    ``timing`` fills the ``wall_ns`` column, which makes the CSV nondeterministic.
    """

    experiment: str = "is-mirror"
    n: Optional[int] = None
    p: Optional[int] = None
    seed: int = 42
    replications: Optional[int] = None
    noise_sigma2: Optional[float] = None
    design: Optional[str] = None
    beta_star: Optional[str] = None
    lambda_A: Optional[float] = None
    lam: Optional[float] = None
    rho: Optional[float] = None
    iters: Optional[int] = None
    out_dir: str = "out"
    full_scale: bool = False
    target: str = "is-mirror"
    tukey_scale: str = "response"
    starts_per_a: int = 5
    a_values: str = "0.5,1,1.5"
    rho_min: float = 1.0
    workers: int = 1
    timing: bool = False

    def resolved(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.experiment == "accel-compare" and self.target not in ("is-mirror", "robust-reg"):
            raise ConfigError(f"accel-compare target must be is-mirror or robust-reg, got {self.target!r}")
        if self.tukey_scale not in ("response", "oracle"):
            raise ConfigError(f"tukey_scale must be response or oracle, got {self.tukey_scale!r}")
        base = dict(_DEFAULTS[self.experiment])
        if self.experiment == "accel-compare" and self.target == "robust-reg":
            base = dict(_ACCEL_ROBUST)
        if self.full_scale:
            key = self.experiment if self.experiment != "accel-compare" or self.target == "is-mirror" \
                else "sparse-reg"
            base.update(_FULL_SCALE.get(key, {}))
            if key == "sparse-reg":
                base.update(n=800, p=1000)
        elif self.experiment == "robust-reg":
            base.update(_DESK_ROBUST)
        vals = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        for k, v in base.items():
            if vals.get(k) is None:
                vals[k] = v
        out = ExperimentConfig(**vals)
        for name in ("n", "p", "replications", "iters", "workers", "starts_per_a"):
            v = getattr(out, name)
            if v is not None and int(v) <= 0:
                raise ConfigError(f"{name} must be positive")
        return out


_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _coerce(name, raw):
    ftype = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}[name]
    text = str(raw).strip()
    try:
        if "bool" in ftype:
            return _BOOL[text.lower()]
        if "int" in ftype:
            return int(text, 0)
        if "float" in ftype:
            return float(text)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad value {text!r} for {name}") from exc
    return text


def load_config(path=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read flat ``key=value`` lines (``#`` comments allowed); ``overrides`` win."""
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    vals = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                k, v = (s.strip() for s in line.split("=", 1))
                if k not in known:
                    raise ConfigError(f"{path}:{lineno}: unknown key {k!r}")
                vals[k] = _coerce(k, v)
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in known:
            raise ConfigError(f"unknown key {k!r}")
        vals[k] = _coerce(k, v) if isinstance(v, str) else v
    return ExperimentConfig(**vals)


def stream(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng((int(seed) ^ int(k)) & 0xFFFFFFFFFFFFFFFF)


# ---------------------------------------------------------------------------
# data

_AR = re.compile(r"^gaussian_ar\(\s*([-+0-9.eE]+)\s*\)$")


def gen_design(n: int, p: int, design: str, seed_or_rng) -> np.ndarray:
    """``uniform01`` entries or Gaussian rows with covariance ``r^|i-j|``."""
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    if n <= 0 or p <= 0:
        raise ConfigError("design sizes must be positive")
    if design == "uniform01":
        return rng.uniform(size=(n, p))
    m = _AR.match(design or "")
    if not m:
        raise ConfigError(f"unknown design {design!r}")
    r = float(m.group(1))
    idx = np.arange(p)
    sigma = r ** np.abs(np.subtract.outer(idx, idx)).astype(float)
    try:
        chol = linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError as exc:
        raise ConfigError(f"covariance for r={r} is not positive definite") from exc
    if not np.all(np.isfinite(chol)):
        raise ConfigError(f"covariance for r={r} is not positive definite")
    return rng.standard_normal((n, p)) @ chol.T


def _beta_star(spec: str, p: int, rng) -> np.ndarray:
    m = re.match(r"^uniform\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\)$", spec)
    if m:
        return rng.uniform(float(m.group(1)), float(m.group(2)), size=p)
    try:
        lead = [float(v) for v in spec.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad beta_star {spec!r}") from exc
    if len(lead) > p:
        raise ConfigError("beta_star has more entries than p")
    out = np.zeros(p)
    out[:len(lead)] = lead
    return out


# ---------------------------------------------------------------------------
# trace tables and CSV


@dataclass
class TraceTable:
    """Rows keyed by ``COLUMNS``; ``meta`` becomes ``# key=value`` header lines."""

    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r["run_id"], r["iter"]))


@dataclass
class ExperimentResult:
    experiment: str
    tables: dict
    summary: dict
    traces: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v == "pass" for k, v in self.summary.items() if k.startswith("gate_"))


def format_float(x) -> str:
    """17 significant digits; ``None`` and NaN become an empty field."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return format(x, ".17g")


def trace_rows(trace: IterateTrace, run_id: int, timing: bool = False) -> list:
    """One row per recorded iterate; step columns describe the step leaving it."""
    rows = []
    n_steps = trace.n_steps
    for t in range(n_steps + 1):
        step = trace.params[t] if t < len(trace.params) else {}
        opt = trace.opt_terms[t] if t < len(trace.opt_terms) else None
        rows.append({
            "run_id": run_id, "iter": t, "objective": trace.objectives[t],
            "opt_error": opt,
            "stat_error": trace.stat_errors[t] if t < len(trace.stat_errors) else None,
            "theta": step.get("theta"), "rho": step.get("rho") if "theta" in step else None,
            "R_t": step.get("R_t"), "searches_used": step.get("searches_used"),
            "wall_ns": trace.wall_ns[t] if timing and t < len(trace.wall_ns) else None,
        })
    return rows


def write_trace_csv(path, table: TraceTable) -> None:
    buf = io.StringIO()
    for k in sorted(table.meta):
        buf.write(f"# {k}={table.meta[k]}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in table.sorted_rows():
        w.writerow([format_float(row.get(c)) for c in COLUMNS])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_trace_csv(path):
    """Return ``(rows, meta)`` with numeric fields parsed and empty fields as None."""
    meta, lines = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k] = v
            else:
                lines.append(line)
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != COLUMNS:
        raise ConfigError(f"{path}: unexpected header {reader.fieldnames}")
    rows = []
    for r in reader:
        out = {}
        for c in COLUMNS:
            v = r[c]
            if v == "":
                out[c] = None
            elif c in ("run_id", "iter", "searches_used", "wall_ns"):
                out[c] = int(v)
            else:
                out[c] = float(v)
        rows.append(out)
    return rows, meta


def write_summary(path, summary: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in summary.items():
            fh.write(f"{k}={v}\n")


def read_summary(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if "=" in line:
                k, _, v = line.rstrip("\n").partition("=")
                out[k] = v
    return out


# ---------------------------------------------------------------------------
# diagnostics


def fit_loglog_slope(series, window, t_values=None) -> float:
    """Least-squares slope of ``log(series_t)`` on ``log t`` for ``t`` in ``[lo, hi]``.

    ``t_values`` defaults to ``1, 2, ...``. Nonpositive entries are dropped
    and counted in :attr:`fit_loglog_slope.dropped`.
    """
    s = np.asarray(series, dtype=float)
    t = np.arange(1, s.size + 1, dtype=float) if t_values is None else np.asarray(t_values, dtype=float)
    lo, hi = window
    inside = (t >= lo) & (t <= hi)
    ok = inside & (s > 0) & np.isfinite(s)
    fit_loglog_slope.dropped = int(np.count_nonzero(inside & ~ok))
    if np.count_nonzero(ok) < 3:
        raise InsufficientData(f"only {np.count_nonzero(ok)} usable points in window {window}")
    lt, ls = np.log(t[ok]), np.log(s[ok])
    lt = lt - lt.mean()
    return float(lt @ (ls - ls.mean()) / (lt @ lt))


fit_loglog_slope.dropped = 0


def iterations_to_target(objectives, target, rtol: float = 0.0) -> Optional[int]:
    """First ``t`` with ``objectives[t] <= target + rtol (1 + |target|)``, else None."""
    f = np.asarray(objectives, dtype=float)
    hit = np.flatnonzero(f <= target + rtol * (1.0 + abs(target)))
    return int(hit[0]) if hit.size else None


def _assert_bound(trace: IterateTrace, run_id, label=""):
    gaps = trace.bound_gaps()
    if gaps.size and gaps.min() < -BOUND_TOL:
        raise BoundViolation(f"{label} run {run_id}: averaged error terms exceed the "
                             f"objective decrease by {-gaps.min():.3e}", run_id=run_id,
                             gap=float(gaps.min()))


def _slope_of(trace: IterateTrace) -> float:
    avg = trace.running_average("opt")
    return fit_loglog_slope(avg, (SLOPE_WINDOW_START, avg.size))


def _gate(ok: bool) -> str:
    return "pass" if ok else "fail"


def _join(vals, fmt="{:.6g}"):
    return ",".join("" if v is None else fmt.format(v) for v in vals)


def _map(fn, args, workers):
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, args))
    return [fn(a) for a in args]


# ---------------------------------------------------------------------------
# runners


def _is_data(cfg):
    rng = stream(cfg.seed, 0)
    X = gen_design(cfg.n, cfg.p, cfg.design, rng)
    beta_star = _beta_star(cfg.beta_star, cfg.p, rng)
    y = X @ beta_star + rng.normal(0.0, math.sqrt(cfg.noise_sigma2), cfg.n)
    floored = int(np.count_nonzero(y <= Y_FLOOR))
    if floored:
        log.warning("floored %d nonpositive responses at %g", floored, Y_FLOOR)
    return X, np.maximum(y, Y_FLOOR), beta_star, floored


def _is_start(cfg, run_id):
    return stream(cfg.seed, run_id).uniform(size=cfg.p)


def _is_one(args):
    cfg, run_id, X, y = args
    prob = MirrorProblem(ItakuraSaitoLoss(X, y), cfg.rho)
    try:
        return run(prob, _is_start(cfg, run_id), RunConfig(max_iter=cfg.iters, tol=-1.0))
    except SolverError as exc:
        raise SolverError(f"is-mirror run {run_id}: {exc}", trace=exc.trace, cause=exc) from exc


def run_is_mirror(cfg: ExperimentConfig) -> ExperimentResult:
    """Entropic mirror descent on the Itakura-Saito loss from random positive starts."""
    cfg = cfg.resolved()
    if cfg.design != "uniform01":
        raise ConfigError("is-mirror needs the uniform01 design")
    X, y, _, floored = _is_data(cfg)
    ids = list(range(1, cfg.replications + 1))
    traces = _map(_is_one, [(cfg, r, X, y) for r in ids], cfg.workers)
    table = TraceTable(meta={"experiment": "is-mirror", "opt_error": "2 rho sym_entropy_gbf - backward_loss_gbf",
                             "stat_error": "none", "y_floored": floored})
    slopes = []
    for r, tr in zip(ids, traces):
        _assert_bound(tr, r, "is-mirror")
        table.rows += trace_rows(tr, r, cfg.timing)
        slopes.append(_slope_of(tr))
    frac = float(np.mean(np.asarray(slopes) <= SLOPE_GATE))
    summary = dict(experiment="is-mirror", seed=cfg.seed, n=cfg.n, p=cfg.p, starts=len(ids),
                   iters=cfg.iters, y_floored=floored, slope_fraction=f"{frac:.6g}",
                   gate_bound="pass", gate_slope=_gate(frac >= SLOPE_FRACTION_GATE),
                   slopes=_join(slopes))
    return ExperimentResult("is-mirror", {"trace": table}, summary, {"plain": traces})


def _dc_data(cfg):
    rng = stream(cfg.seed, 0)
    X = gen_design(cfg.n, cfg.p, cfg.design, rng)
    beta_star = _beta_star(cfg.beta_star, cfg.p, rng)
    y = np.sign(X @ beta_star + rng.normal(0.0, math.sqrt(cfg.noise_sigma2), cfg.n))
    y[y == 0] = 1.0
    return X, y, beta_star


def _dc_one(args):
    cfg, run_id, X, y = args
    prob = DcSvmProblem(X, y, cfg.lam)
    beta0 = stream(cfg.seed, run_id).uniform(size=cfg.p)
    try:
        return run(prob, beta0, RunConfig(max_iter=cfg.iters, tol=-1.0))
    except SolverError as exc:
        cause = exc.cause if exc.cause is not None else exc
        if isinstance(cause, LpFailure):
            raise LpFailure(f"dc-svm run {run_id}: {cause}", status=cause.status,
                            iteration=cause.iteration) from exc
        raise


def run_dc_svm(cfg: ExperimentConfig) -> ExperimentResult:
    """DC iterations for the capped-l1 SVM, one LP per distinct linearization."""
    cfg = cfg.resolved()
    X, y, _ = _dc_data(cfg)
    ids = list(range(1, cfg.replications + 1))
    traces = _map(_dc_one, [(cfg, r, X, y) for r in ids], cfg.workers)
    table = TraceTable(meta={"experiment": "dc-svm", "opt_error": "hinge_gbf + backward_d2_gbf + d1_gbf",
                             "stat_error": "none"})
    slopes, mono = [], []
    for r, tr in zip(ids, traces):
        _assert_bound(tr, r, "dc-svm")
        table.rows += trace_rows(tr, r, cfg.timing)
        mono.append(tr.is_monotone())
        try:
            slopes.append(_slope_of(tr))
        except InsufficientData:
            slopes.append(None)
    ok = [s is not None and s <= SLOPE_GATE for s in slopes]
    frac = float(np.mean(ok))
    summary = dict(experiment="dc-svm", seed=cfg.seed, n=cfg.n, p=cfg.p, starts=len(ids),
                   iters=cfg.iters, lam=cfg.lam, slope_fraction=f"{frac:.6g}",
                   gate_bound="pass", gate_slope=_gate(frac >= SLOPE_FRACTION_GATE),
                   gate_monotone=_gate(all(mono)), slopes=_join(slopes))
    return ExperimentResult("dc-svm", {"trace": table}, summary, {"plain": traces})


def _sparse_data(cfg, rng):
    X = gen_design(cfg.n, cfg.p, cfg.design, rng)
    beta_star = _beta_star(cfg.beta_star, cfg.p, rng)
    err = rng.normal(0.0, math.sqrt(cfg.noise_sigma2), cfg.n)
    return X, X @ beta_star + err, beta_star, err


def _sparse_lambda(cfg):
    return cfg.lambda_A * math.sqrt(cfg.noise_sigma2) * math.sqrt(math.log(math.e * cfg.p))


def _a_values(cfg):
    try:
        vals = [float(v) for v in cfg.a_values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad a_values {cfg.a_values!r}") from exc
    if not vals or any(v <= 0 for v in vals):
        raise ConfigError("a_values must be positive")
    return vals


def _make_losses(cfg, X, y, err, names):
    out = {}
    for name in names:
        if name == "squared":
            out[name] = SquaredLoss(X, y)
        elif cfg.tukey_scale == "response":
            out[name] = TukeyLoss.from_residuals(X, y, y)
        else:
            out[name] = TukeyLoss.from_residuals(X, y, err)
    return out


def _sparse_rep(args):
    cfg, rep, loss_names = args
    rng = stream(cfg.seed, rep)
    X, y, beta_star, err = _sparse_data(cfg, rng)
    starts = [rng.uniform(-a, a, size=cfg.p) for a in _a_values(cfg) for _ in range(cfg.starts_per_a)]
    lam = _sparse_lambda(cfg)
    scale = spectral_norm(X)
    out = {}
    for loss_name, loss in _make_losses(cfg, X, y, err, loss_names).items():
        for solver in ("tisp", "lla"):
            cls = TispProblem if solver == "tisp" else LlaProblem
            prob = cls(loss, "hard", lam, scale)
            runs = []
            for k, b0 in enumerate(starts):
                tr = run(prob, b0, RunConfig(max_iter=cfg.iters, beta_star=beta_star))
                runs.append(tr)
            out[(solver, loss_name)] = runs
    return rep, beta_star, out


def _sparse_summary(cfg, results, loss_names, label):
    tables, summary, traces = {}, {}, {}
    n_starts = len(_a_values(cfg)) * cfg.starts_per_a
    summary.update(experiment=label, seed=cfg.seed, n=cfg.n, p=cfg.p,
                   replications=cfg.replications, iters=cfg.iters,
                   lam=f"{_sparse_lambda(cfg):.17g}", tukey_scale=cfg.tukey_scale,
                   estimator="min-objective start per replication")
    gates = {}
    for solver in ("tisp", "lla"):
        for loss_name in loss_names:
            key = f"{solver}_{loss_name}"
            table = TraceTable(meta={"experiment": label, "solver": solver, "loss": loss_name,
                                     "stat_error": "tisp: (s^2 D2 - loss_gbf)(beta*, beta)"
                                     if solver == "tisp" else "lla: lla_gbf(beta*, beta)",
                                     "run_id": "replication * 1000 + start"})
            errors, support, spread, start_err = [], [], [], []
            for rep, beta_star, out in results:
                runs = out[(solver, loss_name)]
                for k, tr in enumerate(runs):
                    rid = rep * 1000 + k + 1
                    _assert_bound(tr, rid, key)
                    table.rows += trace_rows(tr, rid, cfg.timing)
                    start_err.append(float(np.sum((tr.final_beta - beta_star) ** 2)))
                best = min(runs, key=lambda tr: tr.objectives[-1])
                errors.append(float(np.sum((best.final_beta - beta_star) ** 2)))
                support.append(bool(np.array_equal(np.flatnonzero(best.final_beta),
                                                   np.flatnonzero(beta_star))))
                finals = np.array([tr.stat_errors[-1] for tr in runs], dtype=float)
                pos = finals[finals > 0]
                spread.append(float(pos.max() / pos.min()) if pos.size else 1.0)
                traces.setdefault(key, []).append(runs)
            tables[key] = table
            mean_err = float(np.mean(errors))
            summary[f"{key}_mean_sq_error"] = f"{mean_err:.6g}"
            summary[f"{key}_max_sq_error"] = f"{max(errors):.6g}"
            summary[f"{key}_support_rate"] = f"{np.mean(support):.6g}"
            summary[f"{key}_max_start_spread"] = f"{max(spread):.6g}"
            summary[f"{key}_start_sq_error_median"] = f"{np.median(start_err):.6g}"
            summary[f"{key}_start_sq_error_max"] = f"{max(start_err):.6g}"
            gates[f"gate_{key}_error"] = _gate(mean_err <= SPARSE_ERROR_GATE)
            if loss_name == "squared":
                gates[f"gate_{key}_support"] = _gate(np.mean(support) >= SUPPORT_GATE)
    summary["starts_per_replication"] = n_starts
    summary["gate_bound"] = "pass"
    summary.update(gates)
    return tables, summary, traces


def run_sparse_reg(cfg: ExperimentConfig, losses=("squared", "tukey")) -> ExperimentResult:
    """Hard-penalized TISP and LLA under squared and Tukey losses over replications."""
    cfg = cfg.resolved()
    label = cfg.experiment if cfg.experiment in ("sparse-reg", "robust-reg") else "sparse-reg"
    reps = list(range(1, cfg.replications + 1))
    results = _map(_sparse_rep, [(cfg, r, tuple(losses)) for r in reps], cfg.workers)
    tables, summary, traces = _sparse_summary(cfg, results, tuple(losses), label)
    return ExperimentResult(label, tables, summary, traces)


def run_robust_reg(cfg: ExperimentConfig) -> ExperimentResult:
    """Sparse regression restricted to the Tukey loss."""
    return run_sparse_reg(cfg, losses=("tukey",))


def _accel_is_one(args):
    cfg, run_id, X, y = args
    loss = ItakuraSaitoLoss(X, y)
    b0 = _is_start(cfg, run_id)
    plain = run(MirrorProblem(loss, cfg.rho), b0, RunConfig(max_iter=cfg.iters, tol=-1.0))
    acc = run_accelerated(AccelProblem(loss), b0,
                          AccelConfig(scheme="second", mirror="entropy", rho_min=cfg.rho_min,
                                      max_iter=cfg.iters))
    return plain, acc


def _accel_robust_one(args):
    cfg, rep = args
    rng = stream(cfg.seed, rep)
    X, y, beta_star, err = _sparse_data(cfg, rng)
    b0 = rng.uniform(-1.0, 1.0, size=cfg.p)
    loss = _make_losses(cfg, X, y, err, ("tukey",))["tukey"]
    lam = _sparse_lambda(cfg)
    scale = spectral_norm(X)
    plain = run(TispProblem(loss, "hard", lam, scale), b0,
                RunConfig(max_iter=cfg.iters, tol=-1.0, beta_star=beta_star))
    # the search tops out at rho = scale^2, the plain curvature
    acc_cfg = AccelConfig(scheme="first", rho_min=scale ** 2 / 8.0, alpha=2.0, M=3,
                          max_iter=cfg.iters)
    prob = TispProblem(loss, "hard", lam, scale)
    star = prob.evaluate(beta_star)
    acc = run_accelerated(AccelProblem(loss, "hard", lam, scale), b0, acc_cfg,
                          stat_error=lambda b: prob.stat_error(star, prob.evaluate(b)))
    return plain, acc


def _plateau(objectives):
    f = np.asarray(objectives, dtype=float)
    return iterations_to_target(f, f[-1], PLATEAU_RTOL)


def run_accel_compare(cfg: ExperimentConfig) -> ExperimentResult:
    """Plain versus accelerated runs on shared data and starts with equal budgets."""
    cfg = cfg.resolved()
    ids = list(range(1, cfg.replications + 1))
    if cfg.target == "is-mirror":
        X, y, _, floored = _is_data(cfg)
        pairs = _map(_accel_is_one, [(cfg, r, X, y) for r in ids], cfg.workers)
    else:
        floored = 0
        pairs = _map(_accel_robust_one, [(cfg, r) for r in ids], cfg.workers)
    plain_t, accel_t = TraceTable(meta={"experiment": "accel-compare", "target": cfg.target,
                                        "variant": "plain"}), \
        TraceTable(meta={"experiment": "accel-compare", "target": cfg.target,
                         "variant": "second" if cfg.target == "is-mirror" else "first"})
    hits, ratios = [], []
    for r, (plain, acc) in zip(ids, pairs):
        _assert_bound(plain, r, "accel-compare plain")
        plain_t.rows += trace_rows(plain, r, cfg.timing)
        accel_t.rows += trace_rows(acc, r, cfg.timing)
        if cfg.target == "is-mirror":
            hits.append(iterations_to_target(acc.objectives, plain.objectives[-1]))
        else:
            pp, pa = _plateau(plain.objectives), _plateau(acc.objectives)
            hits.append(pa)
            ratios.append(pa / pp if pp else (0.0 if pa == 0 else math.inf))
    summary = dict(experiment="accel-compare", target=cfg.target, seed=cfg.seed, n=cfg.n,
                   p=cfg.p, runs=len(ids), iters=cfg.iters, gate_bound="pass")
    if cfg.target == "is-mirror":
        ok = [h is not None and h <= ACCEL_IS_BUDGET for h in hits]
        frac = float(np.mean(ok))
        summary.update(y_floored=floored, accel_hit_fraction=f"{frac:.6g}",
                       iterations_to_target=_join(hits, "{}"),
                       gate_accel=_gate(frac >= ACCEL_FRACTION_GATE))
    else:
        med = float(np.median(ratios))
        summary.update(plateau_ratio_median=f"{med:.6g}", plateau_ratios=_join(ratios),
                       gate_accel=_gate(med <= ROBUST_PLATEAU_RATIO))
    return ExperimentResult("accel-compare", {"trace_plain": plain_t, "trace_accel": accel_t},
                            summary, {"pairs": pairs})


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Dispatch on ``cfg.experiment`` and write CSVs plus ``summary.txt`` to ``out_dir``."""
    exp = cfg.resolved().experiment
    if exp == "invariants":
        from .invariants import run_invariants
        result = run_invariants(cfg)
    else:
        fn = {"is-mirror": run_is_mirror, "dc-svm": run_dc_svm, "sparse-reg": run_sparse_reg,
              "robust-reg": run_robust_reg, "accel-compare": run_accel_compare}[exp]
        result = fn(cfg)
    if write:
        os.makedirs(cfg.out_dir, exist_ok=True)
        for name, table in result.tables.items():
            write_trace_csv(os.path.join(cfg.out_dir, f"{name}.csv"), table)
        write_summary(os.path.join(cfg.out_dir, "summary.txt"), result.summary)
    return result
