"""End-to-end acceptance checks; each test records one pass/fail line for the session report."""

import math
import time

import numpy as np

from bregsurr.accel import AccelConfig, AccelProblem, run_accelerated, strongly_convex_config
from bregsurr.experiments import ExperimentConfig, run_experiment
from bregsurr.gbf import quadratic_form
from bregsurr.losses import make_loss
from bregsurr.solvers import GradientProblem, RunConfig, run, run_nmf

from test_solvers import families


def timed(cfg):
    t0 = time.perf_counter()
    res = run_experiment(cfg, write=False)
    return res, time.perf_counter() - t0


def quadratic(seed, d, kappa):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    H = Q @ np.diag(np.linspace(1.0, kappa, d)) @ Q.T
    f = quadratic_form(H, rng.normal(size=d))
    return f, np.linalg.solve(H, -f.gradient(np.zeros(d)))


def test_rates_one_over_T(acceptance):
    is_res, is_sec = timed(ExperimentConfig(experiment="is-mirror", seed=42))
    dc_res, dc_sec = timed(ExperimentConfig(experiment="dc-svm", seed=42))
    is_frac = float(is_res.summary["slope_fraction"])
    dc_frac = float(dc_res.summary["slope_fraction"])
    ok = is_frac >= 0.95 and dc_frac >= 0.95 and is_sec < 60 and dc_sec < 600
    acceptance(1, ok, f"IS slope<=-0.9 fraction {is_frac:.3f} in {is_sec:.1f}s; "
                      f"DC fraction {dc_frac:.3f} in {dc_sec:.1f}s")
    assert ok


def test_bound_on_solver_battery(acceptance):
    checked, bad = 0, 0
    for seed in range(30):
        for prob, b0 in families(seed):
            tr = run(prob, b0, RunConfig(max_iter=60, tol=-1.0))
            checked += 1
            bad += not tr.check_bound()
    rng = np.random.default_rng(0)
    for _ in range(10):
        X = rng.uniform(0.5, 2.0, (6, 5))
        tr = run_nmf(X, rng.uniform(0.5, 1.5, (6, 2)), rng.uniform(0.5, 1.5, (2, 5)), 20.0, 60)
        checked += 1
        bad += not tr.check_bound()
    acceptance(2, bad == 0, f"battery {checked} runs, {bad} violations")
    assert bad == 0


def test_gradient_descent_linear_rate(acceptance):
    t0 = time.perf_counter()
    kappa = 10.0
    f, xs = quadratic(0, 20, kappa)
    b0 = np.random.default_rng(1).normal(size=20) * 3
    tr = run(GradientProblem(f, kappa), b0, RunConfig(max_iter=200, tol=-1.0, record_iterates=True))
    D = np.array([0.5 * np.sum((xs - b) ** 2) for b in tr.iterates])
    bound = ((kappa - 1) / (kappa + 1)) ** np.arange(D.size) * D[0] * 1.000001
    sec = time.perf_counter() - t0
    ok = bool(np.all(D <= bound)) and D.size == 201 and sec < 1.0
    acceptance(3, ok, f"max D2/bound {float(np.max(D / bound)):.9f} over t<=200 in {sec:.3f}s")
    assert ok


def test_sparse_regression_plateau(acceptance):
    res, sec = timed(ExperimentConfig(experiment="sparse-reg", full_scale=True, seed=42))
    s = res.summary
    errs = {k: float(s[f"{k}_mean_sq_error"]) for k in ("tisp_squared", "tisp_tukey",
                                                        "lla_squared", "lla_tukey")}
    supp = {k: float(s[f"{k}_support_rate"]) for k in ("tisp_squared", "lla_squared")}
    ok = all(v <= 5.0 for v in errs.values()) and all(v >= 0.9 for v in supp.values()) and sec < 300
    detail = ", ".join(f"{k} err {v:.3g}" for k, v in errs.items())
    detail += ", " + ", ".join(f"{k} support {v:.2f}" for k, v in supp.items())
    acceptance(4, ok, f"{detail}; {sec:.0f}s")
    assert ok


def test_accelerated_mirror_descent(acceptance):
    res, sec = timed(ExperimentConfig(experiment="accel-compare", target="is-mirror", seed=42))
    frac = float(res.summary["accel_hit_fraction"])
    hits = [int(h) for h in res.summary["iterations_to_target"].split(",") if h]
    ok = frac >= 0.9 and sec < 120
    acceptance(5, ok, f"hit fraction {frac:.3f}, max iterations {max(hits)} in {sec:.1f}s")
    assert ok


def logistic_instance():
    rng = np.random.default_rng(6)
    n, p = 500, 50
    X = rng.normal(size=(n, p)) / math.sqrt(n)
    y = (rng.random(n) < 1 / (1 + np.exp(-X @ rng.normal(size=p) * math.sqrt(n) * 0.3))).astype(float)
    return X, y


def newton_minimum(X, y):
    b = np.zeros(X.shape[1])
    for _ in range(100):
        pr = 1 / (1 + np.exp(-X @ b))
        g = X.T @ (pr - y)
        if np.linalg.norm(g) < 1e-13:
            break
        b = b - np.linalg.solve(X.T @ (X * (pr * (1 - pr))[:, None]), g)
    eta = X @ b
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta))


def test_accelerated_convex_certificate(acceptance):
    t0 = time.perf_counter()
    X, y = logistic_instance()
    fstar = newton_minimum(X, y)
    tr = run_accelerated(AccelProblem(make_loss("glm_logistic", X, y)), np.zeros(X.shape[1]),
                         AccelConfig(max_iter=501))
    f = np.asarray(tr.objectives)
    T = np.arange(10, 501)
    scaled = T.astype(float) ** 2 * (f[T + 1] - fstar)
    sec = time.perf_counter() - t0
    ok = bool(np.all(scaled <= 3 * scaled[0])) and sec < 30
    acceptance(6, ok, f"max T^2 gap / value at T=10 = {scaled.max() / scaled[0]:.3f} in {sec:.2f}s")
    assert ok


def test_strongly_convex_acceleration(acceptance):
    kappa = 100.0
    f, xs = quadratic(2, 20, kappa)
    fs = f(xs)
    b0 = np.random.default_rng(3).normal(size=20) * 3
    acc = run_accelerated(AccelProblem(f), b0, strongly_convex_config(kappa, 1.0, max_iter=50))
    gd = run(GradientProblem(f, kappa), b0, RunConfig(max_iter=50, tol=-1.0))
    gaps, gd_gaps = np.asarray(acc.objectives) - fs, np.asarray(gd.objectives) - fs
    factor = (gaps[50] / gaps[0]) ** (1 / 50)
    gd_factor = (gd_gaps[50] / gd_gaps[0]) ** (1 / 50)
    q = math.sqrt(4 * kappa - 3)
    limit = (q - 1) / (q + 1) * 1.02
    ok = factor <= limit and factor < gd_factor and factor < (kappa - 1) / (kappa + 1)
    acceptance(7, ok, f"factor {factor:.4f} <= {limit:.4f}; gradient descent {gd_factor:.4f}, "
                      f"its rate {(kappa - 1) / (kappa + 1):.4f}")
    assert ok


def test_property_suites(acceptance):
    res, sec = timed(ExperimentConfig(experiment="invariants"))
    gates = {k[5:]: v for k, v in res.summary.items() if k.startswith("gate_")}
    failed = [k for k, v in gates.items() if v != "pass"]
    acceptance(8, not failed, f"{len(gates) - len(failed)}/{len(gates)} suites pass"
                              + (f", failed: {','.join(failed)}" if failed else "") + f" in {sec:.1f}s")
    assert not failed
