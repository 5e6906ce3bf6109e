"""Self-checks run by ``bregsurr check invariants``.

Each check returns ``(ok, detail)`` and uses an oracle independent of the
code path it verifies: quadrature for the integral form, brute-force
enumeration for quantile thresholding and for LPs, central differences for
gradients, and byte comparison for CSV determinism.
"""

from __future__ import annotations

import itertools
import os
import tempfile

import numpy as np

from .gbf import (compose_affine, eval_gbf_via_integral, gbf, half_sq_norm, linear_combination,
                  anchored_gbf, negative_entropy, quadratic_form, DirectionalFunction)
from .lp import OPTIMAL, StandardFormLP, solve_simplex
from .losses import make_loss
from .thresholds import get_rule, lifted_gap_min, quantile_threshold

GBF_TOL = 1e-7
SHARPNESS_TOL = 1e-9
SHARPNESS_MARGIN = 0.05
LP_TOL = 1e-8
FD_TOL = 1e-5
BUILTIN_RULES = ("soft", "hard", "scad", "mcp")

__all__ = ["check_gbf_identities", "check_lifted_gap", "check_quantile_bruteforce",
           "check_simplex_vertices", "check_gradients", "check_csv_determinism",
           "vertex_enumeration", "run_invariants", "CHECKS"]


def _log_sum_exp(dim):
    def value(b):
        m = b.max()
        return float(m + np.log(np.sum(np.exp(b - m))))

    def grad(b):
        e = np.exp(b - b.max())
        return e / e.sum()

    return DirectionalFunction.from_gradient(value, grad, dim)


def check_gbf_identities(seed: int = 0, trials: int = 20):
    """Linearity, affine composition, idempotence and the integral form."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        d, m = 4, 6
        psi, phi = _log_sum_exp(d), negative_entropy(d)
        b, g = rng.uniform(0.2, 2.0, d), rng.uniform(0.2, 2.0, d)
        a1, a2 = rng.normal(size=2)
        lin = gbf(linear_combination(a1, psi, a2, phi), b, g, use_exact=False)
        worst = max(worst, abs(lin - a1 * gbf(psi, b, g) - a2 * gbf(phi, b, g)))
        X = rng.normal(size=(m, d))
        c = rng.normal(size=m)
        comp = gbf(compose_affine(_log_sum_exp(m), X, c), b, g)
        worst = max(worst, abs(comp - gbf(_log_sum_exp(m), X @ b + c, X @ g + c)))
        anchor = rng.normal(size=d)
        worst = max(worst, abs(gbf(anchored_gbf(psi, anchor), b, g) - gbf(psi, b, g)))
        Q = rng.normal(size=(d, d))
        quad = quadratic_form(Q @ Q.T)
        worst = max(worst, abs(eval_gbf_via_integral(quad, b, g) - gbf(quad, b, g)))
        worst = max(worst, abs(eval_gbf_via_integral(psi, b, g) - gbf(psi, b, g)))
        worst = max(worst, abs(gbf(half_sq_norm(d), b, g, use_exact=False) - 0.5 * np.sum((b - g) ** 2)))
    return worst <= GBF_TOL, f"max deviation {worst:.3e}"


def check_lifted_gap(lam: float = 1.0, n_grid: int = 200):
    """``gbf(P) + L ||.||^2/2 >= 0`` on a grid at the concavity number, violated just below it."""
    grid = np.linspace(-4.0 * lam, 4.0 * lam, n_grid)
    parts, ok = [], True
    for name in BUILTIN_RULES:
        rule = get_rule(name)
        L = rule.concavity
        at = lifted_gap_min(rule, lam, L, grid)
        below = lifted_gap_min(rule, lam, L - SHARPNESS_MARGIN, grid)
        good = at >= -SHARPNESS_TOL and below < 0
        ok &= good
        parts.append(f"{name}: min={at:.2e} below={below:.2e}")
    return ok, "; ".join(parts)


def _quantile_brute(alpha, q):
    best, arg = np.inf, None
    for S in itertools.combinations(range(alpha.size), q):
        z = np.zeros_like(alpha)
        z[list(S)] = alpha[list(S)]
        v = 0.5 * float(np.sum((z - alpha) ** 2))
        if v < best:
            best, arg = v, z
    return best, arg


def check_quantile_bruteforce(seed: int = 0, trials: int = 40, max_p: int = 12):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        p = int(rng.integers(1, max_p + 1))
        q = int(rng.integers(0, p + 1))
        alpha = rng.normal(size=p)
        z = quantile_threshold(alpha, q)
        best, _ = _quantile_brute(alpha, q)
        if np.count_nonzero(z) > q:
            return False, f"support {np.count_nonzero(z)} exceeds q={q}"
        worst = max(worst, abs(0.5 * float(np.sum((z - alpha) ** 2)) - best))
    return worst <= 1e-12, f"max objective gap {worst:.3e}"


def vertex_enumeration(lp: StandardFormLP, tol: float = 1e-9):
    """Best objective over all basic feasible solutions, or ``inf`` if none exists."""
    A, b, c = lp.A, lp.b, lp.c
    m, n = A.shape
    best = np.inf
    for B in itertools.combinations(range(n), m):
        AB = A[:, B]
        if abs(np.linalg.det(AB)) < 1e-12:
            continue
        xB = np.linalg.solve(AB, b)
        if np.all(xB >= -tol):
            best = min(best, float(c[list(B)] @ xB))
    return best


def check_simplex_vertices(seed: int = 0, trials: int = 100, m: int = 6, n: int = 10):
    """Agreement with vertex enumeration on bounded feasible random LPs."""
    rng = np.random.default_rng(seed)
    worst, compared = 0.0, 0
    for _ in range(trials):
        A = rng.normal(size=(m, n))
        x0 = rng.uniform(0.1, 1.0, n)
        lp = StandardFormLP(A, A @ x0, rng.uniform(0.1, 2.0, n))
        sol = solve_simplex(lp)
        ref = vertex_enumeration(lp)
        if sol.status != OPTIMAL or not np.isfinite(ref):
            return False, f"status {sol.status}, enumeration {ref}"
        worst = max(worst, abs(sol.objective - ref) / max(1.0, abs(ref)))
        compared += 1
    return worst <= LP_TOL, f"{compared} LPs, max relative gap {worst:.3e}"


def check_gradients(seed: int = 0):
    """Loss gradients against central differences at relative tolerance 1e-5."""
    rng = np.random.default_rng(seed)
    n, p = 30, 5
    X = rng.normal(size=(n, p))
    beta = rng.normal(size=p) * 0.3
    Xpos = rng.uniform(0.5, 1.5, size=(n, p))
    bpos = rng.uniform(0.5, 1.5, size=p)
    cases = [
        ("squared", X, rng.normal(size=n), {}, beta),
        ("glm_gaussian", X, rng.normal(size=n), {"sigma2": 2.0}, beta),
        ("glm_logistic", X, rng.integers(0, 2, n).astype(float), {}, beta),
        ("glm_poisson", X, rng.poisson(1.0, n).astype(float), {}, beta),
        ("huber", X, rng.normal(size=n), {"delta": 0.7}, beta),
        ("tukey", X, rng.normal(size=n), {"c": 2.0}, beta),
        ("itakura_saito", Xpos, rng.uniform(1.0, 3.0, n), {}, bpos),
        ("kl_nmf", Xpos, rng.uniform(1.0, 3.0, n), {}, bpos),
        ("sigmoidal", X, rng.uniform(0.0, 1.0, n), {}, beta),
    ]
    worst, parts = 0.0, []
    for kind, Xk, yk, params, b in cases:
        loss = make_loss(kind, Xk, yk, **params)
        g = loss.gradient(b)
        eps = 1e-6 * (1.0 + np.linalg.norm(b))
        fd = np.array([(loss.value(b + eps * e) - loss.value(b - eps * e)) / (2 * eps)
                       for e in np.eye(p)])
        err = float(np.linalg.norm(fd - g) / max(1.0, np.linalg.norm(g)))
        worst = max(worst, err)
        parts.append(kind)
    return worst <= FD_TOL, f"{len(parts)} losses, max relative error {worst:.3e}"


def check_csv_determinism(seed: int = 7):
    """Two identical small runs must write byte-identical files."""
    from .experiments import ExperimentConfig, run_experiment
    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(2):
            out = os.path.join(tmp, f"run{k}")
            cfg = ExperimentConfig(experiment="is-mirror", n=20, p=15, replications=3, iters=30,
                                   seed=seed, out_dir=out)
            run_experiment(cfg)
            files = sorted(os.listdir(out))
            blobs.append({f: open(os.path.join(out, f), "rb").read() for f in files})
    same = blobs[0] == blobs[1]
    return same, f"{len(blobs[0])} files {'identical' if same else 'differ'}"


CHECKS = {
    "gbf_identities": check_gbf_identities,
    "lifted_gap": check_lifted_gap,
    "quantile_bruteforce": check_quantile_bruteforce,
    "simplex_vertices": check_simplex_vertices,
    "gradients": check_gradients,
    "csv_determinism": check_csv_determinism,
}


def run_invariants(cfg=None):
    from .experiments import ExperimentResult
    summary = {"experiment": "invariants"}
    for name, fn in CHECKS.items():
        ok, detail = fn()
        summary[f"{name}_detail"] = detail
        summary[f"gate_{name}"] = "pass" if ok else "fail"
    return ExperimentResult("invariants", {}, summary)
