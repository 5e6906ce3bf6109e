"""Momentum accelerations of the first and second kind with a backtracking-free line search.

Objectives are composite, ``f = l + sum_j P(s beta_j; lam)`` with smooth ``l``,
or ``l`` alone under an optional ``||beta||_0 <= q`` constraint. The lifted
reference function is ``psi0 = l - c ||.||^2 / 2`` and the mirror map ``phi``
is ``||.||^2 / 2`` or the negative entropy.

Each iteration tries ``rho = rho_min, alpha rho_min, ...`` and accepts the
first trial whose certificate ``R_t`` is nonnegative. After ``M + 1`` failed
trials the one with the largest ``R_t / (theta^2 rho)`` is kept, ties going
to the smallest ``rho``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError, SolverError, Unsupported
from .solvers import (GradientProblem, IterateTrace, MirrorProblem, Point,
                      QuantileTispProblem, TispProblem, _Smooth,
                      threshold_prox)
from .thresholds import get_rule, quantile_threshold

RECURRENCE_TOL = 1e-10
POWER_ITERS = 100
POWER_TOL = 1e-10

__all__ = [
    "AccelConfig", "AccelState", "AccelProblem", "theta_update", "second_kind_step",
    "first_kind_step", "line_search_iterate", "run_accelerated",
    "accelerated_quantile_tisp", "strongly_convex_config", "power_norm_sq",
    "strongly_convex_theta", "recurrence_residual",
]


def theta_update(theta_prev: float, rho_prev: float, rho_new: float, mu0: float) -> float:
    """Positive root of ``theta^2 / (1 - theta) = r`` with ``r = (rho_prev theta_prev + mu0) theta_prev / rho_new``."""
    if not (0.0 < theta_prev <= 1.0) or rho_prev <= 0 or rho_new <= 0 or mu0 < 0:
        raise DomainError("theta_update needs theta_prev in (0, 1], positive rhos, mu0 >= 0")
    r = (rho_prev * theta_prev + mu0) * theta_prev / rho_new
    # (sqrt(r^2 + 4r) - r) / 2 without cancellation for large r
    return 2.0 * r / (math.sqrt(r * r + 4.0 * r) + r)


def strongly_convex_theta(kappa: float) -> float:
    """``2 / (sqrt(4 kappa - 3) + 1)``, the fixed point of the theta recurrence."""
    if kappa < 1:
        raise DomainError("condition number must be at least 1")
    return 2.0 / (math.sqrt(4.0 * kappa - 3.0) + 1.0)


def recurrence_residual(theta, theta_prev, rho, rho_prev, mu0) -> float:
    """``theta^2/(1 - theta) - theta_prev (rho_prev theta_prev + mu0) / rho``, relative."""
    lhs = theta * theta / (1.0 - theta) if theta < 1.0 else math.inf
    rhs = theta_prev * (rho_prev * theta_prev + mu0) / rho
    return abs(lhs - rhs) / max(1.0, abs(rhs))


def power_norm_sq(X, iters: int = POWER_ITERS, tol: float = POWER_TOL, seed: int = 0) -> float:
    """``||X||_2^2`` by power iteration on ``X'X``."""
    X = np.asarray(X, dtype=float)
    v = np.random.default_rng(seed).standard_normal(X.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = X.T @ (X @ v)
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return est


@dataclass
class AccelConfig:
    """Settings for an accelerated run.

    ``lift`` is the constant ``c`` in ``psi0 = l - c ||.||^2/2``.
    ``line_search=False`` uses ``rho = rho_min`` at every iteration.
    ``momentum=False`` forces ``gamma = beta`` (first kind) or ``theta = 1``
    (second kind), which reproduces the plain surrogate iteration.
    """

    scheme: str = "second"
    rho_min: float = 1.0
    alpha: float = 2.0
    M: int = 3
    mu0: float = 0.0
    theta0: float = 1.0
    mirror: str = "quadratic"
    max_iter: int = 1000
    tol: float = 0.0
    lift: float = 0.0
    line_search: bool = True
    momentum: bool = True
    debug: bool = False

    def __post_init__(self):
        if self.scheme not in ("first", "second"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.rho_min <= 0:
            raise ConfigError("rho_min must be positive")
        if self.alpha <= 1:
            raise ConfigError("alpha must exceed 1")
        if int(self.M) < 1:
            raise ConfigError("M must be at least 1")
        if self.mu0 < 0 or self.lift < 0:
            raise ConfigError("mu0 and lift must be nonnegative")
        if not 0.0 < self.theta0 <= 1.0:
            raise ConfigError("theta0 must lie in (0, 1]")
        if self.mirror not in ("quadratic", "entropy"):
            raise ConfigError(f"mirror map {self.mirror!r} is not supported")
        if self.mirror == "entropy" and self.scheme == "first":
            raise ConfigError("the first kind uses the quadratic mirror map only")


def strongly_convex_config(L: float, mu: float, **kw) -> AccelConfig:
    """Second kind with ``mu0 = mu``, fixed ``rho = L - mu`` and constant theta."""
    if not 0 < mu < L:
        raise ConfigError("need 0 < mu < L")
    theta = strongly_convex_theta(L / mu)
    return AccelConfig(scheme="second", rho_min=L - mu, mu0=mu, theta0=theta,
                       line_search=False, **kw)


@dataclass
class AccelState:
    alpha_iter: np.ndarray
    beta_iter: np.ndarray
    gamma_iter: Optional[np.ndarray]
    theta_t: float
    rho_t: float
    t: int = 0
    last_Rt: float = float("nan")
    searches_used: int = 0
    beta_prev: Optional[np.ndarray] = None
    beta_pt: Optional[Point] = None
    f_beta: float = float("nan")
    candidates: list = field(default_factory=list)


class AccelProblem:
    """``f = l + sum P(scale beta; lam)`` or ``l`` under ``||beta||_0 <= q``."""

    def __init__(self, loss, rule=None, lam: float = 0.0, scale: float = 1.0,
                 q: Optional[int] = None):
        self.smooth = _Smooth(loss)
        self.rule = get_rule(rule) if rule is not None else None
        self.lam = float(lam)
        self.scale = float(scale)
        self.q = None if q is None else int(q)
        if self.rule is not None and self.q is not None:
            raise ConfigError("use either a penalty or a sparsity constraint")

    @classmethod
    def from_problem(cls, prob):
        if isinstance(prob, TispProblem):
            return cls(prob.loss, prob.rule, prob.lam, prob.scale)
        if isinstance(prob, QuantileTispProblem):
            return cls(prob.loss, q=prob.q)
        if isinstance(prob, (GradientProblem, MirrorProblem)):
            return cls(prob.smooth.loss or prob.smooth.fn)
        raise Unsupported(f"no accelerated form for {type(prob).__name__}")

    def point(self, beta) -> Point:
        return self.smooth.point(beta)

    def value_only(self, beta) -> Point:
        return self.smooth.point(beta, with_grad=False)

    def penalty(self, beta) -> float:
        if self.rule is None:
            return 0.0
        return float(np.sum(self.rule.penalty(self.scale * beta, self.lam)))

    def f(self, pt: Point) -> float:
        return pt.loss + self.penalty(pt.beta)

    def l_gbf(self, b: Point, a: Point) -> float:
        return self.smooth.gbf(b, a)

    def prox(self, center, weight):
        """``argmin_b P(scale b) + weight ||b - center||^2 / 2`` (or the sparsity projection)."""
        if self.q is not None:
            return quantile_threshold(center, self.q)
        if self.rule is None:
            return center
        return threshold_prox(self.rule, self.lam, self.scale, center, weight)


def _check_entropy(prob: AccelProblem, cfg: AccelConfig):
    if cfg.mirror == "entropy" and (prob.rule is not None or prob.q is not None or cfg.lift != 0):
        raise Unsupported("the entropy mirror map supports a smooth objective without lift only")


def _phi_gbf(cfg, u, v):
    if cfg.mirror == "quadratic":
        d = u - v
        return 0.5 * float(d @ d)
    if np.any(u <= 0) or np.any(v <= 0):
        raise DomainError("entropy mirror map left the positive orthant")
    return float(np.sum(u * np.log(u / v) - u + v))


def _phi_comb_gap(cfg, a, b, theta):
    if cfg.mirror == "quadratic":
        d = a - b
        return 0.5 * theta * (1.0 - theta) * float(d @ d)
    m = theta * a + (1.0 - theta) * b
    ent = lambda x: x * np.log(x) - x  # noqa: E731
    return float(np.sum(theta * ent(a) + (1.0 - theta) * ent(b) - ent(m)))


def _bar_psi0_gbf(prob, cfg, b: Point, g: Point):
    """``gbf(psi0 - mu0 phi)(b, g)`` with ``psi0 = l - c ||.||^2/2``."""
    d = b.beta - g.beta
    out = prob.l_gbf(b, g) - 0.5 * cfg.lift * float(d @ d)
    if cfg.mu0:
        out -= cfg.mu0 * _phi_gbf(cfg, b.beta, g.beta)
    return out


def _theta_for(state: AccelState, cfg: AccelConfig, rho: float) -> float:
    if state.t == 0:
        return cfg.theta0
    return theta_update(state.theta_t, state.rho_t, rho, cfg.mu0)


def _second_kind_trial(prob, state, cfg, rho):
    if cfg.momentum:
        theta = _theta_for(state, cfg, rho)
    else:
        theta = 1.0
    alpha, beta = state.alpha_iter, state.beta_iter
    gamma = (1.0 - theta) * beta + theta * alpha if theta != 1.0 else alpha.copy()
    g = prob.point(gamma)
    tr = theta * rho
    if cfg.mirror == "quadratic":
        w = cfg.lift + cfg.mu0 + tr
        center = gamma + (tr * (alpha - gamma) - g.grad) / w
        alpha_new = prob.prox(center, w)
    else:
        w = cfg.mu0 + tr
        if cfg.mu0 == 0.0:
            alpha_new = alpha * np.exp(-g.grad / tr)
        else:
            alpha_new = np.exp((cfg.mu0 * np.log(gamma) + tr * np.log(alpha) - g.grad) / w)
        if np.any(~(alpha_new > 0)) or np.any(~np.isfinite(alpha_new)):
            return None
    beta_new = (1.0 - theta) * beta + theta * alpha_new if theta != 1.0 else alpha_new.copy()
    bn = prob.value_only(beta_new)
    if not np.isfinite(bn.loss):
        return None
    bp = state.beta_pt
    comb = 0.0
    if theta != 1.0:
        comb = (theta * prob.penalty(alpha_new) + (1.0 - theta) * prob.penalty(beta)
                - prob.penalty(beta_new))
        d = alpha_new - beta
        comb += 0.5 * cfg.lift * theta * (1.0 - theta) * float(d @ d)
        if cfg.mu0:
            comb += cfg.mu0 * _phi_comb_gap(cfg, alpha_new, beta, theta)
    R = (theta * theta * rho * _phi_gbf(cfg, alpha_new, alpha)
         - _bar_psi0_gbf(prob, cfg, bn, g)
         + (1.0 - theta) * _bar_psi0_gbf(prob, cfg, bp, g)
         + comb)
    return dict(theta=theta, rho=rho, gamma=gamma, alpha_new=alpha_new, beta_new=beta_new,
                R=R, f_new=prob.f(bn), pt_new=bn)


def _first_kind_trial(prob, state, cfg, rho):
    theta = _theta_for(state, cfg, rho)
    beta = state.beta_iter
    if state.t == 0 or not cfg.momentum or state.beta_prev is None:
        gamma = beta.copy()
    else:
        coef = state.rho_t * theta * (1.0 - state.theta_t) / (state.rho_t * state.theta_t + cfg.mu0)
        gamma = beta + coef * (beta - state.beta_prev)
    g = prob.point(gamma)
    w = cfg.lift + cfg.mu0 + rho
    beta_new = prob.prox(gamma - g.grad / w, w)
    bn = prob.value_only(beta_new)
    if not np.isfinite(bn.loss):
        return None
    bp = state.beta_pt
    d = beta_new - gamma
    # first-kind reference is psi0 - mu0 ||.||^2/2 regardless of the mirror map
    bar = lambda u: prob.l_gbf(u, g) - 0.5 * (cfg.lift + cfg.mu0) * float(  # noqa: E731
        (u.beta - gamma) @ (u.beta - gamma))
    R = 0.5 * rho * float(d @ d) - bar(bn) + (1.0 - theta) * bar(bp)
    return dict(theta=theta, rho=rho, gamma=gamma, alpha_new=None, beta_new=beta_new,
                R=R, f_new=prob.f(bn), pt_new=bn)


def _apply(state: AccelState, cand: dict, searches: int, cands: list) -> AccelState:
    return AccelState(
        alpha_iter=cand["alpha_new"] if cand["alpha_new"] is not None else state.alpha_iter,
        beta_iter=cand["beta_new"], gamma_iter=cand["gamma"], theta_t=cand["theta"],
        rho_t=cand["rho"], t=state.t + 1, last_Rt=cand["R"], searches_used=searches,
        beta_prev=state.beta_iter, beta_pt=cand["pt_new"], f_beta=cand["f_new"], candidates=cands)


def second_kind_step(prob: AccelProblem, state: AccelState, cfg: AccelConfig,
                     rho: Optional[float] = None) -> AccelState:
    """One second-kind step at a given ``rho`` (default ``cfg.rho_min``), no search."""
    _check_entropy(prob, cfg)
    cand = _second_kind_trial(prob, state, cfg, cfg.rho_min if rho is None else rho)
    if cand is None:
        raise SolverError("trial left the domain of the objective")
    return _apply(state, cand, 1, [cand])


def first_kind_step(prob: AccelProblem, state: AccelState, cfg: AccelConfig,
                    rho: Optional[float] = None) -> AccelState:
    """One first-kind step at a given ``rho`` (default ``cfg.rho_min``), no search."""
    cand = _first_kind_trial(prob, state, cfg, cfg.rho_min if rho is None else rho)
    if cand is None:
        raise SolverError("trial left the domain of the objective")
    return _apply(state, cand, 1, [cand])


def line_search_iterate(prob: AccelProblem, state: AccelState, cfg: AccelConfig) -> AccelState:
    """Try ``rho = rho_min alpha^(s-1)`` for ``s = 1..M+1``; accept the first with ``R_t >= 0``."""
    trial = _second_kind_trial if cfg.scheme == "second" else _first_kind_trial
    if not cfg.line_search:
        cand = trial(prob, state, cfg, cfg.rho_min)
        if cand is None:
            raise SolverError(f"step {state.t} left the domain at the fixed rho")
        return _apply(state, cand, 1, [cand])
    cands = []
    rho = cfg.rho_min / cfg.alpha
    s = 0
    while True:
        s += 1
        rho = cfg.alpha * rho
        cand = trial(prob, state, cfg, rho)
        if cand is not None:
            cand["s"] = s
            cands.append(cand)
            if cand["R"] >= 0:
                return _apply(state, cand, s, cands)
        if s > cfg.M:
            break
    if not cands:
        raise SolverError(f"every line-search trial at step {state.t} left the domain")
    score = [c["R"] / (c["theta"] ** 2 * c["rho"]) for c in cands]
    best = max(range(len(cands)), key=lambda k: (score[k], -cands[k]["rho"]))
    return _apply(state, cands[best], s, cands)


def _initial_state(prob, beta0, cfg) -> AccelState:
    beta0 = np.array(beta0, dtype=float)
    pt = prob.value_only(beta0)
    return AccelState(alpha_iter=beta0.copy(), beta_iter=beta0.copy(), gamma_iter=None,
                      theta_t=cfg.theta0, rho_t=cfg.rho_min, t=0, beta_pt=pt,
                      f_beta=prob.f(pt))


def _debug_R(prob, prev: AccelState, new: AccelState, cfg) -> float:
    """Recompute ``R_t`` from fresh evaluations of the generic definition."""
    theta, rho = new.theta_t, new.rho_t
    g = prob.point(new.gamma_iter)
    fpt = lambda b: prob.f(prob.point(b))  # noqa: E731

    def bar(b):
        bp = prob.point(b)
        d = b - new.gamma_iter
        out = prob.l_gbf(bp, g) - 0.5 * cfg.lift * float(d @ d)
        if cfg.scheme == "first":
            return out - 0.5 * cfg.mu0 * float(d @ d)
        return out - cfg.mu0 * _phi_gbf(cfg, b, new.gamma_iter)

    if cfg.scheme == "first":
        d = new.beta_iter - new.gamma_iter
        return 0.5 * rho * float(d @ d) - bar(new.beta_iter) + (1 - theta) * bar(prev.beta_iter)
    h = lambda b: fpt(b) - bar(b)  # noqa: E731
    a1, b0 = new.alpha_iter, prev.beta_iter
    comb = theta * h(a1) + (1 - theta) * h(b0) - h(theta * a1 + (1 - theta) * b0)
    return (theta * theta * rho * _phi_gbf(cfg, a1, prev.alpha_iter) - bar(new.beta_iter)
            + (1 - theta) * bar(b0) + comb)


def run_accelerated(prob, beta0, cfg: AccelConfig, beta_star=None, stat_error=None) -> IterateTrace:
    """Run the configured scheme; per-step params hold theta, rho, R_t and searches_used."""
    if not isinstance(prob, AccelProblem):
        prob = AccelProblem.from_problem(prob)
    if cfg.scheme == "second":
        _check_entropy(prob, cfg)
    state = _initial_state(prob, beta0, cfg)
    trace = IterateTrace(tag=f"accel-{cfg.scheme}")
    trace.objectives.append(state.f_beta)
    trace.stat_errors.append(stat_error(state.beta_iter) if stat_error else None)
    t0 = time.perf_counter_ns()
    trace.wall_ns.append(0)
    for t in range(int(cfg.max_iter)):
        try:
            new = line_search_iterate(prob, state, cfg)
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            trace.final_beta = state.beta_iter.copy()
            raise SolverError(f"accelerated step {t} failed: {exc}", trace=trace, cause=exc) from exc
        params = dict(theta=new.theta_t, rho=new.rho_t, R_t=new.last_Rt,
                      searches_used=new.searches_used)
        if t >= 1 and new.theta_t < 1.0:
            params["recurrence"] = recurrence_residual(new.theta_t, state.theta_t, new.rho_t,
                                                       state.rho_t, cfg.mu0)
        if cfg.debug:
            params["R_t_debug"] = _debug_R(prob, state, new, cfg)
        trace.params.append(params)
        trace.opt_terms.append(None)
        trace.special_terms.append(None)
        trace.objectives.append(new.f_beta)
        trace.stat_errors.append(stat_error(new.beta_iter) if stat_error else None)
        trace.wall_ns.append(time.perf_counter_ns() - t0)
        move = float(np.linalg.norm(new.beta_iter - state.beta_iter))
        trace.fixed_point_residual = move
        state = new
        if cfg.tol > 0 and move <= cfg.tol * (1.0 + float(np.linalg.norm(state.beta_iter))):
            trace.converged = True
            break
    trace.final_beta = state.beta_iter.copy()
    trace.opt_terms = []
    trace.special_terms = []
    return trace


def accelerated_quantile_tisp(prob, beta0, q: int, r_ratio: float, cfg: Optional[AccelConfig] = None,
                              rho_plus: Optional[float] = None, beta_star=None) -> IterateTrace:
    """Second-kind acceleration of iterative quantile thresholding.

    ``rho_plus`` bounds the restricted curvature over ``2q``-sparse differences;
    it defaults to ``||X||_2^2`` (by power iteration). With ``r = r_ratio`` the
    lift is ``rho_plus / sqrt(r)`` and ``rho`` is fixed at ``(1 - 1/sqrt(r)) rho_plus``.
    """
    if r_ratio <= 1:
        raise ConfigError(f"r_ratio={r_ratio} must exceed 1")
    if isinstance(prob, AccelProblem):
        base = prob
        loss = prob.smooth.loss
    else:
        loss = prob.loss if hasattr(prob, "loss") else prob
        base = None
    if rho_plus is None:
        rho_plus = power_norm_sq(loss.X) * (loss.eta_curvature() or 1.0)
    lift = rho_plus / math.sqrt(r_ratio)
    rho = (1.0 - 1.0 / math.sqrt(r_ratio)) * rho_plus
    acc = AccelProblem(base.smooth.loss or base.smooth.fn, q=q) if base is not None \
        else AccelProblem(loss, q=q)
    cfg = replace(cfg or AccelConfig(), scheme="second", mirror="quadratic", mu0=0.0,
                  lift=lift, rho_min=rho, line_search=False)
    return run_accelerated(acc, beta0, cfg)
