"""Bregman-surrogate iterations and their per-step error diagnostics.

Each family surrogate has the form ``g(b; a) = f(b) + gbf(psi)(b, a)``. One
step minimizes it in ``b``. For an exact minimizer,

    f(a) - f(b) - [2 sym_gbf(psi) + gbf(f)](a, b) = dg(b; a - b) >= 0,

so the running average of the bracketed term is bounded by
``(f(b0) - f(b_{T+1})) / (T + 1)``. :class:`IterateTrace` records these terms
and :meth:`IterateTrace.check_bound` verifies the inequality.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from . import _cd
from .errors import (ConfigError, DomainError, InnerSolverError, LpFailure,
                     SolverError, Unsupported)
from .gbf import DirectionalFunction
from .losses import HingeLoss, Loss, SigmoidalLoss, spectral_norm
from .lp import OPTIMAL, formulate_dc_svm, solve_simplex
from .thresholds import (ThresholdingRule, get_rule, penalty_gbf,
                         quantile_threshold)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 1000
BOUND_TOL = 1e-9
MM_TOL = 1e-10
INNER_TOL = 1e-10
MAX_INNER = 10_000
SCALE_SLACK = 1e-12
L1_KINK_TOL = 1e-12
PROFILE_FRACTION = 0.5
CURVATURE_MM_ITERS = 10
# Cholesky of the Gram matrix is used only above this pivot ratio
GRAM_COND_TOL = 1e-3

# callables invoked with every finished trace from run() and run_nmf()
TRACE_OBSERVERS: list = []

__all__ = [
    "Point", "SurrogateProblem", "GradientProblem", "MirrorProblem", "TispProblem",
    "QuantileTispProblem", "LlaProblem", "DcSvmProblem", "SigmoidalProblem",
    "RunConfig", "IterateTrace", "FixedPointReport",
    "gradient_step", "mirror_step", "tisp_step", "quantile_tisp_step", "lla_step",
    "dc_step", "nmf_mur_step", "sigmoidal_step", "run", "fixed_point_check",
    "opt_error_average", "run_nmf", "kl_divergence", "threshold_prox",
    "DEFAULT_TOL", "BOUND_TOL", "MM_TOL", "INNER_TOL", "MAX_INNER",
]


def _vec(x):
    return np.atleast_1d(np.asarray(x, dtype=float)).copy()


@dataclass
class Point:
    """An iterate with cached evaluations.

    ``value`` is the objective ``f``. For losses of the form ``l0(X beta)``,
    ``eta`` is ``X beta``, ``loss`` is ``l(beta)`` and ``geta`` is the gradient
    of ``l0`` at ``eta``. ``grad`` is the gradient of the smooth part.
    """

    beta: np.ndarray
    value: float
    loss: float = float("nan")
    eta: Optional[np.ndarray] = None
    geta: Optional[np.ndarray] = None
    grad: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)


class _Smooth:
    """Uniform access to a smooth function given as a Loss or a DirectionalFunction."""

    def __init__(self, f):
        if isinstance(f, Loss):
            if not f.smooth:
                raise Unsupported(f"{f.kind} loss is not smooth")
            self.loss = f
            self.fn = None
            self.dim = f.p
        elif isinstance(f, DirectionalFunction):
            if f.gradient is None:
                raise Unsupported("a gradient is required")
            self.loss = None
            self.fn = f
            self.dim = f.dim
        else:
            raise DomainError("expected a Loss or a DirectionalFunction")

    def point(self, beta, with_grad=True) -> Point:
        if self.loss is not None:
            L = self.loss
            eta = L.X @ beta
            val = L.l0(eta)
            geta = L.l0_grad(eta) if with_grad else None
            grad = L.X.T @ geta if with_grad else None
            return Point(beta=beta, value=val, loss=val, eta=eta, geta=geta, grad=grad)
        val = float(self.fn.value(beta))
        grad = np.asarray(self.fn.gradient(beta), dtype=float) if with_grad else None
        return Point(beta=beta, value=val, loss=val, grad=grad)

    def gbf(self, b: Point, a: Point) -> float:
        """``gbf(l)(b.beta, a.beta)`` from cached evaluations."""
        if self.loss is not None:
            L = self.loss
            if type(L).l0_gbf is not Loss.l0_gbf:
                return L.l0_gbf(b.eta, a.eta)
            return b.loss - a.loss - float(a.geta @ (b.eta - a.eta))
        if self.fn.exact_gbf is not None:
            return float(self.fn.exact_gbf(b.beta, a.beta))
        return b.loss - a.loss - float(a.grad @ (b.beta - a.beta))


def _sq(d):
    return float(d @ d)


class SurrogateProblem:
    """Base class for the surrogate families.

    Subclasses evaluate the objective at a point, take one surrogate step,
    and report the per-step error terms.
    """

    tag = "generic"
    psi_kind = "generic"

    def evaluate(self, beta) -> Point:
        raise NotImplementedError

    def objective(self, beta) -> float:
        return self.evaluate(_vec(beta)).value

    def step(self, point: Point) -> np.ndarray:
        raise NotImplementedError

    def psi_gbf(self, b: Point, a: Point) -> float:
        """``gbf(psi)(b, a)``; the surrogate is ``f(b) + psi_gbf(b, a)``."""
        raise NotImplementedError

    def f_gbf(self, b: Point, a: Point) -> float:
        raise NotImplementedError

    def opt_term(self, a: Point, b: Point) -> float:
        """``(2 sym_gbf(psi) + gbf(f))(a, b)`` with ``a`` the current iterate."""
        return self.psi_gbf(a, b) + self.psi_gbf(b, a) + self.f_gbf(a, b)

    def special_term(self, a: Point, b: Point) -> Optional[float]:
        return None

    def stat_error(self, star: Point, a: Point) -> Optional[float]:
        return None

    def surrogate(self, beta, anchor) -> float:
        """``g(beta; anchor)``."""
        b, a = self.evaluate(_vec(beta)), self.evaluate(_vec(anchor))
        return b.value + self._anchored_psi_gbf(b, a)

    def _anchored_psi_gbf(self, b, a):
        return self.psi_gbf(b, a)

    def step_beta(self, beta) -> np.ndarray:
        return self.step(self.evaluate(_vec(beta)))

    def with_rho(self, rho):
        raise Unsupported(f"{self.tag} has no stepsize parameter")

    def check_domain(self, beta):
        pass


class GradientProblem(SurrogateProblem):
    """Gradient descent ``b = a - grad f(a) / rho``; ``psi = rho ||.||^2/2 - f``."""

    tag = "gradient"
    psi_kind = "gradient"

    def __init__(self, f, rho: float):
        if rho <= 0:
            raise DomainError("rho must be positive")
        self.smooth = _Smooth(f)
        self.rho = float(rho)

    def with_rho(self, rho):
        return type(self)(self.smooth.loss or self.smooth.fn, rho)

    def evaluate(self, beta):
        return self.smooth.point(beta)

    def step(self, point):
        return point.beta - point.grad / self.rho

    def psi_gbf(self, b, a):
        return 0.5 * self.rho * _sq(b.beta - a.beta) - self.smooth.gbf(b, a)

    def f_gbf(self, b, a):
        return self.smooth.gbf(b, a)

    def opt_term(self, a, b):
        return self.rho * _sq(a.beta - b.beta) - self.smooth.gbf(b, a)

    def special_term(self, a, b):
        # the same quantity written through the gradient at the current iterate
        return _sq(a.grad) / self.rho - self.smooth.gbf(b, a)

    def stat_error(self, star, a):
        return 0.5 * _sq(star.beta - a.beta)


class MirrorProblem(SurrogateProblem):
    """Mirror descent with mirror map ``phi``; ``psi = rho phi - f``.

    ``mirror="entropy"`` uses ``phi(b) = sum b log b - b`` and the
    multiplicative update ``b = a exp(-grad f(a) / rho)``.
    ``mirror="quadratic"`` reduces to gradient descent.
    """

    tag = "mirror"

    def __init__(self, f, rho: float, mirror: str = "entropy"):
        if rho <= 0:
            raise DomainError("rho must be positive")
        if mirror not in ("entropy", "quadratic"):
            raise Unsupported(f"mirror map {mirror!r}")
        self.smooth = _Smooth(f)
        self.rho = float(rho)
        self.mirror = mirror
        self.psi_kind = f"mirror({mirror})"

    def with_rho(self, rho):
        return type(self)(self.smooth.loss or self.smooth.fn, rho, self.mirror)

    def check_domain(self, beta):
        if self.mirror == "entropy" and np.any(~(beta > 0)):
            j = int(np.flatnonzero(~(beta > 0))[0])
            raise DomainError(f"entropy mirror map needs beta > 0; coordinate {j} is {beta[j]!r}")

    def evaluate(self, beta):
        self.check_domain(beta)
        return self.smooth.point(beta)

    def phi_gbf(self, b, a):
        if self.mirror == "quadratic":
            return 0.5 * _sq(b - a)
        return float(np.sum(b * np.log(b / a) - b + a))

    def sym_phi_gbf(self, a, b):
        if self.mirror == "quadratic":
            return 0.5 * _sq(a - b)
        return 0.5 * float(np.sum((a - b) * (np.log(a) - np.log(b))))

    def step(self, point):
        if self.mirror == "quadratic":
            return point.beta - point.grad / self.rho
        out = point.beta * np.exp(-point.grad / self.rho)
        self.check_domain(out)
        return out

    def psi_gbf(self, b, a):
        return self.rho * self.phi_gbf(b.beta, a.beta) - self.smooth.gbf(b, a)

    def f_gbf(self, b, a):
        return self.smooth.gbf(b, a)

    def opt_term(self, a, b):
        return 2.0 * self.rho * self.sym_phi_gbf(a.beta, b.beta) - self.smooth.gbf(b, a)

    def special_term(self, a, b):
        return self.opt_term(a, b)


def threshold_prox(rule: ThresholdingRule, lam, scale, center, weight):
    """``argmin_b sum P(scale b; lam) + weight ||b - center||^2 / 2``."""
    z = scale * np.asarray(center, dtype=float)
    s = scale * scale / weight
    if s == 1.0:
        return rule.apply(z, lam) / scale
    return rule.prox(z, lam, scale=s) / scale


class _Composite(SurrogateProblem):
    """``f = l + sum_j P(scale beta_j; lam)`` with a smooth loss ``l``."""

    def __init__(self, loss: Loss, rule, lam: float, scale: Optional[float] = None):
        self.smooth = _Smooth(loss)
        self.loss = loss
        self.rule = get_rule(rule) if rule is not None else None
        if lam < 0:
            raise DomainError("lambda must be nonnegative")
        self.lam = float(lam)
        xn = loss.x_norm
        self.scale = xn if scale is None else float(scale)
        if self.scale <= 0:
            raise ConfigError("scale must be positive")
        if self.scale < xn * (1.0 - SCALE_SLACK):
            raise ConfigError(f"scale {self.scale} is below ||X||_2 = {xn}")

    def penalty_value(self, beta):
        if self.rule is None:
            return 0.0
        return float(np.sum(self.rule.penalty(self.scale * beta, self.lam)))

    def evaluate(self, beta):
        pt = self.smooth.point(beta)
        pt.value = pt.loss + self.penalty_value(beta)
        return pt

    def pen_gbf(self, b, a):
        if self.rule is None:
            return 0.0
        return float(np.sum(penalty_gbf(self.rule, self.scale * b, self.scale * a, self.lam)))

    def f_gbf(self, b, a):
        return self.smooth.gbf(b, a) + self.pen_gbf(b.beta, a.beta)


class TispProblem(_Composite):
    """Iterative thresholding ``b = Theta(s a - grad l(a) / s; lam) / s``.

    ``psi = s^2 ||.||^2/2 - l`` with scale ``s >= ||X||_2``.
    """

    tag = "tisp"

    def __init__(self, loss, rule, lam, scale=None):
        super().__init__(loss, rule, lam, scale)
        self.psi_kind = f"tisp({self.scale})"

    def with_rho(self, rho):
        return type(self)(self.loss, self.rule, self.lam, rho)

    def step(self, point):
        s2 = self.scale ** 2
        return threshold_prox(self.rule, self.lam, self.scale, point.beta - point.grad / s2, s2)

    def psi_gbf(self, b, a):
        return 0.5 * self.scale ** 2 * _sq(b.beta - a.beta) - self.smooth.gbf(b, a)

    def opt_term(self, a, b):
        return (self.scale ** 2 * _sq(a.beta - b.beta) - self.smooth.gbf(b, a)
                + self.pen_gbf(a.beta, b.beta))

    def special_term(self, a, b):
        L = self.rule.concavity
        return 0.5 * self.scale ** 2 * (2.0 - L) * _sq(a.beta - b.beta) - self.smooth.gbf(b, a)

    def stat_error(self, star, a):
        return self.psi_gbf(star, a)


class QuantileTispProblem(_Composite):
    """Iterative quantile thresholding ``b = Theta#(a - grad l(a) / s^2; q)``.

    Minimizes ``l`` over ``||beta||_0 <= q``. The recorded error term is
    ``gbf(psi)(b, a)`` with ``psi = s^2 ||.||^2/2 - l``: the constraint's
    indicator has no useful directional derivative, and ``g(b; a) <= g(a; a)``
    gives ``gbf(psi)(b, a) <= f(a) - f(b)`` for feasible ``a``.
    """

    tag = "quantile"

    def __init__(self, loss, q: int, scale=None):
        super().__init__(loss, None, 0.0, scale)
        q = int(q)
        if not 0 <= q <= loss.p:
            raise DomainError(f"q={q} outside [0, {loss.p}]")
        self.q = q
        self.psi_kind = f"quantile({self.scale}, {q})"

    def with_rho(self, rho):
        return type(self)(self.loss, self.q, rho)

    def check_domain(self, beta):
        k = int(np.count_nonzero(beta))
        if k > self.q:
            raise DomainError(f"start has {k} nonzeros but q={self.q}")

    def step(self, point):
        return quantile_threshold(point.beta - point.grad / self.scale ** 2, self.q)

    def psi_gbf(self, b, a):
        return 0.5 * self.scale ** 2 * _sq(b.beta - a.beta) - self.smooth.gbf(b, a)

    def opt_term(self, a, b):
        return self.psi_gbf(b, a)

    def stat_error(self, star, a):
        return self.psi_gbf(star, a)


_CD_KINDS = {"squared": _cd.SQUARED, "tukey": _cd.TUKEY, "huber": _cd.HUBER}


class LlaProblem(_Composite):
    """Local linear approximation for ``l + sum P(s beta_j)``.

    Each step solves the weighted lasso ``l(b) + sum_j w_j s |b_j|`` with
    ``w_j = P'_+(s |a_j|)`` by cyclic coordinate descent, warm-started at ``a``.
    For the squared loss the coordinate solution is polished by an exact
    solve on its support.
    """

    tag = "lla"
    psi_kind = "lla"

    def __init__(self, loss, rule="hard", lam=1.0, scale=None, inner_tol=INNER_TOL,
                 max_inner=MAX_INNER):
        super().__init__(loss, rule, lam, scale)
        if loss.kind not in _CD_KINDS and not (loss.kind == "glm_gaussian"):
            raise Unsupported(f"LLA inner solver does not support {loss.kind} loss")
        self.inner_tol = float(inner_tol)
        self.max_inner = int(max_inner)
        self._Xf = np.asfortranarray(loss.X)
        self._colsq = np.einsum("ij,ij->j", loss.X, loss.X)
        if loss.kind == "glm_gaussian":
            # sum(eta^2/2 - y eta)/sigma2 is a rescaled squared loss
            self._kind, self._c, self._cscale = _cd.SQUARED, 0.0, 1.0 / loss.sigma2
        else:
            self._kind = _CD_KINDS[loss.kind]
            self._c = {"squared": 0.0, "tukey": getattr(loss, "c", 0.0),
                       "huber": getattr(loss, "delta", 0.0)}[loss.kind]
            self._cscale = 1.0
        self.last_inner_sweeps = 0
        self._profile_cache = {}

    def with_rho(self, rho):
        return type(self)(self.loss, self.rule, self.lam, rho, self.inner_tol, self.max_inner)

    def weights(self, beta):
        """``|P'_+(s |beta_j|)|`` for each coordinate."""
        return np.abs(self.rule.penalty_slope(self.scale * np.abs(beta), self.lam))

    def solve_weighted_lasso(self, w, start, eta):
        """Minimize ``l(b) + sum_j w_j |b_j|`` from a warm start."""
        pen = np.asarray(w, dtype=float) / self._cscale
        y = self.loss.y
        tol = self.inner_tol * (1.0 + float(np.max(np.abs(y), initial=0.0)))
        free = pen == 0.0
        if free.sum() > PROFILE_FRACTION * self.loss.n:
            return self._profiled(pen, free, np.asarray(start, dtype=float), tol)
        beta = np.array(start, dtype=float)
        eta = np.array(eta, dtype=float)
        sweeps, change = _cd.weighted_l1_cd(self._Xf, y, beta, eta, pen, self._colsq,
                                            self._kind, self._c, tol, self.max_inner)
        self.last_inner_sweeps = int(sweeps)
        if change > tol:
            raise InnerSolverError(
                f"coordinate descent did not converge in {self.max_inner} sweeps", residual=change)
        if self._kind == _cd.SQUARED:
            beta = self._polish(beta, pen)
        return beta

    def _profiled(self, pen, free, start, tol):
        """Weighted lasso with many unpenalized coordinates.

        The unpenalized columns are projected out (QR, or SVD if rank
        deficient); coordinate descent runs on the penalized block and the
        unpenalized block is recovered by least squares, taking the
        minimum-norm change from the warm start when it is not unique. A
        non-quadratic loss is handled by majorizing it and repeating the
        quadratic solve. When the unpenalized columns span the sample space
        the fit interpolates ``y`` with the penalized block at zero, a global
        minimizer for every supported loss.
        """
        X, y = self.loss.X, self.loss.y
        F = np.flatnonzero(free)
        P = np.flatnonzero(~free)
        key = free.tobytes()
        cached = self._profile_cache.get(key)
        if cached is None:
            cached = _column_space(X[:, F])
            self._profile_cache = {key: cached}
        U, solve_F, full_row = cached[:3]
        if full_row:
            beta = np.array(start, dtype=float)
            beta[P] = 0.0
            beta[F] += solve_F(y - X[:, F] @ beta[F])
            self.last_inner_sweeps = 0
            return beta
        state = {"sweeps": 0}

        def project(U, XP):
            MXP = np.asfortranarray(XP - U(XP))
            return MXP, np.einsum("ij,ij->j", MXP, MXP)

        def quad_solve(U, solve_F, XF, XP, proj, z, beta):
            """Minimize ``||z - XF bF - XP bP||^2/2 + sum pen_P |bP|`` with ``bF`` profiled out."""
            if not np.any(beta[P]):
                # bP = 0 is optimal when the profiled gradient is inside the penalty box
                out = beta.copy()
                out[F] = beta[F] + solve_F(z - XF @ beta[F])
                if np.all(np.abs(XP.T @ (z - XF @ out[F])) <= pen[P]):
                    return out
            MXP, colsq = proj()
            Mz = z - U(z)
            bP = beta[P].copy()
            etaP = MXP @ bP
            sweeps, change = _cd.weighted_l1_cd(MXP, Mz, bP, etaP, pen[P], colsq,
                                                _cd.SQUARED, 0.0, tol, self.max_inner)
            state["sweeps"] += int(sweeps)
            if change > tol:
                raise InnerSolverError(
                    f"coordinate descent did not converge in {self.max_inner} sweeps",
                    residual=change)
            out = beta.copy()
            out[P] = bP
            out[F] = beta[F] + solve_F(z - XP @ bP - XF @ beta[F])
            return out

        XF, XP = X[:, F], X[:, P]

        def proj():
            if len(self._profile_cache[key]) == 3:
                self._profile_cache[key] = self._profile_cache[key] + (project(U, XP),)
            return self._profile_cache[key][3]

        beta = np.array(start, dtype=float)
        if self._kind == _cd.SQUARED:
            beta = quad_solve(U, solve_F, XF, XP, proj, y, beta)
            self.last_inner_sweeps = state["sweeps"]
            return beta
        # curvature-1 majorization first; reweighted least squares (also a
        # majorizer, since rho(sqrt(s)) is concave) if that stalls
        move = np.inf
        for k in range(self.max_inner):
            eta = X @ beta
            g = self.loss.l0_grad(eta)
            if k < CURVATURE_MM_ITERS:
                nxt = quad_solve(U, solve_F, XF, XP, proj, eta - g, beta)
            else:
                r = eta - y
                w = np.ones_like(r)
                nz = r != 0
                w[nz] = g[nz] / r[nz]
                sw = np.sqrt(np.clip(w, 0.0, 1.0))
                XFw, XPw = sw[:, None] * XF, sw[:, None] * XP
                Uw, solve_w, _ = _column_space(XFw)
                nxt = quad_solve(Uw, solve_w, XFw, XPw, lambda: project(Uw, XPw), sw * y, beta)
            move = float(np.max(np.abs(X @ (nxt - beta)), initial=0.0))
            beta = nxt
            if move <= tol:
                break
        else:
            raise InnerSolverError(
                f"majorization loop did not converge in {self.max_inner} iterations",
                residual=move)
        self.last_inner_sweeps = state["sweeps"]
        return beta

    def _polish(self, beta, pen):
        """Exact solve on the support with signs fixed; kept only if it satisfies the KKT conditions."""
        X, y = self.loss.X, self.loss.y
        S = np.flatnonzero(beta)
        if S.size == 0 or S.size > X.shape[0]:
            return beta
        sgn = np.sign(beta[S])
        XS = X[:, S]
        try:
            cand_S = linalg.solve(XS.T @ XS, XS.T @ y - pen[S] * sgn, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            return beta
        if np.any(np.sign(cand_S) != sgn):
            return beta
        cand = np.zeros_like(beta)
        cand[S] = cand_S
        g = X.T @ (X @ cand - y)
        off = np.ones(beta.size, dtype=bool)
        off[S] = False
        if np.any(np.abs(g[off]) > pen[off] * (1.0 + 1e-9) + 1e-9):
            return beta
        return cand

    def step(self, point):
        w = self.weights(point.beta) * self.scale
        return self.solve_weighted_lasso(w, point.beta, point.eta)

    def lla_gbf(self, u, v, w):
        """``gbf(sum w_j |.| - P)(u, v)`` elementwise summed, with weights ``w``."""
        d1 = _l1_gbf(u, v)
        return float(np.sum(w * d1) - np.sum(penalty_gbf(self.rule, u, v, self.lam)))

    def psi_gbf(self, b, a):
        # surrogate anchored at a uses the weights computed at a
        w = self.weights(a.beta)
        return self.lla_gbf(self.scale * b.beta, self.scale * a.beta, w)

    def opt_term(self, a, b):
        w = self.weights(a.beta)
        s = self.scale
        return (self.lla_gbf(s * a.beta, s * b.beta, w) + self.lla_gbf(s * b.beta, s * a.beta, w)
                + self.f_gbf(a, b))

    def stat_error(self, star, a):
        return self.psi_gbf(star, a)


def _column_space(A):
    """Projection onto ``range(A)`` and a least-squares solver.

    Returns ``(project, solve, full_row)``: ``project(V)`` maps columns of
    ``V`` onto ``range(A)``; ``solve(r)`` is the minimum-norm minimizer of
    ``||A d - r||``; ``full_row`` reports whether ``A`` has full row rank.
    Tall, well-conditioned ``A`` uses a Cholesky factor of ``A'A``; otherwise
    QR of ``A`` or ``A'``, with a thin SVD when that factor is singular.
    """
    n, k = A.shape
    rtol = max(A.shape) * np.finfo(float).eps
    if k == 0:
        return (lambda V: np.zeros_like(V)), (lambda r: np.zeros(0)), False
    if k < n:
        try:
            c = linalg.cho_factor(A.T @ A, check_finite=False)
            d = np.abs(np.diag(c[0]))
            if d.min() > GRAM_COND_TOL * d.max():
                return ((lambda V: A @ linalg.cho_solve(c, A.T @ V, check_finite=False)),
                        (lambda r: linalg.cho_solve(c, A.T @ r, check_finite=False)), False)
        except linalg.LinAlgError:
            pass
        Q, R = linalg.qr(A, mode="economic", check_finite=False)
        d = np.abs(np.diag(R))
        if d.min() > rtol * d.max():
            return ((lambda V: Q @ (Q.T @ V)),
                    (lambda r: linalg.solve_triangular(R, Q.T @ r, check_finite=False)), False)
    else:
        Q, R = linalg.qr(A.T, mode="economic", check_finite=False)
        d = np.abs(np.diag(R))
        if d.min() > rtol * d.max():
            return ((lambda V: V.copy()),
                    (lambda r: Q @ linalg.solve_triangular(R, r, trans="T", check_finite=False)),
                    True)
    U, sv, Vt = linalg.svd(A, full_matrices=False)
    keep = sv > sv[0] * rtol
    U, sv, Vt = U[:, keep], sv[keep], Vt[keep]
    return (lambda V: U @ (U.T @ V)), (lambda r: Vt.T @ ((U.T @ r) / sv)), sv.size == n


def _l1_gbf(u, v):
    """``gbf(|.|)(u, v)`` elementwise; zero wherever ``v`` is zero."""
    return np.where(v == 0.0, 0.0, np.abs(u) - np.sign(v) * u)


class DcSvmProblem(SurrogateProblem):
    """Capped-l1 SVM ``hinge + sum min(lam |b_j|, lam^2/2)`` written as ``d1 - d2``.

    ``d1 = hinge + lam ||b||_1`` and ``d2 = sum max(lam |b_j| - lam^2/2, 0)``.
    Each step linearizes ``d2`` at the current iterate and solves an LP.
    """

    tag = "dc"
    psi_kind = "dc(d2)"

    def __init__(self, X, y, lam: float, compact: bool = True, max_pivots: int = 100_000):
        self.loss = HingeLoss(X, y)
        if lam < 0:
            raise DomainError("lambda must be nonnegative")
        self.lam = float(lam)
        self.compact = bool(compact) and self.lam > 0
        self.max_pivots = int(max_pivots)
        self.iteration = None
        self._cache = {}
        self.lp_pivots = 0

    def d2(self, beta):
        return float(np.sum(np.maximum(self.lam * np.abs(beta) - 0.5 * self.lam ** 2, 0.0)))

    def d2_ddir(self, beta, h):
        lam = self.lam
        u = np.abs(beta)
        half = 0.5 * lam
        out = np.where(u > half, lam * np.sign(beta) * h, 0.0)
        kink = u == half
        return float(np.sum(out) + np.sum(np.where(kink, lam * np.maximum(np.sign(beta) * h, 0.0), 0.0)))

    def d2_gbf(self, b, a):
        return self.d2(b) - self.d2(a) - self.d2_ddir(a, b - a)

    def indicator(self, beta):
        """Signed slope pattern of the linearized ``d2`` at ``beta``."""
        return np.where(np.abs(beta) >= 0.5 * self.lam, np.sign(beta), 0.0)

    def evaluate(self, beta):
        eta = self.loss.X @ beta
        hinge = self.loss.l0(eta)
        pen = float(np.sum(np.minimum(self.lam * np.abs(beta), 0.5 * self.lam ** 2)))
        return Point(beta=beta, value=hinge + pen, loss=hinge, eta=eta)

    def solve_linearized(self, indicator):
        key = indicator.astype(np.int8).tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit.copy()
        X, y = self.loss.X, self.loss.y
        prob = formulate_dc_svm(X, y, self.lam, indicator, compact=self.compact)
        sol = solve_simplex(prob.lp, max_pivots=self.max_pivots)
        self.lp_pivots += sol.pivots
        if sol.status != OPTIMAL:
            raise LpFailure(f"DC subproblem LP is {sol.status}", status=sol.status,
                            iteration=self.iteration)
        beta = prob.recover(sol.x)[0]
        self._cache[key] = beta
        return beta.copy()

    def step(self, point):
        return self.solve_linearized(self.indicator(point.beta))

    def hinge_gbf(self, b, a):
        """``gbf(hinge)(b, a)`` with the kink tolerance of the loss."""
        L = self.loss
        return b.loss - a.loss - L.l0_ddir(a.eta, b.eta - a.eta, tol=L.kink_tolerance(a.beta))

    def d1_gbf(self, b, a):
        kink = np.abs(a.beta) <= L1_KINK_TOL * (1.0 + np.abs(a.beta))
        l1 = np.where(kink, 0.0, np.abs(b.beta) - np.sign(a.beta) * b.beta)
        return self.hinge_gbf(b, a) + self.lam * float(np.sum(l1))

    def psi_gbf(self, b, a):
        return self.d2_gbf(b.beta, a.beta)

    def f_gbf(self, b, a):
        return self.d1_gbf(b, a) - self.d2_gbf(b.beta, a.beta)

    def opt_term(self, a, b):
        # gbf(l) + gbf(lam ||.||_1) forward, plus gbf(d2) backward
        return self.d1_gbf(a, b) + self.d2_gbf(b.beta, a.beta)

    def special_term(self, a, b):
        return self.opt_term(a, b)


class SigmoidalProblem(SurrogateProblem):
    """Sigmoidal regression with majorizer ``B``: ``b = a - B^{-1} grad l(a)``.

    ``psi = beta' B beta / 2 - l``.
    """

    tag = "sigmoidal"
    psi_kind = "sigmoidal"

    def __init__(self, loss: SigmoidalLoss):
        if not isinstance(loss, SigmoidalLoss):
            raise DomainError("SigmoidalProblem needs a SigmoidalLoss")
        self.loss = loss
        self.smooth = _Smooth(loss)

    def evaluate(self, beta):
        return self.smooth.point(beta)

    def step(self, point):
        return point.beta - linalg.cho_solve(self.loss.B_factor, point.grad)

    def _bq(self, d):
        return 0.5 * float(d @ self.loss.B @ d)

    def psi_gbf(self, b, a):
        return self._bq(b.beta - a.beta) - self.smooth.gbf(b, a)

    def f_gbf(self, b, a):
        return self.smooth.gbf(b, a)

    def opt_term(self, a, b):
        return 2.0 * self._bq(a.beta - b.beta) - self.smooth.gbf(b, a)


# ---------------------------------------------------------------------------
# step functions


def gradient_step(prob, beta, rho=None):
    """``beta - grad f(beta) / rho``."""
    if rho is not None:
        prob = prob.with_rho(rho)
    return prob.step_beta(beta)


def mirror_step(prob: MirrorProblem, beta, rho=None):
    if rho is not None:
        prob = prob.with_rho(rho)
    return prob.step_beta(beta)


def tisp_step(prob: TispProblem, beta):
    return prob.step_beta(beta)


def quantile_tisp_step(prob: QuantileTispProblem, beta):
    return prob.step_beta(beta)


def lla_step(prob: LlaProblem, beta):
    return prob.step_beta(beta)


def dc_step(prob: DcSvmProblem, beta):
    return prob.step_beta(beta)


def sigmoidal_step(prob: SigmoidalProblem, beta):
    return prob.step_beta(beta)


def kl_divergence(X, WH) -> float:
    """Generalized KL divergence ``sum X log(X / WH) - X + WH``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(X > 0, X * np.log(X / WH), 0.0)
    return float(np.sum(t - X + WH))


def _check_positive(name, A):
    if np.any(~(A > 0)):
        idx = np.unravel_index(int(np.flatnonzero(~(A > 0))[0]), A.shape)
        raise DomainError(f"{name} must be strictly positive; entry {idx} is {A[idx]!r}")


def _nmf_h(W, H, X, rho):
    R = X / (W @ H)
    G = W.sum(axis=0)[:, None] - W.T @ R
    return H * np.exp(-G / rho), G


def _nmf_w(W, H, X, rho):
    R = X / (W @ H)
    G = H.sum(axis=1)[None, :] - R @ H.T
    return W * np.exp(-G / rho), G


def nmf_mur_step(W, H, X, rho):
    """One multiplicative sweep for ``KL(X, W H)``: update ``H`` then ``W``."""
    W = np.asarray(W, dtype=float)
    H = np.asarray(H, dtype=float)
    X = np.asarray(X, dtype=float)
    if rho <= 0:
        raise DomainError("rho must be positive")
    _check_positive("X", X)
    _check_positive("W", W)
    _check_positive("H", H)
    H1, _ = _nmf_h(W, H, X, rho)
    _check_positive("H", H1)
    W1, _ = _nmf_w(W, H1, X, rho)
    _check_positive("W", W1)
    return W1, H1


# ---------------------------------------------------------------------------
# engine


@dataclass
class RunConfig:
    max_iter: int = DEFAULT_MAX_ITER
    tol: float = DEFAULT_TOL
    rho: Optional[float] = None
    record_iterates: bool = False
    record: bool = True
    beta_star: Optional[np.ndarray] = None


@dataclass
class FixedPointReport:
    residual: float
    is_fixed: bool


@dataclass
class IterateTrace:
    """Per-iteration records of one run.

    ``objectives[t]`` is ``f(beta^t)``; ``opt_terms[t]`` is the error term of
    the step from ``beta^t`` to ``beta^{t+1}``.
    """

    objectives: list = field(default_factory=list)
    opt_terms: list = field(default_factory=list)
    special_terms: list = field(default_factory=list)
    stat_errors: list = field(default_factory=list)
    params: list = field(default_factory=list)
    wall_ns: list = field(default_factory=list)
    iterates: Optional[list] = None
    converged: bool = False
    fixed_point_residual: float = float("nan")
    final_beta: Optional[np.ndarray] = None
    tag: str = ""

    @property
    def n_steps(self) -> int:
        return len(self.objectives) - 1

    def running_average(self, kind="opt") -> np.ndarray:
        vals = self._terms(kind)
        return np.cumsum(vals) / np.arange(1, vals.size + 1)

    def _terms(self, kind):
        src = {"opt": self.opt_terms, "special": self.special_terms}[kind]
        if any(v is None for v in src):
            raise Unsupported(f"{kind} terms were not recorded for this run")
        return np.asarray(src, dtype=float)

    def bound_gaps(self) -> np.ndarray:
        """``(f0 - f_{T+1})/(T+1) - avg_{t<=T} term_t`` for each ``T``."""
        if not self.opt_terms:
            return np.zeros(0)
        f = np.asarray(self.objectives, dtype=float)
        T = np.arange(1, len(self.opt_terms) + 1)
        return (f[0] - f[1:len(self.opt_terms) + 1]) / T - self.running_average("opt")

    def check_bound(self, tol: float = BOUND_TOL) -> bool:
        gaps = self.bound_gaps()
        return bool(np.all(gaps >= -tol))

    def is_monotone(self, tol: float = MM_TOL) -> bool:
        f = np.asarray(self.objectives, dtype=float)
        return bool(np.all(np.diff(f) <= tol * (1.0 + np.abs(f[:-1]))))


def opt_error_average(trace: IterateTrace, T: int, kind: str = "opt") -> float:
    """Mean of the recorded error terms for steps ``0..T``."""
    vals = trace._terms(kind)
    if not 0 <= T < vals.size:
        raise IndexError(f"T={T} outside [0, {vals.size})")
    return float(np.mean(vals[:T + 1]))


def run(prob: SurrogateProblem, beta0, config: Optional[RunConfig] = None, **overrides) -> IterateTrace:
    """Iterate surrogate steps until the fixed-point residual or ``max_iter`` stops it.

    Stops when ``||b - a|| <= tol (1 + ||a||)``; a negative ``tol`` runs all
    ``max_iter`` steps even past an exact fixed point. Step failures raise
    :class:`SolverError` carrying the partial trace.
    """
    cfg = config or RunConfig()
    for k, v in overrides.items():
        setattr(cfg, k, v)
    if cfg.rho is not None:
        prob = prob.with_rho(cfg.rho)
    beta = _vec(beta0)
    prob.check_domain(beta)
    star = prob.evaluate(_vec(cfg.beta_star)) if cfg.beta_star is not None else None
    trace = IterateTrace(iterates=[] if cfg.record_iterates else None, tag=prob.tag)
    t0 = time.perf_counter_ns()
    cur = prob.evaluate(beta)
    _record_point(trace, prob, cur, star, cfg)
    trace.wall_ns.append(time.perf_counter_ns() - t0)
    for t in range(int(cfg.max_iter)):
        try:
            if hasattr(prob, "iteration"):
                prob.iteration = t
            nxt_beta = prob.step(cur)
            nxt = prob.evaluate(nxt_beta)
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            trace.final_beta = cur.beta.copy()
            raise SolverError(f"{prob.tag} step {t} failed: {exc}", trace=trace, cause=exc) from exc
        if not np.isfinite(nxt.value):
            trace.final_beta = cur.beta.copy()
            raise SolverError(f"{prob.tag} objective is not finite at step {t + 1}", trace=trace)
        if cfg.record:
            trace.opt_terms.append(prob.opt_term(cur, nxt))
            trace.special_terms.append(prob.special_term(cur, nxt))
        trace.params.append(_step_params(prob))
        _record_point(trace, prob, nxt, star, cfg)
        trace.wall_ns.append(time.perf_counter_ns() - t0)
        resid = float(np.linalg.norm(nxt.beta - cur.beta))
        trace.fixed_point_residual = resid
        cur = nxt
        if cfg.tol >= 0 and resid <= cfg.tol * (1.0 + float(np.linalg.norm(cur.beta))):
            trace.converged = True
            break
    trace.final_beta = cur.beta.copy()
    _notify(trace)
    return trace


def _notify(trace):
    for fn in TRACE_OBSERVERS:
        fn(trace)


def _record_point(trace, prob, pt, star, cfg):
    trace.objectives.append(float(pt.value))
    if cfg.record_iterates:
        trace.iterates.append(pt.beta.copy())
    trace.stat_errors.append(prob.stat_error(star, pt) if star is not None else None)


def _step_params(prob):
    out = {}
    for name in ("rho", "scale", "lam"):
        if hasattr(prob, name):
            out[name] = float(getattr(prob, name))
    if isinstance(prob, LlaProblem):
        out["inner_sweeps"] = prob.last_inner_sweeps
    return out


def fixed_point_check(prob: SurrogateProblem, beta_hat, tol: float = DEFAULT_TOL) -> FixedPointReport:
    """One surrogate step from ``beta_hat``; fixed when it moves by at most ``tol``."""
    beta_hat = _vec(beta_hat)
    resid = float(np.linalg.norm(prob.step_beta(beta_hat) - beta_hat))
    return FixedPointReport(residual=resid, is_fixed=resid <= tol)


def run_nmf(X, W0, H0, rho: float, max_iter: int = 100, tol: float = DEFAULT_TOL) -> IterateTrace:
    """Alternating multiplicative updates for ``KL(X, W H)``.

    Each half step (``H`` then ``W``) is a mirror-descent surrogate step in
    one block, so the trace holds two records per sweep.
    """
    X = np.asarray(X, dtype=float)
    W = np.array(W0, dtype=float)
    H = np.array(H0, dtype=float)
    for name, A in (("X", X), ("W", W), ("H", H)):
        _check_positive(name, A)
    trace = IterateTrace(tag="nmf")
    f = kl_divergence(X, W @ H)
    trace.objectives.append(f)
    trace.stat_errors.append(None)
    t0 = time.perf_counter_ns()
    trace.wall_ns.append(0)

    def half(block_old, block_new, grad_old, f_old, f_new):
        sym = 0.5 * float(np.sum((block_old - block_new) * (np.log(block_old) - np.log(block_new))))
        back = f_new - f_old - float(np.sum(grad_old * (block_new - block_old)))
        return 2.0 * rho * sym - back

    for _ in range(int(max_iter)):
        H1, G = _nmf_h(W, H, X, rho)
        _check_positive("H", H1)
        f1 = kl_divergence(X, W @ H1)
        trace.opt_terms.append(half(H, H1, G, f, f1))
        trace.special_terms.append(None)
        trace.objectives.append(f1)
        trace.stat_errors.append(None)
        trace.params.append({"rho": rho, "block": "H"})
        trace.wall_ns.append(time.perf_counter_ns() - t0)
        W1, G = _nmf_w(W, H1, X, rho)
        _check_positive("W", W1)
        f2 = kl_divergence(X, W1 @ H1)
        trace.opt_terms.append(half(W, W1, G, f1, f2))
        trace.special_terms.append(None)
        trace.objectives.append(f2)
        trace.stat_errors.append(None)
        trace.params.append({"rho": rho, "block": "W"})
        trace.wall_ns.append(time.perf_counter_ns() - t0)
        move = np.sqrt(np.sum((W1 - W) ** 2) + np.sum((H1 - H) ** 2))
        scale = np.sqrt(np.sum(W ** 2) + np.sum(H ** 2))
        W, H, f = W1, H1, f2
        trace.fixed_point_residual = float(move)
        if move <= tol * (1.0 + scale):
            trace.converged = True
            break
    trace.final_beta = np.concatenate([W.ravel(), H.ravel()])
    _notify(trace)
    return trace
