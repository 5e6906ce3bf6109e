"""Generalized Bregman functions built on one-sided directional derivatives.

For a function ``psi`` with one-sided directional derivative
``dpsi(gamma; h)`` the generalized Bregman function is

    gbf(beta, gamma) = psi(beta) - psi(gamma) - dpsi(gamma; beta - gamma).

No convexity or smoothness is assumed: for convex ``psi`` it is nonnegative,
for differentiable ``psi`` it is the classical Bregman divergence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import simpson

from .errors import DomainError, NonFiniteEvaluation

# Shared tolerances. Property tests and solver diagnostics import these.
NONNEG_TOL = 1e-10
IDENTITY_TOL = 1e-9
INTEGRAL_TOL = 1e-7
GRADIENT_TOL = 1e-8
FD_REL_TOL = 1e-5
FD_EPS_SCALE = 1e-6
DEFAULT_NODES = 129

__all__ = [
    "NONNEG_TOL", "IDENTITY_TOL", "INTEGRAL_TOL", "GRADIENT_TOL",
    "FD_REL_TOL", "FD_EPS_SCALE", "DEFAULT_NODES",
    "DirectionalFunction", "GbfValue",
    "eval_gbf", "gbf", "eval_gbf_via_integral", "eval_comb_gap",
    "finite_diff_ddir", "linear_combination", "compose_affine",
    "anchored_gbf", "half_sq_norm", "negative_entropy", "l1_norm",
    "quadratic_form",
]


def _vec(x):
    return np.atleast_1d(np.asarray(x, dtype=float))


def _finite(value, what, point):
    value = float(value)
    if not np.isfinite(value):
        raise NonFiniteEvaluation(f"{what} is not finite at {np.array2string(_vec(point), threshold=8)}",
                                  point=_vec(point).copy())
    return value


@dataclass(frozen=True)
class DirectionalFunction:
    """A real function on R^dim with its one-sided directional derivative.

    ``ddir(beta, h)`` must equal ``lim_{e -> 0+} (f(beta + e h) - f(beta)) / e``.
    ``gradient`` is optional; when given, ``ddir(beta, h) == gradient(beta) @ h``.
    ``exact_gbf`` optionally evaluates the generalized Bregman function in closed
    form, which avoids cancellation for large function values.
    """

    value: Callable[[np.ndarray], float]
    ddir: Callable[[np.ndarray, np.ndarray], float]
    dim: int
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact_gbf: Optional[Callable[[np.ndarray, np.ndarray], float]] = None

    def __post_init__(self):
        if int(self.dim) <= 0:
            raise DomainError("dim must be a positive integer")

    def __call__(self, beta):
        return self.value(_vec(beta))

    @classmethod
    def from_gradient(cls, value, gradient, dim, exact_gbf=None):
        """Build from a value and gradient; ``ddir`` is the gradient pairing."""
        return cls(value=value, ddir=lambda b, h: float(np.dot(gradient(b), h)),
                   dim=dim, gradient=gradient, exact_gbf=exact_gbf)

    def _check_dim(self, x, name):
        if x.shape != (self.dim,):
            raise DomainError(f"{name} has shape {x.shape}, expected ({self.dim},)")


@dataclass(frozen=True)
class GbfValue:
    """Forward and backward generalized Bregman values at a pair of points."""

    forward: float
    backward: float

    @property
    def symmetric(self) -> float:
        return (self.forward + self.backward) / 2.0


def gbf(psi: DirectionalFunction, beta, gamma, use_exact=True) -> float:
    """Forward value ``psi(beta) - psi(gamma) - dpsi(gamma; beta - gamma)``."""
    beta, gamma = _vec(beta), _vec(gamma)
    psi._check_dim(beta, "beta")
    psi._check_dim(gamma, "gamma")
    if use_exact and psi.exact_gbf is not None:
        return _finite(psi.exact_gbf(beta, gamma), "exact gbf", gamma)
    fb = _finite(psi.value(beta), "value", beta)
    fg = _finite(psi.value(gamma), "value", gamma)
    d = _finite(psi.ddir(gamma, beta - gamma), "directional derivative", gamma)
    return fb - fg - d


def eval_gbf(psi: DirectionalFunction, beta, gamma, use_exact=True) -> GbfValue:
    """Forward, backward and symmetrized generalized Bregman function."""
    return GbfValue(forward=gbf(psi, beta, gamma, use_exact),
                    backward=gbf(psi, gamma, beta, use_exact))


def eval_gbf_via_integral(psi: DirectionalFunction, beta, gamma,
                          n_nodes: int = DEFAULT_NODES) -> float:
    """Integral form of the forward value, by composite Simpson quadrature.

    Integrates ``dpsi(gamma + s d; d) - dpsi(gamma; d)`` over ``s`` in [0, 1]
    with ``d = beta - gamma``. Independent of ``psi.value``, so it serves as a
    cross-check on :func:`gbf`.
    """
    beta, gamma = _vec(beta), _vec(gamma)
    if n_nodes < 3:
        raise DomainError("n_nodes must be at least 3")
    d = beta - gamma
    base = _finite(psi.ddir(gamma, d), "directional derivative", gamma)
    s = np.linspace(0.0, 1.0, int(n_nodes))
    vals = np.empty_like(s)
    for k, sk in enumerate(s):
        pt = gamma + sk * d
        vals[k] = _finite(psi.ddir(pt, d), "directional derivative", pt) - base
    return float(simpson(vals, x=s))


def eval_comb_gap(psi: DirectionalFunction, alpha, beta, theta: float) -> float:
    """Convexity gap ``theta psi(a) + (1-theta) psi(b) - psi(theta a + (1-theta) b)``."""
    if not 0.0 <= theta <= 1.0:
        raise DomainError(f"theta={theta} outside [0, 1]")
    alpha, beta = _vec(alpha), _vec(beta)
    if theta == 0.0 or theta == 1.0:
        return 0.0
    mid = theta * alpha + (1.0 - theta) * beta
    return (theta * _finite(psi.value(alpha), "value", alpha)
            + (1.0 - theta) * _finite(psi.value(beta), "value", beta)
            - _finite(psi.value(mid), "value", mid))


def finite_diff_ddir(value, beta, h, eps: Optional[float] = None) -> float:
    """One-sided forward difference ``(f(beta + eps h) - f(beta)) / eps``.

    Test oracle only. The default step is ``1e-6 * (1 + ||beta||)``.
    """
    beta, h = _vec(beta), _vec(h)
    if eps is None:
        eps = FD_EPS_SCALE * (1.0 + np.linalg.norm(beta))
    if eps <= 0:
        raise DomainError("eps must be positive")
    f1 = _finite(value(beta + eps * h), "value", beta + eps * h)
    f0 = _finite(value(beta), "value", beta)
    return (f1 - f0) / eps


def linear_combination(a: float, psi: DirectionalFunction, b: float,
                       phi: DirectionalFunction) -> DirectionalFunction:
    """The function ``a psi + b phi``."""
    if psi.dim != phi.dim:
        raise DomainError("dimension mismatch")
    grad = None
    if psi.gradient is not None and phi.gradient is not None:
        grad = lambda x: a * psi.gradient(x) + b * phi.gradient(x)
    return DirectionalFunction(
        value=lambda x: a * psi.value(x) + b * phi.value(x),
        ddir=lambda x, h: a * psi.ddir(x, h) + b * phi.ddir(x, h),
        dim=psi.dim, gradient=grad)


def compose_affine(psi: DirectionalFunction, X, c=None) -> DirectionalFunction:
    """The function ``beta -> psi(X beta + c)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    c = np.zeros(X.shape[0]) if c is None else _vec(c)
    if X.shape[0] != psi.dim:
        raise DomainError("X rows must match psi.dim")
    grad = None
    if psi.gradient is not None:
        grad = lambda b: X.T @ psi.gradient(X @ b + c)
    return DirectionalFunction(
        value=lambda b: psi.value(X @ b + c),
        ddir=lambda b, h: psi.ddir(X @ b + c, X @ h),
        dim=X.shape[1], gradient=grad)


def anchored_gbf(psi: DirectionalFunction, anchor) -> DirectionalFunction:
    """The function ``beta -> gbf(psi)(beta, anchor)`` for ``psi`` differentiable at ``anchor``."""
    if psi.gradient is None:
        raise DomainError("anchored_gbf needs a gradient at the anchor")
    anchor = _vec(anchor)
    g0 = psi.gradient(anchor)
    f0 = psi.value(anchor)
    return DirectionalFunction(
        value=lambda b: psi.value(b) - f0 - float(g0 @ (b - anchor)),
        ddir=lambda b, h: psi.ddir(b, h) - float(g0 @ h),
        dim=psi.dim,
        gradient=lambda b: psi.gradient(b) - g0)


def half_sq_norm(dim: int) -> DirectionalFunction:
    """``||beta||^2 / 2``; its generalized Bregman function is ``||beta - gamma||^2 / 2``."""
    return DirectionalFunction(
        value=lambda b: 0.5 * float(b @ b),
        ddir=lambda b, h: float(b @ h),
        dim=dim, gradient=lambda b: np.array(b, dtype=float),
        exact_gbf=lambda b, g: 0.5 * float((b - g) @ (b - g)))


def quadratic_form(Q, c=None) -> DirectionalFunction:
    """``beta' Q beta / 2 + c' beta`` for symmetric ``Q``."""
    Q = np.asarray(Q, dtype=float)
    c = np.zeros(Q.shape[0]) if c is None else _vec(c)

    def exact(b, g):
        d = b - g
        return 0.5 * float(d @ Q @ d)

    return DirectionalFunction(
        value=lambda b: 0.5 * float(b @ Q @ b) + float(c @ b),
        ddir=lambda b, h: float((Q @ b + c) @ h),
        dim=Q.shape[0], gradient=lambda b: Q @ b + c, exact_gbf=exact)


def negative_entropy(dim: int) -> DirectionalFunction:
    """``sum b log b - b`` on the positive orthant (the mirror map of exponentiated gradient)."""

    def value(b):
        if np.any(b <= 0):
            raise DomainError("negative entropy needs strictly positive arguments")
        return float(np.sum(b * np.log(b) - b))

    def exact(b, g):
        if np.any(b <= 0) or np.any(g <= 0):
            raise DomainError("negative entropy needs strictly positive arguments")
        return float(np.sum(b * np.log(b / g) - b + g))

    return DirectionalFunction(
        value=value, ddir=lambda b, h: float(np.log(b) @ h), dim=dim,
        gradient=lambda b: np.log(b), exact_gbf=exact)


def l1_norm(dim: int) -> DirectionalFunction:
    """``||beta||_1`` with its exact one-sided directional derivative."""

    def ddir(b, h):
        return float(np.sum(np.where(b != 0, np.sign(b) * h, np.abs(h))))

    return DirectionalFunction(value=lambda b: float(np.sum(np.abs(b))),
                               ddir=ddir, dim=dim)
