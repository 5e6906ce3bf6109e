"""Loss functions of the form ``l(beta) = l0(X beta)`` plus effective noise.

Every loss exposes ``value``, ``ddir`` and (for the smooth kinds) ``gradient``.
``l0`` and ``l0_grad`` act on the linear predictor ``eta = X beta``.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import DegenerateScale, DomainError, FactorizationError, Unsupported
from .gbf import DirectionalFunction, gbf

MAD_CONSISTENCY = 0.6745
TUKEY_EFFICIENCY = 4.685
HINGE_TIE_TOL = 1e-10

LOSS_KINDS = ("squared", "glm_gaussian", "glm_logistic", "glm_poisson",
              "itakura_saito", "kl_nmf", "huber", "tukey", "hinge", "sigmoidal")

__all__ = [
    "Loss", "SquaredLoss", "GlmLoss", "ItakuraSaitoLoss", "KlLoss", "HuberLoss",
    "TukeyLoss", "HingeLoss", "SigmoidalLoss", "EffectiveNoise", "make_loss",
    "loss_value", "loss_ddir", "effective_noise", "glm_kl_check", "robust_scale",
    "spectral_norm", "LOSS_KINDS", "TUKEY_EFFICIENCY",
]


def spectral_norm(X) -> float:
    """Largest singular value of ``X``."""
    return float(np.linalg.norm(np.asarray(X, dtype=float), 2))


class Loss:
    """Base class; ``X`` is ``n x p``, ``y`` has length ``n``."""

    kind = "loss"
    smooth = True

    def __init__(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if X.shape[0] != y.shape[0]:
            raise DomainError(f"X has {X.shape[0]} rows but y has length {y.shape[0]}")
        self.X = X
        self.y = y
        self.n, self.p = X.shape

    # eta-level pieces; subclasses override
    def l0(self, eta):
        raise NotImplementedError

    def l0_grad(self, eta):
        raise Unsupported(f"{self.kind} loss is not differentiable")

    def l0_ddir(self, eta, deta):
        return float(self.l0_grad(eta) @ deta)

    def l0_gbf(self, eta_b, eta_a):
        """Generalized Bregman function of ``l0`` at ``(eta_b, eta_a)``."""
        return self.l0(eta_b) - self.l0(eta_a) - self.l0_ddir(eta_a, eta_b - eta_a)

    def eta_curvature(self):
        """Upper bound on the second derivative of ``l0`` per coordinate, or None."""
        return None

    # beta-level
    def value(self, beta):
        return float(self.l0(self.X @ np.asarray(beta, dtype=float)))

    def gradient(self, beta):
        return self.X.T @ self.l0_grad(self.X @ np.asarray(beta, dtype=float))

    def value_and_gradient(self, beta):
        eta = self.X @ np.asarray(beta, dtype=float)
        return float(self.l0(eta)), self.X.T @ self.l0_grad(eta)

    def ddir(self, beta, h):
        beta = np.asarray(beta, dtype=float)
        return self.l0_ddir(self.X @ beta, self.X @ np.asarray(h, dtype=float))

    def gbf(self, beta, gamma):
        """Generalized Bregman function of the loss."""
        return self.l0_gbf(self.X @ np.asarray(beta, dtype=float),
                           self.X @ np.asarray(gamma, dtype=float))

    @cached_property
    def x_norm(self) -> float:
        return spectral_norm(self.X)

    @property
    def smoothness_bound(self):
        c = self.eta_curvature()
        return None if c is None else c * self.x_norm ** 2

    def as_function(self) -> DirectionalFunction:
        grad = self.gradient if self.smooth else None
        return DirectionalFunction(value=self.value, ddir=self.ddir, dim=self.p,
                                   gradient=grad, exact_gbf=self._exact_gbf())

    def _exact_gbf(self):
        return self.gbf

    def effective_noise_vector(self, beta_star):
        return -self.l0_grad(self.X @ np.asarray(beta_star, dtype=float))


class SquaredLoss(Loss):
    """``||y - X beta||^2 / 2``."""

    kind = "squared"

    def l0(self, eta):
        r = eta - self.y
        return 0.5 * float(r @ r)

    def l0_grad(self, eta):
        return eta - self.y

    def l0_gbf(self, eta_b, eta_a):
        d = eta_b - eta_a
        return 0.5 * float(d @ d)

    def eta_curvature(self):
        return 1.0


_GLM = {
    # cumulant b, mean b', and a bound on b''
    "glm_gaussian": (lambda e: 0.5 * e * e, lambda e: e, 1.0),
    "glm_logistic": (lambda e: np.logaddexp(0.0, e), expit, 0.25),
    "glm_poisson": (np.exp, np.exp, None),
}


class GlmLoss(Loss):
    """Canonical-link GLM loss ``sum(b(eta) - y eta) / sigma2``."""

    def __init__(self, X, y, family="glm_gaussian", sigma2=1.0):
        super().__init__(X, y)
        if family not in _GLM:
            raise DomainError(f"unknown GLM family {family!r}")
        if sigma2 <= 0:
            raise DomainError("sigma2 must be positive")
        self.kind = family
        self.sigma2 = float(sigma2)
        self._b, self._mean, self._curv = _GLM[family]

    def cumulant(self, eta):
        return self._b(np.asarray(eta, dtype=float))

    def mean(self, eta):
        return self._mean(np.asarray(eta, dtype=float))

    def l0(self, eta):
        return float(np.sum(self._b(eta) - self.y * eta)) / self.sigma2

    def l0_grad(self, eta):
        return (self._mean(eta) - self.y) / self.sigma2

    def l0_gbf(self, eta_b, eta_a):
        if self.kind == "glm_gaussian":
            d = eta_b - eta_a
            return 0.5 * float(d @ d) / self.sigma2
        return super().l0_gbf(eta_b, eta_a)

    def eta_curvature(self):
        return None if self._curv is None else self._curv / self.sigma2

    def effective_noise_vector(self, beta_star):
        return self.y - self._mean(self.X @ np.asarray(beta_star, dtype=float))


class _PositiveEta(Loss):
    def _check(self, eta):
        bad = np.flatnonzero(~(eta > 0))
        if bad.size:
            i = int(bad[0])
            raise DomainError(f"{self.kind} needs X beta > 0; row {i} has {eta[i]!r}")


class ItakuraSaitoLoss(_PositiveEta):
    """``sum(y/eta - log(y/eta) - 1)`` with ``eta = X beta > 0``."""

    kind = "itakura_saito"

    def __init__(self, X, y):
        super().__init__(X, y)
        if np.any(self.y <= 0):
            raise DomainError("Itakura-Saito loss needs y > 0")

    def l0(self, eta):
        self._check(eta)
        ratio = self.y / eta
        return float(np.sum(ratio - np.log(ratio) - 1.0))

    def l0_grad(self, eta):
        self._check(eta)
        return (eta - self.y) / (eta * eta)


class KlLoss(_PositiveEta):
    """Generalized KL divergence ``sum(y log(y/eta) - y + eta)``."""

    kind = "kl_nmf"

    def __init__(self, X, y):
        super().__init__(X, y)
        if np.any(self.y < 0):
            raise DomainError("KL loss needs y >= 0")

    def l0(self, eta):
        self._check(eta)
        y = self.y
        with np.errstate(divide="ignore", invalid="ignore"):
            ylog = np.where(y > 0, y * np.log(y / eta), 0.0)
        return float(np.sum(ylog - y + eta))

    def l0_grad(self, eta):
        self._check(eta)
        return 1.0 - self.y / eta


class HuberLoss(Loss):
    """Huber loss with transition point ``delta`` (often ``a * sigma``)."""

    kind = "huber"

    def __init__(self, X, y, delta):
        super().__init__(X, y)
        if delta <= 0:
            raise DomainError("huber delta must be positive")
        self.delta = float(delta)

    def l0(self, eta):
        r = np.abs(eta - self.y)
        d = self.delta
        return float(np.sum(np.where(r <= d, 0.5 * r * r, d * r - 0.5 * d * d)))

    def l0_grad(self, eta):
        return np.clip(eta - self.y, -self.delta, self.delta)

    def eta_curvature(self):
        return 1.0


class TukeyLoss(Loss):
    """Tukey biweight loss with cut-off ``c``.

    ``rho(r) = c^2/6 (1 - (1 - (r/c)^2)^3)`` for ``|r| <= c`` and ``c^2/6`` beyond;
    its derivative is ``psi(r) = r (1 - (r/c)^2)^2``, whose slope lies in [-0.8, 1].
    """

    kind = "tukey"

    def __init__(self, X, y, c):
        super().__init__(X, y)
        if c <= 0:
            raise DomainError("tukey c must be positive")
        self.c = float(c)

    @classmethod
    def from_scale(cls, X, y, sigma_hat):
        return cls(X, y, TUKEY_EFFICIENCY * float(sigma_hat))

    @classmethod
    def from_residuals(cls, X, y, residuals):
        return cls.from_scale(X, y, robust_scale(residuals))

    def rho(self, r):
        c = self.c
        w = np.clip(1.0 - (r / c) ** 2, 0.0, None)
        return c * c / 6.0 * (1.0 - w ** 3)

    def psi(self, r):
        c = self.c
        w = np.clip(1.0 - (r / c) ** 2, 0.0, None)
        return np.where(np.abs(r) <= c, r * w * w, 0.0)

    def l0(self, eta):
        return float(np.sum(self.rho(eta - self.y)))

    def l0_grad(self, eta):
        return self.psi(eta - self.y)

    def eta_curvature(self):
        return 1.0


class HingeLoss(Loss):
    """``sum (1 - y_i x_i' beta)_+`` for labels ``y`` in {-1, +1}."""

    kind = "hinge"
    smooth = False

    def __init__(self, X, y):
        super().__init__(X, y)
        self._absX = np.abs(self.X)

    def l0(self, eta):
        return float(np.sum(np.maximum(1.0 - self.y * eta, 0.0)))

    def kink_tolerance(self, beta):
        """Per-row tolerance for treating a margin as exactly at the kink.

        Scales with the rounding error of ``x_i' beta``. Treating a near-kink
        margin as a kink can only raise the directional derivative, which keeps
        downstream error terms on the conservative side.
        """
        return HINGE_TIE_TOL * (1.0 + self._absX @ np.abs(np.asarray(beta, dtype=float)))

    def l0_ddir(self, eta, deta, tol=None):
        m = 1.0 - self.y * eta
        dm = -self.y * deta
        if tol is None:
            tol = HINGE_TIE_TOL * (1.0 + np.abs(eta))
        active = m > tol
        kink = np.abs(m) <= tol
        return float(np.sum(dm[active]) + np.sum(np.maximum(dm[kink], 0.0)))

    def ddir(self, beta, h):
        beta = np.asarray(beta, dtype=float)
        return self.l0_ddir(self.X @ beta, self.X @ np.asarray(h, dtype=float),
                            tol=self.kink_tolerance(beta))

    def gbf(self, beta, gamma):
        beta = np.asarray(beta, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        eg = self.X @ gamma
        return (self.l0(self.X @ beta) - self.l0(eg)
                - self.l0_ddir(eg, self.X @ (beta - gamma), tol=self.kink_tolerance(gamma)))

    def gradient(self, beta):
        raise Unsupported("hinge loss is not differentiable")

    def effective_noise_vector(self, beta_star):
        raise Unsupported("effective noise needs a differentiable loss; hinge is not")


class SigmoidalLoss(Loss):
    """``sum (y_i - pi(x_i' beta))^2 / 2`` with the logistic sigmoid ``pi``.

    The curvature majorizer ``B = X' diag(|0.1 y| + 0.08) X`` is Cholesky
    factored once here.
    """

    kind = "sigmoidal"

    def __init__(self, X, y):
        super().__init__(X, y)
        w = np.abs(0.1 * self.y) + 0.08
        self.B = (self.X * w[:, None]).T @ self.X
        try:
            self.B_factor = linalg.cho_factor(self.B, lower=True)
        except linalg.LinAlgError as exc:
            raise FactorizationError("sigmoidal majorizer B is singular") from exc

    def l0(self, eta):
        r = self.y - expit(eta)
        return 0.5 * float(r @ r)

    def l0_grad(self, eta):
        u = expit(eta)
        return -(self.y - u) * u * (1.0 - u)

    @property
    def smoothness_bound(self):
        return float(np.linalg.eigvalsh(self.B)[-1])


class EffectiveNoise:
    """Effective noise ``-grad l0(X beta*)`` together with the loss kind."""

    __slots__ = ("epsilon", "source_kind")

    def __init__(self, epsilon, source_kind):
        self.epsilon = np.asarray(epsilon, dtype=float)
        self.source_kind = source_kind

    def __repr__(self):
        return f"EffectiveNoise(kind={self.source_kind}, n={self.epsilon.size})"


def make_loss(kind, X, y, **params) -> Loss:
    """Construct a loss by kind name.

    ``glm_*`` accept ``sigma2``; ``huber`` needs ``delta``; ``tukey`` takes
    ``c`` or ``sigma_hat`` or ``residuals``.
    """
    if kind == "squared":
        return SquaredLoss(X, y)
    if kind in _GLM:
        return GlmLoss(X, y, kind, params.get("sigma2", 1.0))
    if kind == "itakura_saito":
        return ItakuraSaitoLoss(X, y)
    if kind == "kl_nmf":
        return KlLoss(X, y)
    if kind == "huber":
        return HuberLoss(X, y, params["delta"])
    if kind == "tukey":
        if "c" in params:
            return TukeyLoss(X, y, params["c"])
        if "sigma_hat" in params:
            return TukeyLoss.from_scale(X, y, params["sigma_hat"])
        return TukeyLoss.from_residuals(X, y, params["residuals"])
    if kind == "hinge":
        return HingeLoss(X, y)
    if kind == "sigmoidal":
        return SigmoidalLoss(X, y)
    raise DomainError(f"unknown loss kind {kind!r}")


def loss_value(spec: Loss, beta) -> float:
    return spec.value(beta)


def loss_ddir(spec: Loss, beta, h) -> float:
    return spec.ddir(beta, h)


def effective_noise(spec: Loss, beta_star) -> EffectiveNoise:
    return EffectiveNoise(spec.effective_noise_vector(beta_star), spec.kind)


def glm_kl_check(spec: GlmLoss, eta1, eta2) -> float:
    """``gbf(b)(eta2, eta1) / sigma2`` where ``b`` is the summed cumulant."""
    if not isinstance(spec, GlmLoss):
        raise Unsupported("glm_kl_check needs a GLM loss")
    eta1 = np.atleast_1d(np.asarray(eta1, dtype=float))
    eta2 = np.atleast_1d(np.asarray(eta2, dtype=float))
    cumulant = DirectionalFunction.from_gradient(
        value=lambda e: float(np.sum(spec.cumulant(e))), gradient=spec.mean, dim=eta1.size)
    return gbf(cumulant, eta2, eta1) / spec.sigma2


def robust_scale(residuals) -> float:
    """Median absolute deviation divided by 0.6745."""
    r = np.asarray(residuals, dtype=float).ravel()
    if r.size < 2:
        raise DomainError("robust_scale needs at least two residuals")
    mad = float(np.median(np.abs(r - np.median(r))))
    if mad == 0.0:
        if np.all(r == r[0]):
            raise DegenerateScale("all residuals are identical")
        raise DegenerateScale("median absolute deviation is zero")
    return mad / MAD_CONSISTENCY
