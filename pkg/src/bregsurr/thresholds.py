"""Thresholding rules, their inverses and induced penalties.

A thresholding rule ``Theta(t; lam)`` is odd, nondecreasing, shrinks toward
zero, and vanishes on ``[0, lam)``. Its induced penalty is

    P(t; lam) = int_0^{|t|} (Theta_inv(u; lam) - u) du,
    Theta_inv(u; lam) = sup{t : Theta(t; lam) <= u},

and its concavity number is ``1 - ess inf dTheta_inv/du``: the smallest ``L``
with ``gbf(P)(b, g) + L (b - g)^2 / 2 >= 0``.
"""

from __future__ import annotations

import re
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from .errors import DomainError, InverseBracketError, TieError, Unsupported

INVERSE_TOL = 1e-12
PENALTY_QUAD_TOL = 1e-10
TIE_TOL = 1e-12
CONCAVITY_GRID = 10_000
CONCAVITY_SPAN = 20.0

__all__ = [
    "ThresholdingRule", "SoftThreshold", "HardThreshold", "ScadThreshold",
    "McpThreshold", "CustomThreshold", "get_rule",
    "apply_threshold", "threshold_inverse", "induced_penalty", "hard_penalty",
    "concavity_number", "quantile_threshold", "penalty_gbf", "lifted_gap_min",
]


def _check_lam(lam):
    if lam < 0:
        raise DomainError(f"threshold lambda={lam} must be nonnegative")


class ThresholdingRule:
    """Base class. Subclasses supply ``_apply`` and optionally closed forms.

    ``segments(lam)`` describes the penalty on ``u = |t| >= 0`` as a list of
    ``(lo, hi, p0, p1, p2)`` with ``P = p0 + p1 u + p2 u^2 / 2`` on ``[lo, hi]``;
    it enables the scaled proximal map :meth:`prox`.
    """

    name = "rule"
    concavity: float = float("nan")
    concavity_exact: bool = True

    # --- rule --------------------------------------------------------------
    def apply(self, t, lam):
        _check_lam(lam)
        out = self._apply(np.asarray(t, dtype=float), float(lam))
        return float(out) if np.ndim(out) == 0 else out

    def _apply(self, t, lam):
        raise NotImplementedError

    # --- inverse -----------------------------------------------------------
    def inverse(self, u, lam):
        _check_lam(lam)
        u = np.asarray(u, dtype=float)
        if np.any(u < 0):
            raise DomainError("threshold inverse needs u >= 0")
        out = self._inverse(u, float(lam))
        return float(out) if np.ndim(out) == 0 else out

    def _inverse(self, u, lam):
        return _bisect_inverse(self._apply, u, lam)

    # --- penalty -----------------------------------------------------------
    def penalty(self, t, lam):
        _check_lam(lam)
        out = self._penalty(np.abs(np.asarray(t, dtype=float)), float(lam))
        return float(out) if np.ndim(out) == 0 else out

    def _penalty(self, u, lam):
        segs = self.segments(lam)
        out = np.zeros_like(u)
        for lo, hi, p0, p1, p2 in segs:
            m = (u >= lo) & (u <= hi)
            out = np.where(m, p0 + p1 * u + 0.5 * p2 * u * u, out)
        return out

    def penalty_slope(self, u, lam):
        """Right derivative of the penalty at ``|t| = u``, i.e. ``Theta_inv(u) - u``."""
        u = np.asarray(u, dtype=float)
        return self.inverse(u, lam) - u

    def penalty_ddir(self, t, h, lam):
        """Elementwise one-sided directional derivative of the penalty at ``t`` along ``h``."""
        t = np.asarray(t, dtype=float)
        h = np.asarray(h, dtype=float)
        s = self.penalty_slope(np.abs(t), lam)
        return np.where(t != 0, np.sign(t) * s * h, s * np.abs(h))

    def segments(self, lam):
        raise Unsupported(f"{self.name} has no piecewise-quadratic penalty description")

    # --- proximal map ------------------------------------------------------
    def prox(self, a, lam, scale=1.0):
        """argmin_z (z - a)^2 / 2 + scale * P(z; lam), elementwise.

        ``scale == 1`` returns the rule itself. Ties go to the smaller magnitude.
        """
        _check_lam(lam)
        if scale <= 0:
            raise DomainError("prox scale must be positive")
        a = np.asarray(a, dtype=float)
        if scale == 1.0:
            return self.apply(a, lam)
        m = np.abs(a)
        cands, vals = [], []
        for lo, hi, p0, p1, p2 in self.segments(lam):
            k = 1.0 + scale * p2
            pts = [np.full_like(m, lo)]
            if np.isfinite(hi):
                pts.append(np.full_like(m, hi))
            if k > 0:
                st = (m - scale * p1) / k
                pts.append(np.clip(st, lo, hi))
            for u in pts:
                cands.append(u)
                vals.append(0.5 * (u - m) ** 2 + scale * (p0 + p1 * u + 0.5 * p2 * u * u))
        C = np.stack(cands)
        V = np.stack(vals)
        best = V.min(axis=0)
        # smallest magnitude among minimizers
        masked = np.where(V <= best, C, np.inf)
        u = masked.min(axis=0)
        out = np.sign(a) * u
        return float(out) if np.ndim(out) == 0 else out

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class SoftThreshold(ThresholdingRule):
    name = "soft"
    concavity = 0.0

    def _apply(self, t, lam):
        return np.sign(t) * np.maximum(np.abs(t) - lam, 0.0)

    def _inverse(self, u, lam):
        return u + lam

    def segments(self, lam):
        return [(0.0, np.inf, 0.0, lam, 0.0)]


class HardThreshold(ThresholdingRule):
    name = "hard"
    concavity = 1.0

    def _apply(self, t, lam):
        return np.where(np.abs(t) > lam, t, 0.0)

    def _inverse(self, u, lam):
        return np.maximum(u, lam)

    def segments(self, lam):
        return [(0.0, lam, 0.0, lam, -1.0), (lam, np.inf, 0.5 * lam * lam, 0.0, 0.0)]


class ScadThreshold(ThresholdingRule):
    """SCAD rule with shape parameter ``a > 2``."""

    def __init__(self, a=3.7):
        if a <= 2:
            raise DomainError("SCAD needs a > 2")
        self.a = float(a)
        self.name = f"scad({self.a:g})"
        self.concavity = 1.0 / (self.a - 1.0)

    def _apply(self, t, lam):
        a = self.a
        at = np.abs(t)
        soft = np.sign(t) * np.maximum(at - lam, 0.0)
        mid = ((a - 1.0) * t - np.sign(t) * a * lam) / (a - 2.0)
        return np.where(at <= 2 * lam, soft, np.where(at <= a * lam, mid, t))

    def _inverse(self, u, lam):
        a = self.a
        return np.where(u <= lam, u + lam,
                        np.where(u <= a * lam, ((a - 2.0) * u + a * lam) / (a - 1.0), u))

    def segments(self, lam):
        a = self.a
        return [(0.0, lam, 0.0, lam, 0.0),
                (lam, a * lam, -lam * lam / (2 * (a - 1)), a * lam / (a - 1), -1.0 / (a - 1)),
                (a * lam, np.inf, (a + 1) * lam * lam / 2, 0.0, 0.0)]


class McpThreshold(ThresholdingRule):
    """Minimax concave rule with shape parameter ``gamma > 1``."""

    def __init__(self, gamma=3.0):
        if gamma <= 1:
            raise DomainError("MCP needs gamma > 1")
        self.gamma = float(gamma)
        self.name = f"mcp({self.gamma:g})"
        self.concavity = 1.0 / self.gamma

    def _apply(self, t, lam):
        g = self.gamma
        at = np.abs(t)
        mid = np.sign(t) * (at - lam) / (1.0 - 1.0 / g)
        return np.where(at <= lam, 0.0, np.where(at <= g * lam, mid, t))

    def _inverse(self, u, lam):
        g = self.gamma
        return np.where(u <= g * lam, u * (1.0 - 1.0 / g) + lam, u)

    def segments(self, lam):
        g = self.gamma
        return [(0.0, g * lam, 0.0, lam, -1.0 / g), (g * lam, np.inf, g * lam * lam / 2, 0.0, 0.0)]


class CustomThreshold(ThresholdingRule):
    """A user-supplied rule ``func(t, lam)``, vectorized over ``t``.

    The inverse comes from bisection, the penalty from adaptive quadrature,
    and the concavity number from a grid estimate (``concavity_exact`` False).
    """

    concavity_exact = False

    def __init__(self, func: Callable, name="custom", concavity_lam=1.0):
        self.func = func
        self.name = name
        self._concavity_lam = float(concavity_lam)
        self._concavity = None

    def _apply(self, t, lam):
        return np.asarray(self.func(t, lam), dtype=float)

    def _penalty(self, u, lam):
        flat = np.atleast_1d(u).ravel()
        out = np.array([
            quad(lambda v: float(self._inverse(np.asarray(v), lam)) - v, 0.0, x,
                 epsabs=PENALTY_QUAD_TOL, epsrel=PENALTY_QUAD_TOL, limit=200)[0]
            if x > 0 else 0.0 for x in flat])
        return out.reshape(np.shape(u)) if np.ndim(u) else out[0]

    @property
    def concavity(self):
        if self._concavity is None:
            lam = self._concavity_lam
            grid = np.linspace(0.0, CONCAVITY_SPAN * lam, CONCAVITY_GRID + 1)
            inv = self._inverse(grid, lam)
            slopes = np.diff(inv) / np.diff(grid)
            self._concavity = float(1.0 - slopes.min())
        return self._concavity


def _bisect_inverse(apply, u, lam):
    """sup{t >= 0 : Theta(t) <= u} by vectorized bisection on ``[0, u + 10 lam + 1]``."""
    u = np.asarray(u, dtype=float)
    lo = np.zeros_like(u)
    hi = u + 10.0 * lam + 1.0
    if np.any(apply(hi, lam) <= u):
        raise InverseBracketError(f"Theta stays below u on [0, u + 10*lam + 1] (lam={lam})")
    while np.any(hi - lo > INVERSE_TOL):
        mid = 0.5 * (lo + hi)
        # stop once the bracket cannot shrink in floating point
        if np.all((mid == lo) | (mid == hi)):
            break
        ok = apply(mid, lam) <= u
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return 0.5 * (lo + hi)


_RULE_RE = re.compile(r"^\s*(soft|hard|scad|mcp)\s*(?:\(\s*([0-9.eE+-]+)\s*\))?\s*$")


def get_rule(spec) -> ThresholdingRule:
    """Parse ``"soft"``, ``"hard"``, ``"scad(3.7)"`` or ``"mcp(3)"``; rules pass through."""
    if isinstance(spec, ThresholdingRule):
        return spec
    m = _RULE_RE.match(str(spec).lower())
    if not m:
        raise DomainError(f"unknown thresholding rule {spec!r}")
    kind, arg = m.group(1), m.group(2)
    if kind == "soft":
        return SoftThreshold()
    if kind == "hard":
        return HardThreshold()
    if kind == "scad":
        return ScadThreshold(float(arg) if arg else 3.7)
    return McpThreshold(float(arg) if arg else 3.0)


def apply_threshold(rule, t, lam):
    return get_rule(rule).apply(t, lam)


def threshold_inverse(rule, u, lam):
    return get_rule(rule).inverse(u, lam)


def induced_penalty(rule, t, lam):
    return get_rule(rule).penalty(t, lam)


def hard_penalty(t, lam):
    """Capped penalty induced by hard thresholding; vectors are summed."""
    _check_lam(lam)
    u = np.abs(np.asarray(t, dtype=float))
    vals = np.where(u < lam, -0.5 * u * u + lam * u, 0.5 * lam * lam)
    return float(vals) if vals.ndim == 0 else float(vals.sum())


def concavity_number(rule) -> float:
    """Concavity number; check ``rule.concavity_exact`` for whether it is a grid estimate."""
    return float(get_rule(rule).concavity)


def penalty_gbf(rule, b, g, lam):
    """Elementwise generalized Bregman function of the induced penalty."""
    rule = get_rule(rule)
    b = np.asarray(b, dtype=float)
    g = np.asarray(g, dtype=float)
    return rule.penalty(b, lam) - rule.penalty(g, lam) - rule.penalty_ddir(g, b - g, lam)


def lifted_gap_min(rule, lam, L, grid):
    """Minimum of ``gbf(P)(b, g) + L (b - g)^2 / 2`` over all pairs drawn from ``grid``."""
    grid = np.asarray(grid, dtype=float)
    B, G = np.meshgrid(grid, grid, indexing="ij")
    vals = penalty_gbf(rule, B, G, lam) + 0.5 * L * (B - G) ** 2
    return float(vals.min())


def quantile_threshold(alpha, q: int):
    """Keep the ``q`` largest-magnitude entries of ``alpha`` and zero the rest.

    Raises :class:`TieError` when the q-th and (q+1)-th magnitudes agree within
    ``TIE_TOL`` and are nonzero (a tie among exact zeros does not change the output).
    """
    alpha = np.asarray(alpha, dtype=float)
    p = alpha.size
    q = int(q)
    if not 0 <= q <= p:
        raise DomainError(f"q={q} outside [0, {p}]")
    out = np.zeros_like(alpha)
    if q == 0:
        return out
    if q == p:
        return alpha.copy()
    mags = np.abs(alpha)
    order = np.argsort(-mags, kind="stable")
    cut, nxt = mags[order[q - 1]], mags[order[q]]
    if cut - nxt <= TIE_TOL and cut > TIE_TOL:
        tied = np.flatnonzero(np.abs(mags - cut) <= TIE_TOL)
        raise TieError(f"tie at rank {q}: |alpha| = {cut!r} at indices {tied.tolist()}", tied)
    keep = order[:q]
    out[keep] = alpha[keep]
    return out
