"""Dense two-phase tableau simplex with Bland's rule, and the capped-l1 SVM LP.

Standard form: minimize ``c'x`` subject to ``Ax = b``, ``x >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, PivotLimitError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

DEFAULT_TOL = 1e-9
DEFAULT_MAX_PIVOTS = 100_000
REFACTOR_EVERY = 50

__all__ = ["StandardFormLP", "LpSolution", "solve_simplex", "DcSvmLP",
           "formulate_dc_svm", "OPTIMAL", "INFEASIBLE", "UNBOUNDED"]


@dataclass(frozen=True)
class StandardFormLP:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if A.shape != (b.size, c.size):
            raise DomainError(f"inconsistent LP shapes A{A.shape}, b{b.shape}, c{c.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise DomainError("LP data must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)


@dataclass
class LpSolution:
    x: np.ndarray
    objective: float
    status: str
    pivots: int
    basis: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    reduced_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))


class _Tableau:
    """Rows ``0..m-1`` are constraints, row ``m`` is the reduced-cost row; last column is the RHS.

    ``A0``, ``b0`` and ``cost`` hold the original data so the tableau can be
    rebuilt from the current basis, which removes accumulated rounding drift.
    """

    def __init__(self, T, basis, tol, budget, A0, b0):
        self.T = T
        self.basis = basis
        self.tol = tol
        self.budget = budget
        self.pivots = 0
        self.A0 = A0
        self.b0 = b0
        self.cost = np.zeros(A0.shape[1])

    def pivot(self, r, s):
        if self.pivots >= self.budget:
            raise PivotLimitError(f"simplex exceeded {self.budget} pivots")
        T = self.T
        T[r] /= T[r, s]
        col = T[:, s].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, s] = 0.0
        T[r, s] = 1.0
        self.basis[r] = s
        self.pivots += 1

    def refactor(self):
        m = self.T.shape[0] - 1
        B = self.A0[:, self.basis]
        try:
            X = np.linalg.solve(B, np.column_stack([self.A0, self.b0]))
        except np.linalg.LinAlgError:
            return
        X[:, self.basis] = np.eye(m)
        cb = self.cost[self.basis]
        self.T[:m] = X
        self.T[m, :-1] = self.cost - cb @ X[:, :-1]
        self.T[m, -1] = -cb @ X[:, -1]

    def run(self, allowed):
        """Bland's rule over columns where ``allowed`` is True. Returns a status.

        A terminal status is only accepted if it survives a refactorization.
        """
        T, tol = self.T, self.tol
        m = T.shape[0] - 1
        since, verified = 0, False
        while True:
            if since >= REFACTOR_EVERY:
                self.refactor()
                since = 0
            cost = T[m, :-1]
            cand = np.flatnonzero((cost < -tol) & allowed)
            status = None
            if cand.size == 0:
                status = OPTIMAL
            else:
                s = int(cand[0])
                colv = T[:m, s]
                pos = np.flatnonzero(colv > tol)
                if pos.size == 0:
                    status = UNBOUNDED
            if status is not None:
                if verified or since == 0:
                    return status
                self.refactor()
                since, verified = 0, True
                continue
            verified = False
            ratios = T[pos, -1] / colv[pos]
            rmin = ratios.min()
            ties = pos[ratios <= rmin + tol * max(1.0, abs(rmin))]
            r = int(ties[np.argmin(self.basis[ties])])
            self.pivot(r, s)
            since += 1


def solve_simplex(lp: StandardFormLP, max_pivots: int = DEFAULT_MAX_PIVOTS,
                  tol: float = DEFAULT_TOL) -> LpSolution:
    """Two-phase primal simplex with Bland's anti-cycling rule.

    Unit columns already present in ``A`` seed the starting basis, so
    artificial variables are added only for rows that lack one.
    Infeasible and unbounded problems are reported through ``status``.
    """
    A = lp.A.copy()
    b = lp.b.copy()
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    basis = -np.ones(m, dtype=int)
    for j in range(n):
        col = A[:, j]
        nz = np.flatnonzero(col)
        if nz.size == 1 and col[nz[0]] == 1.0 and basis[nz[0]] < 0:
            basis[nz[0]] = j
    need = np.flatnonzero(basis < 0)
    n_art = need.size
    N = n + n_art
    T = np.zeros((m + 1, N + 1))
    T[:m, :n] = A
    T[:m, -1] = b
    for k, i in enumerate(need):
        T[i, n + k] = 1.0
        basis[i] = n + k
    tab = _Tableau(T, basis, tol, max_pivots, T[:m, :-1].copy(), b.copy())
    is_art = np.zeros(N, dtype=bool)
    is_art[n:] = True

    if n_art:
        # phase 1: minimize the sum of artificials
        tab.cost[n:N] = 1.0
        T[m, n:N] = 1.0
        T[m] -= T[need].sum(axis=0)
        tab.run(np.ones(N, dtype=bool))
        infeas = -T[m, -1]
        if infeas > tol * max(1.0, float(np.abs(b).max(initial=0.0))):
            return LpSolution(x=np.full(n, np.nan), objective=float("nan"),
                              status=INFEASIBLE, pivots=tab.pivots, basis=basis.copy())
        # drive artificials out of the basis; drop redundant rows
        keep = np.ones(m + 1, dtype=bool)
        for r in range(m):
            if is_art[basis[r]]:
                row = T[r, :n]
                cand = np.flatnonzero(np.abs(row) > tol)
                if cand.size:
                    tab.pivot(r, int(cand[0]))
                else:
                    keep[r] = False
        if not keep.all():
            T = T[keep]
            basis = basis[keep[:m]]
            tab.T, tab.basis = T, basis
            tab.A0, tab.b0 = tab.A0[keep[:m]], tab.b0[keep[:m]]
            m = T.shape[0] - 1
    # phase 2 objective row
    cfull = np.zeros(N)
    cfull[:n] = lp.c
    tab.cost = cfull
    T[m, :-1] = cfull
    T[m, -1] = 0.0
    T[m] -= cfull[basis] @ T[:m]
    status = tab.run(~is_art)
    x = np.zeros(N)
    x[basis] = T[:m, -1]
    x = x[:n]
    if status == UNBOUNDED:
        return LpSolution(x=x, objective=-np.inf, status=UNBOUNDED, pivots=tab.pivots,
                          basis=basis.copy())
    return LpSolution(x=x, objective=float(lp.c @ x), status=OPTIMAL, pivots=tab.pivots,
                      basis=basis.copy(), reduced_costs=T[m, :n].copy())


@dataclass(frozen=True)
class DcSvmLP:
    """The capped-l1 SVM linearized subproblem in standard form plus its variable map.

    Full layout: ``beta_plus, beta_minus, xi, zeta`` then the slacks of the
    margin, upper and lower rows. Compact layout: ``beta_plus, beta_minus, xi``
    and the margin slacks, with ``zeta = beta_plus + beta_minus`` implied.
    """

    lp: StandardFormLP
    n: int
    p: int
    compact: bool = False

    @property
    def beta_plus(self):
        return slice(0, self.p)

    @property
    def beta_minus(self):
        return slice(self.p, 2 * self.p)

    @property
    def xi(self):
        return slice(2 * self.p, 2 * self.p + self.n)

    @property
    def zeta(self):
        if self.compact:
            return None
        return slice(2 * self.p + self.n, 3 * self.p + self.n)

    def recover(self, x):
        """Return ``(beta, xi, zeta)`` from a standard-form solution."""
        x = np.asarray(x, dtype=float)
        bp, bm = x[self.beta_plus], x[self.beta_minus]
        zeta = bp + bm if self.compact else x[self.zeta].copy()
        return bp - bm, x[self.xi].copy(), zeta


def formulate_dc_svm(X, y, lam: float, indicator, compact: bool = False) -> DcSvmLP:
    """LP for ``min sum xi + lam sum zeta - lam sum_j beta_j ind_j``.

    Constraints: ``xi_i >= 1 - y_i x_i' beta``, ``-zeta <= beta <= zeta``,
    ``xi, zeta >= 0``; ``beta`` is split into nonnegative parts. ``indicator``
    may be boolean or signed (entries in {-1, 0, 1}).

    With ``compact=True`` and ``lam > 0`` the bound rows are dropped and
    ``zeta_j`` is replaced by ``beta_plus_j + beta_minus_j``; both forms have
    the same optimal value and the same optimal ``beta`` set.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    ind = np.asarray(indicator, dtype=float)
    n, p = X.shape
    if y.shape != (n,) or ind.shape != (p,):
        raise DomainError("dimension mismatch in formulate_dc_svm")
    if lam < 0:
        raise DomainError("lambda must be nonnegative")
    YX = y[:, None] * X
    ii, jj = np.arange(n), np.arange(p)
    if compact:
        if lam == 0:
            raise DomainError("the compact form needs lam > 0")
        A = np.hstack([YX, -YX, np.eye(n), -np.eye(n)])
        b = np.ones(n)
        c = np.concatenate([lam - lam * ind, lam + lam * ind, np.ones(n), np.zeros(n)])
        return DcSvmLP(StandardFormLP(A, b, c), n, p, compact=True)
    nv = 3 * p + n + n + 2 * p
    A = np.zeros((n + 2 * p, nv))
    b = np.zeros(n + 2 * p)
    c = np.zeros(nv)
    o_xi, o_z = 2 * p, 2 * p + n
    o_sm, o_su, o_sl = 3 * p + n, 3 * p + 2 * n, 4 * p + 2 * n
    # margin rows: y_i x_i' (b+ - b-) + xi_i - s_i = 1
    A[:n, :p] = YX
    A[:n, p:2 * p] = -YX
    A[ii, o_xi + ii] = 1.0
    A[ii, o_sm + ii] = -1.0
    b[:n] = 1.0
    # upper rows: b+ - b- - zeta + su = 0
    A[n + jj, jj] = 1.0
    A[n + jj, p + jj] = -1.0
    A[n + jj, o_z + jj] = -1.0
    A[n + jj, o_su + jj] = 1.0
    # lower rows: -b+ + b- - zeta + sl = 0
    A[n + p + jj, jj] = -1.0
    A[n + p + jj, p + jj] = 1.0
    A[n + p + jj, o_z + jj] = -1.0
    A[n + p + jj, o_sl + jj] = 1.0
    c[o_xi:o_xi + n] = 1.0
    c[o_z:o_z + p] = lam
    c[:p] = -lam * ind
    c[p:2 * p] = lam * ind
    return DcSvmLP(StandardFormLP(A, b, c), n, p)
