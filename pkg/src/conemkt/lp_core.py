"""Dense bounded-variable revised simplex.

Two-phase primal simplex on ``A x (<=,=,>=) b`` with ``lower <= x <= upper``.
Nonbasic variables sit at either bound; the explicit basis inverse is updated
by rank-one pivots and refactorized periodically.  Pricing is Dantzig's rule
for the first ``DANTZIG_ITERATIONS`` pivots, then Bland's rule, which cannot
cycle.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import Tolerances, get_tolerances

log = logging.getLogger(__name__)

DANTZIG_ITERATIONS = 5000
MAX_ITERATIONS = 1_000_000
REFACTOR_EVERY = 64

LE, EQ, GE = "<=", "=", ">="


class LpError(RuntimeError):
    pass


class LpIterationLimit(LpError):
    pass


@dataclass
class LinearProgram:
    c: np.ndarray
    A: np.ndarray
    senses: Sequence[str]
    b: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    maximize: bool = False

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.senses = tuple(self.senses)
        m = self.A.shape[0]
        if self.b.size != m or len(self.senses) != m:
            raise ValueError(f"dimension mismatch: A is {self.A.shape}, b has {self.b.size}, "
                             f"{len(self.senses)} senses")
        bad = set(self.senses) - {LE, EQ, GE}
        if bad:
            raise ValueError(f"unknown row sense(s) {bad}")
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()
        if self.lower.size != n or self.upper.size != n:
            raise ValueError("bounds do not match the number of variables")
        if not np.all(np.isfinite(self.lower)):
            raise ValueError("all lower bounds must be finite")
        if np.any(self.upper < self.lower):
            raise ValueError("upper bound below lower bound")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def with_objective(self, c, maximize: bool | None = None) -> "LinearProgram":
        return LinearProgram(c, self.A, self.senses, self.b, self.lower, self.upper,
                             self.maximize if maximize is None else maximize)

    def residual(self, x: np.ndarray) -> float:
        """Largest violation of the rows and bounds at ``x``."""
        ax = self.A @ x
        viol = [0.0]
        s = np.array(self.senses)
        if len(s):
            viol.append(np.max(np.where(s == LE, ax - self.b, 0.0), initial=0.0))
            viol.append(np.max(np.where(s == GE, self.b - ax, 0.0), initial=0.0))
            viol.append(np.max(np.where(s == EQ, np.abs(ax - self.b), 0.0), initial=0.0))
        viol.append(np.max(self.lower - x, initial=0.0))
        viol.append(np.max(np.where(np.isfinite(self.upper), x - self.upper, 0.0), initial=0.0))
        return float(max(viol))


@dataclass
class LpOutcome:
    status: str                          # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    duals: np.ndarray | None = None      # row multipliers y with c - A^T y = reduced costs
    reduced_costs: np.ndarray | None = None
    objective: float = float("nan")
    ray: np.ndarray | None = None
    iterations: int = 0
    basis: tuple | None = field(default=None, repr=False)
    primal_residual: float = float("nan")
    slackness_residual: float = float("nan")
    dual_bound: float = float("nan")

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class _Tableau:
    """Internal minimization form ``min c'z, Mz = r, 0 <= z <= u``."""

    def __init__(self, lp: LinearProgram, tol: Tolerances):
        self.tol = tol
        m, n = lp.A.shape
        self.n_struct = n
        self.m = m
        sign = -1.0 if lp.maximize else 1.0
        ub = lp.upper - lp.lower
        rhs = lp.b - lp.A @ lp.lower
        senses = np.array(lp.senses) if m else np.array([], dtype=str)
        slack_cols = [r for r in range(m) if senses[r] != EQ]
        ns = len(slack_cols)
        M = np.zeros((m, n + ns))
        M[:, :n] = lp.A
        for s, r in enumerate(slack_cols):
            M[r, n + s] = 1.0 if senses[r] == LE else -1.0
        flip = np.where(rhs < 0, -1.0, 1.0)
        M *= flip[:, None]
        rhs = rhs * flip
        self.flip = flip
        # rows whose slack can start basic
        start = np.full(m, -1)
        for s, r in enumerate(slack_cols):
            if M[r, n + s] > 0:
                start[r] = n + s
        art_rows = [r for r in range(m) if start[r] < 0]
        na = len(art_rows)
        self.n_slack = ns
        self.art_start = n + ns
        A_full = np.zeros((m, n + ns + na))
        A_full[:, : n + ns] = M
        for a, r in enumerate(art_rows):
            A_full[r, n + ns + a] = 1.0
            start[r] = n + ns + a
        self.A = A_full
        self.rhs = rhs
        self.ub = np.concatenate([ub, np.full(ns + na, np.inf)])
        self.cost = np.concatenate([sign * lp.c, np.zeros(ns + na)])
        self.start_basis = start
        self.n_total = A_full.shape[1]


def _refactor(A: np.ndarray, basis: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.inv(A[:, basis])
    except np.linalg.LinAlgError:
        raise LpError("basis matrix became singular") from None


def _simplex(tab: _Tableau, cost: np.ndarray, basis: np.ndarray, at_upper: np.ndarray,
             blocked: np.ndarray, iter0: int):
    """Run primal simplex from a feasible basis. Returns (status, basis, at_upper, Binv, ray, iters)."""
    tol = tab.tol
    A, ub, rhs = tab.A, tab.ub, tab.rhs
    m, N = A.shape
    Binv = _refactor(A, basis) if m else np.zeros((0, 0))
    it = iter0
    since_refactor = 0
    while True:
        if it >= MAX_ITERATIONS:
            raise LpIterationLimit(f"simplex exceeded {MAX_ITERATIONS} iterations")
        if since_refactor >= REFACTOR_EVERY:
            Binv = _refactor(A, basis)
            since_refactor = 0
        is_basic = np.zeros(N, dtype=bool)
        is_basic[basis] = True
        xN = np.where(at_upper, ub, 0.0)
        xN[is_basic] = 0.0
        xB = Binv @ (rhs - A @ xN) if m else np.zeros(0)
        y = cost[basis] @ Binv if m else np.zeros(0)
        d = cost - y @ A if m else cost.copy()
        eligible = ~is_basic & ~blocked & (ub > 0)
        improving = eligible & (((~at_upper) & (d < -tol.pivot)) | (at_upper & (d > tol.pivot)))
        cand = np.flatnonzero(improving)
        if cand.size == 0:
            return "optimal", basis, at_upper, Binv, None, it
        if it - iter0 < DANTZIG_ITERATIONS:
            q = int(cand[np.argmax(np.abs(d[cand]))])
        else:
            q = int(cand[0])
        direction = -1.0 if at_upper[q] else 1.0
        alpha = Binv @ A[:, q] if m else np.zeros(0)
        delta = -direction * alpha          # change of xB per unit step
        t_best = ub[q]
        leave = -1
        leave_to_upper = False
        if m:
            dec = delta < -tol.pivot
            inc = (delta > tol.pivot) & np.isfinite(ub[basis])
            ub_b = ub[basis]
            ratios = np.full(m, np.inf)
            ratios[dec] = np.maximum(xB[dec], 0.0) / -delta[dec]
            ratios[inc] = np.maximum(ub_b[inc] - xB[inc], 0.0) / delta[inc]
            t_min = ratios.min()
            if t_min < t_best:
                if it - iter0 < DANTZIG_ITERATIONS:
                    # Harris two-pass test: bounds relaxed by the feasibility
                    # tolerance, then the largest pivot among the admissible rows
                    relaxed = np.full(m, np.inf)
                    relaxed[dec] = (np.maximum(xB[dec], 0.0) + tol.feasibility) / -delta[dec]
                    relaxed[inc] = (np.maximum(ub_b[inc] - xB[inc], 0.0) + tol.feasibility) / delta[inc]
                    ties = np.flatnonzero(ratios <= relaxed.min())
                    leave = int(ties[np.argmax(np.abs(alpha[ties]))])
                else:
                    ties = np.flatnonzero(ratios <= t_min + 1e-12 * max(1.0, t_min))
                    leave = int(ties[np.argmin(basis[ties])])
                t_best = ratios[leave]
                leave_to_upper = bool(inc[leave])
        if not np.isfinite(t_best):
            ray = np.zeros(N)
            ray[q] = direction
            if m:
                ray[basis] = delta
            return "unbounded", basis, at_upper, Binv, ray, it
        it += 1
        if leave < 0:
            at_upper[q] = not at_upper[q]        # bound flip, basis unchanged
            continue
        out_var = basis[leave]
        piv = alpha[leave]
        row = Binv[leave] / piv
        Binv = Binv - np.outer(alpha, row)
        Binv[leave] = row
        basis[leave] = q
        at_upper[q] = False
        at_upper[out_var] = leave_to_upper
        since_refactor += 1


def _extract(tab: _Tableau, basis, at_upper, Binv):
    z = np.where(at_upper, tab.ub, 0.0)
    z[basis] = 0.0
    if tab.m:
        z[basis] = Binv @ (tab.rhs - tab.A @ z)
    return z


def solve_lp(lp: LinearProgram, warm_start: tuple | None = None,
             tol: Tolerances | None = None) -> LpOutcome:
    """Solve ``lp``; ``warm_start`` is the ``basis`` of an earlier outcome on the same constraints."""
    tol = tol or get_tolerances()
    tab = _Tableau(lp, tol)
    m, N = tab.A.shape
    n = tab.n_struct
    art = np.arange(N) >= tab.art_start
    blocked = np.zeros(N, dtype=bool)
    iters = 0
    basis = at_upper = Binv = None
    if warm_start is not None:
        wb, wu, wblocked = warm_start
        if len(wb) == m and len(wu) == N:
            basis = np.array(wb, dtype=int)
            at_upper = np.array(wu, dtype=bool)
            blocked = np.array(wblocked, dtype=bool)
            tab.ub[art] = 0.0
            try:
                Binv = _refactor(tab.A, basis)
                z = _extract(tab, basis, at_upper, Binv)
                if np.any(z < -tol.feasibility) or np.any(z - tab.ub > tol.feasibility):
                    basis = None
            except np.linalg.LinAlgError:
                basis = None
    if basis is None:
        blocked = np.zeros(N, dtype=bool)
        basis = tab.start_basis.copy()
        at_upper = np.zeros(N, dtype=bool)
        if art.any():
            phase1_cost = art.astype(float)
            status, basis, at_upper, Binv, _, iters = _simplex(tab, phase1_cost, basis, at_upper,
                                                               blocked, 0)
            z = _extract(tab, basis, at_upper, Binv)
            infeas = float(z[art].sum())
            scale = max(1.0, float(np.abs(tab.rhs).max(initial=0.0)))
            if infeas > tol.feasibility * scale:
                return LpOutcome("infeasible", iterations=iters)
            # pivot artificials out of the basis where possible
            for r in range(m):
                if basis[r] >= tab.art_start:
                    row = Binv[r] @ tab.A
                    cand = np.flatnonzero((np.abs(row) > 1e-7) & ~art & ~np.isin(np.arange(N), basis))
                    if cand.size:
                        q = int(cand[np.argmax(np.abs(row[cand]))])
                        alpha = Binv @ tab.A[:, q]
                        piv_row = Binv[r] / alpha[r]
                        Binv = Binv - np.outer(alpha, piv_row)
                        Binv[r] = piv_row
                        basis[r] = q
                        at_upper[q] = False
            blocked = art.copy()
            at_upper[art] = False
            tab.ub[art] = 0.0
    status, basis, at_upper, Binv, ray_full, it2 = _simplex(tab, tab.cost, basis, at_upper, blocked,
                                                          iters)
    iters = it2
    flip = tab.flip
    sgn = -1.0 if lp.maximize else 1.0
    if status == "unbounded":
        z = _extract(tab, basis, at_upper, Binv)
        x = z[:n] + lp.lower
        ray = ray_full[:n]
        ray = ray / max(np.abs(ray).max(), 1e-300)
        return LpOutcome("unbounded", x=x, ray=ray, iterations=iters,
                         objective=sgn * np.inf, primal_residual=lp.residual(x),
                         basis=(basis.copy(), at_upper.copy(), blocked.copy()))
    z = _extract(tab, basis, at_upper, Binv)
    x = z[:n] + lp.lower
    y_int = tab.cost[basis] @ Binv if m else np.zeros(0)
    # back to the caller's sign conventions: c - A^T y = reduced cost
    y = sgn * y_int * flip
    red = lp.c - lp.A.T @ y if m else lp.c.copy()
    obj = float(lp.c @ x)
    out = LpOutcome("optimal", x=x, duals=y, reduced_costs=red, objective=obj, iterations=iters,
                    basis=(basis.copy(), at_upper.copy(), blocked.copy()))
    out.primal_residual = lp.residual(x)
    out.slackness_residual = _slackness(lp, x, y, red)
    out.dual_bound = dual_bound(lp, y)
    return out


def _slackness(lp: LinearProgram, x, y, red) -> float:
    res = 0.0
    if lp.A.shape[0]:
        slack = lp.b - lp.A @ x
        res = float(np.max(np.abs(np.where(np.array(lp.senses) == EQ, 0.0, slack * y)), initial=0.0))
    # a variable with nonzero reduced cost must sit at the bound that cost pushes it to
    sgn = 1.0 if lp.maximize else -1.0
    push_up = sgn * red > 0
    gap_up = np.where(np.isfinite(lp.upper), lp.upper - x, np.inf)
    gap_lo = x - lp.lower
    with np.errstate(invalid="ignore"):
        r = np.where(push_up, np.abs(red) * gap_up, np.abs(red) * gap_lo)
    r = np.where(np.abs(red) > 0, r, 0.0)
    return float(max(res, np.max(r, initial=0.0)))


def dual_bound(lp: LinearProgram, y: np.ndarray) -> float:
    """Lagrangian bound from row multipliers ``y`` (upper bound for max, lower for min).

    Multipliers with the wrong sign for their row are clipped to zero.
    """
    s = np.array(lp.senses)
    y = np.asarray(y, dtype=float).copy()
    if lp.maximize:
        y[s == LE] = np.maximum(y[s == LE], 0.0)
        y[s == GE] = np.minimum(y[s == GE], 0.0)
    else:
        y[s == LE] = np.minimum(y[s == LE], 0.0)
        y[s == GE] = np.maximum(y[s == GE], 0.0)
    red = lp.c - lp.A.T @ y
    total = float(lp.b @ y)
    for j, r in enumerate(red):
        if lp.maximize:
            if r > 0:
                total += r * lp.upper[j]
            else:
                total += r * lp.lower[j]
        else:
            if r < 0:
                total += r * lp.upper[j]
            else:
                total += r * lp.lower[j]
    return total


def feasibility_with_margin(lp: LinearProgram, margin_rows: Sequence[int], cap: float = 1.0,
                            tol: Tolerances | None = None):
    """Maximize a uniform slack ``eps`` on the designated ``<=`` rows.

    Rows ``r`` in ``margin_rows`` become ``A_r x + eps <= b_r``; ``eps`` lives
    in ``[0, cap]``.  Returns ``(eps, x, outcome)``; ``eps`` is ``None`` when
    the system is infeasible.
    """
    m, n = lp.A.shape
    rows = list(margin_rows)
    if any(lp.senses[r] != LE for r in rows):
        raise ValueError("margin rows must be <= rows")
    col = np.zeros((m, 1))
    col[rows, 0] = 1.0
    ext = LinearProgram(np.concatenate([np.zeros(n), [1.0]]), np.hstack([lp.A, col]), lp.senses,
                        lp.b, np.concatenate([lp.lower, [0.0]]), np.concatenate([lp.upper, [cap]]),
                        maximize=True)
    out = solve_lp(ext, tol=tol)
    if not out.optimal:
        return None, None, out
    return float(out.x[-1]), out.x[:-1], out
