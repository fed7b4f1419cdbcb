"""No-arbitrage and robust no-arbitrage decided by linear programming.

NA is tested directly on the attainable cone: with zero endowment, maximize
the total terminal mass subject to ``X_T >= 0``; any positive value is an
arbitrage.  NA^r is decided through the existence of a strictly consistent
price process (a strictly positive martingale in the relative interior of the
polar cones), which is an LP with a uniform margin variable.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .attainable import TransferPlan, assemble_constraints, realize
from .config import get_tolerances
from .lp_core import EQ, GE, LE, LinearProgram, LpError, feasibility_with_margin, solve_lp
from .market_cones import BidAskProcess, degenerate_pairs, ordered_pairs, strict_margin
from .scenario_tree import ScenarioTree, backward_expectation

log = logging.getLogger(__name__)


@dataclass
class PriceProcess:
    """Candidate price process; ``Z`` has shape (nodes, d) in ``tree.ids`` order."""

    tree: ScenarioTree
    Z: np.ndarray

    @property
    def d(self) -> int:
        return self.Z.shape[1]

    @property
    def terminal(self) -> np.ndarray:
        return self.Z[list(self.tree.leaves)]

    def martingale_residuals(self) -> np.ndarray:
        """Max-norm of ``E[Z_{t+1} | F_t] - Z_t`` at every node (0 at leaves)."""
        res = np.zeros(self.tree.size)
        for k, kids in enumerate(self.tree.children):
            if kids:
                avg = sum(self.tree.transition[c] * self.Z[c] for c in kids)
                res[k] = float(np.max(np.abs(avg - self.Z[k])))
        return res

    def to_records(self) -> list[dict]:
        return [{"node": nid, "Z": self.Z[k].tolist()} for k, nid in enumerate(self.tree.ids)]

    @classmethod
    def from_records(cls, tree: ScenarioTree, records) -> "PriceProcess":
        by = {str(r["node"]): r["Z"] for r in records}
        return cls(tree, np.array([by[n] for n in tree.ids], dtype=float))


@dataclass
class ArbitrageCertificate:
    plan: TransferPlan
    terminal: np.ndarray                  # (leaves, d), X_T >= 0, nonzero
    violated: list[tuple[str, int]]       # (leaf id, 1-based asset) with X_T > 0

    def replay(self, tree: ScenarioTree, process: BidAskProcess) -> np.ndarray:
        return realize(self.plan, tree, process, np.zeros(process.d))[1]

    def is_valid(self, tree: ScenarioTree, process: BidAskProcess) -> bool:
        """Replays to ``X_T >= -1e-8`` with a component >= 1e-6 somewhere."""
        if np.any(self.plan.a < 0) or np.any(self.plan.dsp < 0):
            return False
        X = self.replay(tree, process)
        if np.max(np.abs(X - self.terminal)) > 1e-8:
            return False
        return bool(np.all(X >= -1e-8) and np.max(X) >= 1e-6)

    def to_dict(self, tree: ScenarioTree) -> dict:
        return {
            "kind": "arbitrage",
            "plan": self.plan.to_records(tree),
            "terminal": {lid: self.terminal[k].tolist() for k, lid in enumerate(tree.leaf_ids)},
            "violated": [{"leaf": lid, "asset": i} for lid, i in self.violated],
        }


@dataclass
class NAResult:
    holds: bool
    value: float
    certificate: ArbitrageCertificate | None = None
    box: float = float("nan")


def check_na(tree: ScenarioTree, process: BidAskProcess) -> NAResult:
    """Maximize total terminal mass from zero endowment; NA iff the optimum is ~0."""
    tol = get_tolerances()
    d = process.d
    sk = assemble_constraints(tree, process, np.zeros(d))
    lp = sk.lp.with_objective(sk.objective(np.ones(len(tree.leaves) * d)), maximize=True)
    out = solve_lp(lp)
    if out.status == "infeasible":
        raise LpError("NA program infeasible (the zero plan is always feasible)")
    if out.status == "unbounded":      # cannot happen with the box; kept for safety
        p = out.ray
    else:
        p = out.x
        if out.objective <= tol.na_value:
            return NAResult(True, float(out.objective), None, sk.box)
    p = np.maximum(p, 0.0)
    X = sk.terminal(p)
    top = float(X.max())
    if top <= 0:
        return NAResult(True, float(out.objective), None, sk.box)
    p = p / top
    plan = sk.plan(p)
    X = realize(plan, tree, process, np.zeros(d))[1]
    violated = [(tree.leaf_ids[k], i + 1) for k in range(X.shape[0]) for i in range(d) if X[k, i] > 1e-9]
    cert = ArbitrageCertificate(plan, X, violated)
    log.info("arbitrage found: terminal mass %.6g (box %.4g)", out.objective, sk.box)
    return NAResult(False, float(out.objective), cert, sk.box)


@dataclass
class PriceResult:
    Z: PriceProcess | None
    margin: float
    status: str = "optimal"


def _price_lp(tree: ScenarioTree, process: BidAskProcess, strict: bool):
    tol = get_tolerances()
    d = process.d
    N = tree.size
    n = N * d
    rows, senses, rhs, margin_rows = [], [], [], []

    def var(k, i):
        return k * d + i

    for k, kids in enumerate(tree.children):
        if not kids:
            continue
        for i in range(d):
            r = np.zeros(n)
            r[var(k, i)] = -1.0
            for c in kids:
                r[var(c, i)] += tree.transition[c]
            rows.append(r), senses.append(EQ), rhs.append(0.0)
    for k in range(N):
        pi = process.pi[k]
        degen = degenerate_pairs(pi)
        for (i, j) in ordered_pairs(d):
            r = np.zeros(n)
            r[var(k, j)] = 1.0
            r[var(k, i)] -= pi[i, j]
            if strict and not degen[i, j]:
                margin_rows.append(len(rows))
            rows.append(r), senses.append(LE), rhs.append(0.0)
        if strict:
            for i in range(d):
                r = np.zeros(n)
                r[var(k, i)] = -1.0
                margin_rows.append(len(rows))
                rows.append(r), senses.append(LE), rhs.append(0.0)
        else:
            r = np.zeros(n)
            r[var(k, 0):var(k, 0) + d] = 1.0
            rows.append(r), senses.append(GE), rhs.append(tol.nonzero)
    r = np.zeros(n)
    r[:d] = 1.0
    rows.append(r), senses.append(EQ), rhs.append(1.0)
    lp = LinearProgram(np.zeros(n), np.array(rows), senses, rhs)
    return lp, margin_rows


def find_price_process(tree: ScenarioTree, process: BidAskProcess, strict: bool) -> PriceResult:
    """Consistent (or, with ``strict``, strictly consistent) price process normalized to ``sum Z_0 = 1``.

    For ``strict`` the returned margin is the LP's uniform slack on positivity
    and on every nondegenerate polar inequality; otherwise it is the
    smallest :func:`strict_margin` of the found process over the nodes.
    """
    lp, margin_rows = _price_lp(tree, process, strict)
    if strict:
        eps, z, out = feasibility_with_margin(lp, margin_rows)
        if eps is None:
            return PriceResult(None, 0.0, out.status)
        Z = PriceProcess(tree, np.maximum(z.reshape(tree.size, process.d), 0.0))
        return PriceResult(Z, eps)
    out = solve_lp(lp)
    if not out.optimal:
        return PriceResult(None, 0.0, out.status)
    Z = PriceProcess(tree, np.maximum(out.x.reshape(tree.size, process.d), 0.0))
    m = min(strict_margin(process.pi[k], Z.Z[k]) for k in range(tree.size))
    return PriceResult(Z, float(m))


@dataclass
class NARResult:
    holds: bool
    margin: float
    certificate: PriceProcess | None = None


def check_nar(tree: ScenarioTree, process: BidAskProcess) -> NARResult:
    res = find_price_process(tree, process, strict=True)
    holds = res.Z is not None and res.margin > get_tolerances().strict_margin
    return NARResult(holds, res.margin, res.Z if holds else None)


@dataclass
class BudgetReport:
    residual: float                          # E<Z_T, X_T> - <Z_0, x>
    expected_value: float
    initial_value: float
    q_expectations: list[float | None] = field(default_factory=list)   # E_{Q^i} X^i
    q_bounds: list[float | None] = field(default_factory=list)         # <Z_0, x> / Z_0^i

    @property
    def ok(self) -> bool:
        return self.residual <= get_tolerances().na_value


def budget_bound(Z: PriceProcess, x, X_T, tree: ScenarioTree) -> BudgetReport:
    """Check ``E_P <Z_T, X_T> <= <Z_0, x>`` and the per-asset ``Q^i`` expectations."""
    x = np.asarray(x, dtype=float)
    X = np.asarray(X_T, dtype=float)
    ZT = Z.terminal
    p = tree.leaf_probabilities
    ev = float(np.sum(p * np.sum(ZT * X, axis=1)))
    z0 = Z.Z[0]
    init = float(z0 @ x)
    qe, qb = [], []
    for i in range(Z.d):
        if z0[i] > 0:
            qe.append(float(np.sum(p * ZT[:, i] / z0[i] * X[:, i])))
            qb.append(init / z0[i])
        else:
            qe.append(None)
            qb.append(None)
    return BudgetReport(ev - init, ev, init, qe, qb)


def martingale_from_leaves(tree: ScenarioTree, leaf_values) -> PriceProcess:
    """Price process whose interior values are conditional expectations of ``leaf_values``."""
    return PriceProcess(tree, backward_expectation(tree, leaf_values))
