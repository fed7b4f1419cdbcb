"""Price processes built from Pareto maximizers and their verification.

The marginal utilities at an optimum, weighted by the scalarization weights
and averaged backwards through the tree, form a martingale.  If the optimum
keeps every terminal holding above a positive floor, this martingale is a
consistent price process.  Solving under tighter spreads makes it strictly
consistent for the original market.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .arbitrage import PriceProcess, check_nar
from .config import get_tolerances
from .market_cones import BidAskProcess, polar_slack, shrink_spreads, strict_margin
from .pareto import ParetoSolution, solve_scalarized
from .scenario_tree import ScenarioTree, backward_expectation
from .utility import UtilitySpec

log = logging.getLogger(__name__)

CONSISTENT = "consistent"
STRICT = "strictly consistent"
FAILED = "failed"

PIPELINE_FW_TOL = 1e-9


class PreconditionError(ValueError):
    """Raised when the market fails the robust no-arbitrage gate."""


@dataclass
class ConsistencyReport:
    martingale: np.ndarray                # per node, 0 at leaves
    slack: np.ndarray                     # max generator inner product per node
    margin: np.ndarray | None             # strict margin per node, if requested
    mass: np.ndarray                      # sum of Z per node
    verdict: str
    failures: list[str] = field(default_factory=list)
    floor_met: bool | None = None
    floor_violations: list[tuple[str, int, float]] = field(default_factory=list)
    zero_coordinates: list[int] = field(default_factory=list)
    strict_requested: bool = False
    node_ids: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return self.verdict == STRICT if self.strict_requested else self.verdict != FAILED

    def summary(self) -> dict:
        out = {
            "verdict": self.verdict,
            "max_martingale_residual": float(self.martingale.max(initial=0.0)),
            "max_polar_slack": float(self.slack.max(initial=-np.inf)),
            "floor_met": self.floor_met,
        }
        if self.margin is not None:
            out["min_strict_margin"] = float(self.margin.min())
        return out

    def to_dict(self) -> dict:
        nodes = []
        for k, nid in enumerate(self.node_ids):
            row = {"node": nid, "martingale_residual": float(self.martingale[k]),
                   "polar_slack": float(self.slack[k]), "mass": float(self.mass[k])}
            if self.margin is not None:
                row["strict_margin"] = float(self.margin[k])
            nodes.append(row)
        return {
            **self.summary(),
            "strict_requested": self.strict_requested,
            "failures": list(self.failures),
            "floor_violations": [{"leaf": lid, "asset": i, "value": v}
                                 for lid, i, v in self.floor_violations],
            "zero_coordinates": list(self.zero_coordinates),
            "tolerances": {"membership": get_tolerances().membership,
                           "strict_margin": get_tolerances().strict_margin},
            "nodes": nodes,
        }


def price_from_maximizer(tree: ScenarioTree, spec: UtilitySpec, solution: ParetoSolution) -> PriceProcess:
    """``Z_t^i = lambda_i E[U^i'(X_T^i) | F_t]`` with the weights as the caller gave them.

    The solver normalizes weights internally; pricing uses the raw ones so the
    scale of ``Z`` follows the caller's ``lambda``.
    """
    lam = np.asarray(solution.raw_weights, dtype=float)
    if np.any(lam < 0) or not np.any(lam > 0):
        raise ValueError("weights must be nonnegative and not all zero")
    X = np.asarray(solution.terminal, dtype=float)
    if np.any(X < 0):
        raise ValueError("terminal positions must be nonnegative")
    leaf = lam[None, :] * spec.deriv(X)
    return PriceProcess(tree, backward_expectation(tree, leaf))


def verify_consistency(Z: PriceProcess, tree: ScenarioTree, process: BidAskProcess,
                       delta_floor=None, X_hat=None, strict: bool = False) -> ConsistencyReport:
    """Residual report for ``Z`` against ``process``; never raises on a failed check.

    Every check is homogeneous in ``Z``, so residuals are measured after scaling
    to ``sum(Z_0) = 1`` (the normalization of the LP certificates).  A process
    with ``sum(Z_0) <= 0`` is checked unscaled.
    """
    tol = get_tolerances()
    Zv = np.asarray(Z.Z, dtype=float)
    if Zv.shape != (tree.size, process.d):
        raise ValueError(f"price process has shape {Zv.shape}, expected {(tree.size, process.d)}")
    root_mass = Zv[tree.index[tree.root]].sum()
    if root_mass > 0:
        Zv = Zv / root_mass
        Z = PriceProcess(tree, Zv)
    ids = tree.ids
    mart = Z.martingale_residuals()
    slack = np.array([polar_slack(process.pi[k], Zv[k]) for k in range(tree.size)])
    mass = Zv.sum(axis=1)
    margin = np.array([strict_margin(process.pi[k], Zv[k]) for k in range(tree.size)]) if strict else None
    failures = []
    for k in np.flatnonzero(mart > tol.membership):
        failures.append(f"martingale residual {mart[k]:.3e} at node {ids[k]}")
    for k in np.flatnonzero(slack > tol.membership):
        failures.append(f"polar slack {slack[k]:.3e} at node {ids[k]}")
    for k in np.flatnonzero(np.min(Zv, axis=1) < -tol.membership):
        failures.append(f"negative price at node {ids[k]}")
    for k in np.flatnonzero(mass < tol.nonzero):
        failures.append(f"price vector vanishes at node {ids[k]}")
    consistent = not failures
    verdict = CONSISTENT if consistent else FAILED
    if strict and consistent:
        weak = np.flatnonzero(~(margin > tol.strict_margin))
        for k in weak:
            failures.append(f"strict margin {margin[k]:.3e} at node {ids[k]}")
        if weak.size == 0:
            verdict = STRICT
    zero_coords = [i + 1 for i in range(process.d) if np.all(np.abs(Zv[:, i]) <= tol.nonzero)]
    floor_met, violations = None, []
    if delta_floor is not None and X_hat is not None:
        X = np.asarray(X_hat, dtype=float)
        delta = np.broadcast_to(np.asarray(delta_floor, dtype=float), (process.d,))
        for k, lid in enumerate(tree.leaf_ids):
            for i in range(process.d):
                if X[k, i] < delta[i]:
                    violations.append((lid, i + 1, float(X[k, i])))
        floor_met = not violations
    return ConsistencyReport(mart, slack, margin, mass, verdict, failures, floor_met, violations,
                             zero_coords, strict, ids)


@dataclass
class PipelineResult:
    Z: PriceProcess
    report: ConsistencyReport
    shrunk: BidAskProcess
    solution: ParetoSolution
    status: str                  # "ok" | "precondition-unmet" | "failed"
    nar_margin: float


def strict_pipeline(tree: ScenarioTree, process: BidAskProcess, theta: float, x, spec: UtilitySpec,
                    lam, delta_floor, fw_tol: float = PIPELINE_FW_TOL) -> PipelineResult:
    """Maximize under shrunk spreads, price from the maximizer, verify strictly against ``process``."""
    nar = check_nar(tree, process)
    if not nar.holds:
        raise PreconditionError(f"robust no-arbitrage fails (margin {nar.margin:.3e})")
    shrunk = shrink_spreads(process, theta)
    sol = solve_scalarized(tree, shrunk, x, spec, lam, tol=fw_tol)
    Z = price_from_maximizer(tree, spec, sol)
    report = verify_consistency(Z, tree, process, delta_floor, sol.terminal, strict=True)
    if report.floor_met is False:
        status = "precondition-unmet"
        log.info("terminal floor not met at %d leaf/asset pairs", len(report.floor_violations))
    else:
        status = "ok" if report.passed else "failed"
    return PipelineResult(Z, report, shrunk, sol, status, nar.margin)
