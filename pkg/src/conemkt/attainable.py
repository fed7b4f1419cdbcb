"""Self-financing portfolio processes as nonnegative transfer plans.

A plan assigns to every node ``n`` an amount ``a[n, i, j] >= 0`` of asset
``j`` bought with asset ``i`` (paying ``pi[i, j]`` units of ``i`` per unit)
and a disposal ``dsp[n, i] >= 0``.  The increment at ``n`` is then a
nonnegative combination of the generators of ``-K(pi_n)``, so every plan
realizes a self-financing portfolio process and vice versa.

In vector form a plan is laid out node by node, each block holding the
``d(d-1)`` transfers in :func:`ordered_pairs` order followed by the ``d``
disposals.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .config import get_tolerances
from .lp_core import LE, EQ, LinearProgram, solve_lp
from .market_cones import BidAskProcess, ordered_pairs
from .scenario_tree import ScenarioTree

log = logging.getLogger(__name__)


def block_size(d: int) -> int:
    return d * d


def increment_matrix(pi: np.ndarray) -> np.ndarray:
    """(d, d*d) matrix mapping one node's plan block to its portfolio increment."""
    d = pi.shape[0]
    G = np.zeros((d, block_size(d)))
    for col, (i, j) in enumerate(ordered_pairs(d)):
        G[i, col] = -pi[i, j]
        G[j, col] = 1.0
    G[:, d * (d - 1):] = -np.eye(d)
    return G


@dataclass
class TransferPlan:
    a: np.ndarray      # (nodes, d, d), zero diagonal
    dsp: np.ndarray    # (nodes, d)

    @property
    def d(self) -> int:
        return self.dsp.shape[1]

    def to_vector(self) -> np.ndarray:
        d = self.d
        pairs = ordered_pairs(d)
        out = np.zeros((self.dsp.shape[0], block_size(d)))
        for col, (i, j) in enumerate(pairs):
            out[:, col] = self.a[:, i, j]
        out[:, d * (d - 1):] = self.dsp
        return out.ravel()

    @classmethod
    def from_vector(cls, vec, nodes: int, d: int) -> "TransferPlan":
        blk = np.asarray(vec, dtype=float).reshape(nodes, block_size(d))
        a = np.zeros((nodes, d, d))
        for col, (i, j) in enumerate(ordered_pairs(d)):
            a[:, i, j] = blk[:, col]
        return cls(a, blk[:, d * (d - 1):].copy())

    @classmethod
    def zeros(cls, nodes: int, d: int) -> "TransferPlan":
        return cls(np.zeros((nodes, d, d)), np.zeros((nodes, d)))

    def validate(self) -> None:
        if np.any(self.a < 0) or np.any(self.dsp < 0):
            raise ValueError("transfer plan entries must be nonnegative")

    def to_records(self, tree: ScenarioTree) -> list[dict]:
        recs = []
        for k, nid in enumerate(tree.ids):
            amounts = {f"{i+1},{j+1}": float(self.a[k, i, j])
                       for (i, j) in ordered_pairs(self.d) if self.a[k, i, j] != 0.0}
            recs.append({"node": nid, "a": amounts, "dsp": self.dsp[k].tolist()})
        return recs

    @classmethod
    def from_records(cls, tree: ScenarioTree, d: int, records) -> "TransferPlan":
        plan = cls.zeros(tree.size, d)
        for rec in records:
            k = tree.index[str(rec["node"])]
            for key, val in rec.get("a", {}).items():
                i, j = (int(s) - 1 for s in key.split(","))
                plan.a[k, i, j] = float(val)
            plan.dsp[k] = np.asarray(rec.get("dsp", np.zeros(d)), dtype=float)
        return plan


def realize(plan: TransferPlan, tree: ScenarioTree, process: BidAskProcess, x):
    """Portfolio process ``v`` at every node (endowment included) and terminal ``X_T`` per leaf."""
    d = process.d
    if plan.a.shape != (tree.size, d, d) or plan.dsp.shape != (tree.size, d):
        raise ValueError("plan is not indexed by the tree nodes")
    x = np.asarray(x, dtype=float)
    blocks = plan.to_vector().reshape(tree.size, block_size(d))
    v = np.zeros((tree.size, d))
    for k in range(tree.size):
        inc = increment_matrix(process.pi[k]) @ blocks[k]
        par = tree.parent_index[k]
        v[k] = (x if par < 0 else v[par]) + inc
    return v, v[list(tree.leaves)]


def increment_in_cone(delta, pi, tol: float | None = None) -> bool:
    """Is ``delta`` a nonnegative combination of the generators of ``-K(pi)``?"""
    tol = get_tolerances().feasibility if tol is None else tol
    pi = np.asarray(pi, dtype=float)
    G = increment_matrix(pi)
    delta = np.asarray(delta, dtype=float)
    lp = LinearProgram(np.zeros(G.shape[1]), G, [EQ] * G.shape[0], delta)
    out = solve_lp(lp)
    return out.optimal and out.primal_residual <= tol


@dataclass
class Skeleton:
    """Polyhedral description of ``{x + R p : p >= 0, x + R p >= 0}`` (boxed by ``M`` if finite)."""

    tree: ScenarioTree
    process: BidAskProcess
    x: np.ndarray
    R: np.ndarray          # (leaves*d, n_plan)
    box: float
    lp: LinearProgram      # zero objective; rows -R p <= x

    @property
    def d(self) -> int:
        return self.process.d

    @property
    def n_plan(self) -> int:
        return self.R.shape[1]

    def terminal(self, p) -> np.ndarray:
        """Terminal positions ``X_T`` as a (leaves, d) array."""
        return (self.x_flat + self.R @ p).reshape(len(self.tree.leaves), self.d)

    @cached_property
    def x_flat(self) -> np.ndarray:
        return np.tile(self.x, len(self.tree.leaves))

    def objective(self, terminal_gradient) -> np.ndarray:
        """Plan-space coefficients of the linear functional ``<g, X_T>``."""
        return self.R.T @ np.asarray(terminal_gradient, dtype=float).ravel()

    def plan(self, p) -> TransferPlan:
        return TransferPlan.from_vector(p, self.tree.size, self.d)

    def unboxed(self) -> "Skeleton":
        if not np.isfinite(self.box):
            return self
        return assemble_constraints(self.tree, self.process, self.x, box=False)


def terminal_map(tree: ScenarioTree, process: BidAskProcess) -> np.ndarray:
    """Matrix ``R`` with ``X_T(leaf) = x + R p`` stacked leaf by leaf."""
    d = process.d
    bs = block_size(d)
    L = len(tree.leaves)
    R = np.zeros((L * d, tree.size * bs))
    incs = [increment_matrix(process.pi[k]) for k in range(tree.size)]
    for pos, leaf in enumerate(tree.leaves):
        for m in tree.ancestors[leaf]:
            R[pos * d:(pos + 1) * d, m * bs:(m + 1) * bs] = incs[m]
    return R


def box_bound(tree: ScenarioTree, process: BidAskProcess, x) -> float:
    """Cap on every transfer: ``max(sum x, 1) * (max pi)^(T+1) * d``.

    The ``max(., 1)`` keeps the box nondegenerate for zero endowment, where the
    attainable set is a cone and any positive scale serves.
    """
    scale = max(float(np.sum(x)), 1.0)
    return scale * float(np.max(process.pi)) ** (tree.T + 1) * process.d


def assemble_constraints(tree: ScenarioTree, process: BidAskProcess, x, box: bool = True) -> Skeleton:
    x = np.asarray(x, dtype=float)
    if x.shape != (process.d,):
        raise ValueError(f"endowment has shape {x.shape}, expected ({process.d},)")
    if np.any(x < 0):
        raise ValueError("endowment must be nonnegative")
    R = terminal_map(tree, process)
    M = box_bound(tree, process, x) if box else np.inf
    n = R.shape[1]
    x_flat = np.tile(x, len(tree.leaves))
    lp = LinearProgram(np.zeros(n), -R, [LE] * R.shape[0], x_flat, np.zeros(n), np.full(n, M))
    if box:
        log.debug("attainable skeleton: %d plan variables, %d rows, box bound M=%.6g",
                  n, R.shape[0], M)
    return Skeleton(tree, process, x, R, M, lp)
