"""Bid-ask matrices, their solvency cones and polar cones.

``pi[i, j]`` is the number of units of asset ``i`` paid for one unit of asset
``j``.  The cone ``-K(pi)`` of portfolio increments reachable from zero is
generated by the disposals ``-e_i`` and the exchanges ``-pi[i, j] e_i + e_j``;
its polar ``K*(pi)`` consists of the price vectors ``w >= 0`` with
``w_j <= pi[i, j] w_i``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import get_tolerances
from .scenario_tree import ScenarioTree, ValidationReport

DEGENERATE_TOL = 1e-10


class BidAskError(ValueError):
    pass


def _square(pi) -> np.ndarray:
    arr = np.asarray(pi, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise BidAskError(f"bid-ask matrix must be square, got shape {arr.shape}")
    return arr


def validate_bid_ask(pi) -> ValidationReport:
    """Check unit diagonal, positivity and the triangle axiom (1-based indices in messages)."""
    arr = _square(pi)
    tol = get_tolerances().triangle
    d = arr.shape[0]
    rep = ValidationReport()
    for i in range(d):
        if abs(arr[i, i] - 1.0) > tol:
            rep.add(f"diagonal pi[{i+1},{i+1}]={arr[i, i]:g} != 1")
    for i in range(d):
        for j in range(d):
            if not arr[i, j] > 0:
                rep.add(f"pi[{i+1},{j+1}]={arr[i, j]:g} not positive")
    if not rep.ok:
        return rep
    for i in range(d):
        for j in range(d):
            for k in range(d):
                if len({i, j, k}) < 3:
                    continue
                bound = arr[i, k] * arr[k, j]
                if arr[i, j] > bound * (1.0 + tol):
                    rep.add(f"triangle violation at (i,j,k)=({i+1},{j+1},{k+1}): "
                            f"pi[{i+1},{j+1}]={arr[i, j]:g} > {bound:g}")
    return rep


def triangle_closure(pi) -> np.ndarray:
    """Largest matrix below ``pi`` satisfying the triangle axiom.

    Floyd-Warshall in log space: ``pi[i,j] <- min(pi[i,j], pi[i,k] pi[k,j])``.
    Raises :class:`BidAskError` when the closure creates a value-generating
    exchange cycle (``pi[i,j] pi[j,i] < 1``).
    """
    arr = _square(pi)
    if np.any(~(arr > 0)):
        raise BidAskError("bid-ask entries must be strictly positive")
    d = arr.shape[0]
    if not np.allclose(np.diag(arr), 1.0, rtol=0, atol=get_tolerances().triangle):
        raise BidAskError("bid-ask matrix must have unit diagonal")
    logp = np.log(arr)
    np.fill_diagonal(logp, 0.0)
    for k in range(d):
        logp = np.minimum(logp, logp[:, [k]] + logp[[k], :])
    cyc = logp + logp.T
    if np.any(cyc < np.log1p(-DEGENERATE_TOL)):
        i, j = np.unravel_index(np.argmin(cyc), cyc.shape)
        raise BidAskError(f"inconsistent spreads: closed cycle pi[{i+1},{j+1}]*pi[{j+1},{i+1}]="
                          f"{np.exp(cyc[i, j]):.6g} < 1")
    out = np.exp(logp)
    np.fill_diagonal(out, 1.0)
    return np.minimum(out, arr)


@dataclass(frozen=True)
class ConeGenerators:
    disposals: np.ndarray          # (d, d) rows -e_i
    exchanges: np.ndarray          # (d(d-1), d) rows -pi_ij e_i + e_j
    pairs: tuple[tuple[int, int], ...]

    @property
    def all(self) -> np.ndarray:
        return np.vstack([self.disposals, self.exchanges]) if len(self.pairs) else self.disposals


def ordered_pairs(d: int) -> tuple[tuple[int, int], ...]:
    return tuple((i, j) for i in range(d) for j in range(d) if i != j)


def cone_generators(pi) -> ConeGenerators:
    arr = _square(pi)
    d = arr.shape[0]
    pairs = ordered_pairs(d)
    ex = np.zeros((len(pairs), d))
    for r, (i, j) in enumerate(pairs):
        ex[r, i] = -arr[i, j]
        ex[r, j] = 1.0
    return ConeGenerators(-np.eye(d), ex, pairs)


def _check_dim(arr: np.ndarray, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (arr.shape[0],):
        raise ValueError(f"vector of shape {w.shape} does not match dimension {arr.shape[0]}")
    return w


def polar_slack(pi, w) -> float:
    """``max_g <g, w>`` over the generators; ``w`` is in the polar iff this is <= 0."""
    arr = _square(pi)
    w = _check_dim(arr, w)
    # w_j - pi_ij w_i for every ordered pair, and -w_i for the disposals
    ex = w[None, :] - arr * w[:, None]
    np.fill_diagonal(ex, -np.inf)
    return float(max(np.max(-w), np.max(ex) if arr.shape[0] > 1 else -np.inf))


def polar_membership(pi, w, tol: float = 0.0) -> bool:
    """Closed form: ``w_i >= -tol`` and ``w_j - pi_ij w_i <= tol`` for all ``i != j``."""
    return polar_slack(pi, w) <= tol


def degenerate_pairs(pi) -> np.ndarray:
    """Boolean (d, d) mask of frictionless pairs, ``pi_ij pi_ji == 1``."""
    arr = _square(pi)
    prod = arr * arr.T
    mask = prod <= 1.0 + DEGENERATE_TOL
    np.fill_diagonal(mask, False)
    return mask


def strict_margin(pi, w) -> float:
    """Largest ``m`` for which :func:`strict_polar_membership` holds, ``-inf`` if none.

    Frictionless pairs must satisfy ``w_j = pi_ij w_i`` (relative tolerance
    1e-10); nondegenerate pairs contribute ``(pi_ij w_i - w_j) / w_i``.
    """
    arr = _square(pi)
    w = _check_dim(arr, w)
    d = arr.shape[0]
    m = float(np.min(w))
    if m <= 0:
        return m
    degen = degenerate_pairs(arr)
    for i in range(d):
        for j in range(d):
            if i == j:
                continue
            gap = arr[i, j] * w[i] - w[j]
            if degen[i, j]:
                if abs(gap) > DEGENERATE_TOL * max(w[i], w[j]):
                    return -np.inf
            else:
                m = min(m, gap / w[i])
    return m


def strict_polar_membership(pi, w, margin: float) -> bool:
    return strict_margin(pi, w) >= margin


@dataclass(frozen=True)
class BidAskProcess:
    """A bid-ask matrix per tree node; ``pi`` has shape (nodes, d, d) in ``tree.ids`` order."""

    tree: ScenarioTree
    pi: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pi, dtype=float)
        if arr.ndim != 3 or arr.shape[0] != self.tree.size or arr.shape[1] != arr.shape[2]:
            raise BidAskError(f"process array shape {arr.shape} does not match tree of "
                              f"{self.tree.size} nodes")
        object.__setattr__(self, "pi", arr)

    @property
    def d(self) -> int:
        return self.pi.shape[1]

    def at(self, node: str) -> np.ndarray:
        return self.pi[self.tree.index[node]]

    def validate(self) -> ValidationReport:
        rep = ValidationReport()
        for k, nid in enumerate(self.tree.ids):
            rep.extend(validate_bid_ask(self.pi[k]), prefix=f"node {nid!r}: ")
        return rep

    def to_records(self) -> list[dict]:
        return [{"node": nid, "pi": self.pi[k].tolist()} for k, nid in enumerate(self.tree.ids)]

    @classmethod
    def from_records(cls, tree: ScenarioTree, records) -> "BidAskProcess":
        by_node = {str(r["node"]): r["pi"] for r in records}
        missing = [nid for nid in tree.ids if nid not in by_node]
        if missing:
            raise BidAskError(f"bid-ask matrix missing for node(s) {missing}")
        return cls(tree, np.array([by_node[nid] for nid in tree.ids], dtype=float))

    @classmethod
    def constant(cls, tree: ScenarioTree, pi) -> "BidAskProcess":
        arr = _square(pi)
        return cls(tree, np.broadcast_to(arr, (tree.size,) + arr.shape).copy())


def frictionless(prices) -> np.ndarray:
    """Bid-ask matrix of a market without spreads: ``pi_ij = S_j / S_i``."""
    s = np.asarray(prices, dtype=float)
    return s[None, :] / s[:, None]


class ShrinkError(RuntimeError):
    pass


def _shrink_matrix(pi: np.ndarray, theta: float) -> np.ndarray:
    logp = np.log(pi)
    mid = 0.5 * (logp - logp.T)
    out = np.exp((1.0 - theta) * logp + theta * mid)
    degen = degenerate_pairs(pi)
    out[degen] = pi[degen]
    np.fill_diagonal(out, 1.0)
    return out


def _strictly_inside(orig: np.ndarray, new: np.ndarray) -> list[tuple[int, int]]:
    bad = []
    degen = degenerate_pairs(orig)
    d = orig.shape[0]
    for i in range(d):
        for j in range(d):
            if i == j:
                continue
            if degen[i, j]:
                if not np.isclose(new[i, j], orig[i, j], rtol=DEGENERATE_TOL, atol=0):
                    bad.append((i, j))
            elif not new[i, j] < orig[i, j] * (1.0 - 1e-12):
                bad.append((i, j))
    return bad


def shrink_spreads(process: BidAskProcess, theta: float, max_retries: int = 20) -> BidAskProcess:
    """Bid-ask process with every nondegenerate spread strictly inside the original.

    Each log-spread interval is moved toward its midpoint by the fraction
    ``theta``; the triangle axiom is then restored by closure.  If the closure
    pushes a pair outside the original interval (or produces an inconsistent
    cycle) that node is retried with ``theta`` halved.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    out = np.empty_like(process.pi)
    for k, nid in enumerate(process.tree.ids):
        orig = process.pi[k]
        th = theta
        for _ in range(max_retries + 1):
            try:
                cand = triangle_closure(_shrink_matrix(orig, th))
            except BidAskError:
                bad = [("cycle",)]
            else:
                bad = _strictly_inside(orig, cand)
            if not bad:
                out[k] = cand
                break
            th *= 0.5
        else:
            raise ShrinkError(f"shrink_spreads: node {nid!r} pair(s) {bad} not strictly inside "
                              f"after {max_retries} halvings of theta")
    return BidAskProcess(process.tree, out)
