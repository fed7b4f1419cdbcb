"""Finite filtered probability spaces encoded as rooted scenario trees.

Nodes at depth ``t`` are the atoms of ``F_t``; the root carries the trivial
sigma-algebra.  Branch probabilities are stored per edge (transition from the
parent), node probabilities are the products along the root path.
"""
from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .config import get_tolerances


@dataclass(frozen=True)
class Node:
    id: str
    t: int
    parent: str | None = None
    p: float | None = None


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, msg: str) -> None:
        self.violations.append(msg)

    def extend(self, other: "ValidationReport", prefix: str = "") -> None:
        self.violations.extend(prefix + v for v in other.violations)

    def __bool__(self) -> bool:
        return self.ok


class TreeError(ValueError):
    pass


class ScenarioTree:
    """Immutable scenario tree.

    The constructor accepts structurally broken input so that
    :func:`validate_tree` can report on it; every other operation assumes a
    valid tree.
    """

    def __init__(self, T: int, nodes: Sequence[Node]):
        self.T = int(T)
        self.nodes: tuple[Node, ...] = tuple(nodes)
        self._by_id = {n.id: n for n in self.nodes}

    def __repr__(self) -> str:
        return f"ScenarioTree(T={self.T}, nodes={len(self.nodes)}, leaves={len(self.leaves)})"

    def __eq__(self, other) -> bool:
        return isinstance(other, ScenarioTree) and self.T == other.T and self.nodes == other.nodes

    def __hash__(self) -> int:
        return hash((self.T, self.nodes))

    # structural indexes (BFS order, root first)

    @cached_property
    def _children_ids(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            if n.parent is not None and n.parent in out:
                out[n.parent].append(n.id)
        return out

    @cached_property
    def root(self) -> str:
        roots = [n.id for n in self.nodes if n.parent is None]
        if len(roots) != 1:
            raise TreeError(f"expected exactly one root, found {len(roots)}")
        return roots[0]

    @cached_property
    def ids(self) -> tuple[str, ...]:
        order = [self.root]
        k = 0
        while k < len(order):
            order.extend(self._children_ids[order[k]])
            k += 1
        return tuple(order)

    @cached_property
    def index(self) -> dict[str, int]:
        return {nid: k for k, nid in enumerate(self.ids)}

    @property
    def size(self) -> int:
        return len(self.ids)

    @cached_property
    def parent_index(self) -> np.ndarray:
        idx = self.index
        return np.array([-1 if self._by_id[n].parent is None else idx[self._by_id[n].parent]
                         for n in self.ids], dtype=int)

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([self._by_id[n].t for n in self.ids], dtype=int)

    @cached_property
    def transition(self) -> np.ndarray:
        return np.array([1.0 if self._by_id[n].parent is None else float(self._by_id[n].p)
                         for n in self.ids])

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        idx = self.index
        return tuple(tuple(idx[c] for c in self._children_ids[n]) for n in self.ids)

    @cached_property
    def leaves(self) -> tuple[int, ...]:
        return tuple(k for k, ch in enumerate(self.children) if not ch)

    @cached_property
    def leaf_ids(self) -> tuple[str, ...]:
        return tuple(self.ids[k] for k in self.leaves)

    @cached_property
    def probabilities(self) -> np.ndarray:
        """Unconditional node probabilities, BFS order."""
        prob = np.empty(self.size)
        for k, par in enumerate(self.parent_index):
            prob[k] = self.transition[k] if par < 0 else prob[par] * self.transition[k]
        return prob

    @cached_property
    def leaf_probabilities(self) -> np.ndarray:
        return self.probabilities[list(self.leaves)]

    @cached_property
    def ancestors(self) -> tuple[tuple[int, ...], ...]:
        """Root path of every node, root first and the node itself last."""
        out = []
        for k in range(self.size):
            path = [k]
            while self.parent_index[path[-1]] >= 0:
                path.append(int(self.parent_index[path[-1]]))
            out.append(tuple(reversed(path)))
        return tuple(out)

    @cached_property
    def descendant_leaves(self) -> tuple[tuple[int, ...], ...]:
        """Positions (into ``leaves``) of the leaves below each node."""
        below: list[list[int]] = [[] for _ in range(self.size)]
        for pos, leaf in enumerate(self.leaves):
            for a in self.ancestors[leaf]:
                below[a].append(pos)
        return tuple(tuple(b) for b in below)

    def nodes_at(self, t: int) -> tuple[int, ...]:
        return tuple(int(k) for k in np.flatnonzero(self.times == t))

    # serialization

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "nodes": [{"id": n.id, "t": n.t, "parent": n.parent, "p": n.p} for n in self.nodes],
        }

    @classmethod
    def from_dict(cls, data: Mapping, validate: bool = True) -> "ScenarioTree":
        nodes = [Node(str(n["id"]), int(n["t"]),
                      None if n.get("parent") is None else str(n["parent"]),
                      None if n.get("p") is None else float(n["p"]))
                 for n in data["nodes"]]
        tree = cls(int(data["T"]), nodes)
        if validate:
            report = validate_tree(tree)
            if not report.ok:
                raise TreeError("invalid scenario tree: " + "; ".join(report.violations))
        return tree


def validate_tree(tree: ScenarioTree) -> ValidationReport:
    """Check the structural and probabilistic invariants; never raises."""
    tol = get_tolerances().probability
    rep = ValidationReport()
    if tree.T < 1:
        rep.add(f"horizon T={tree.T} must be >= 1")
    seen: set[str] = set()
    for n in tree.nodes:
        if n.id in seen:
            rep.add(f"duplicate node id {n.id!r}")
        seen.add(n.id)
    roots = [n for n in tree.nodes if n.parent is None]
    if len(roots) != 1:
        rep.add(f"expected exactly one root, found {len(roots)}")
    for r in roots:
        if r.t != 0:
            rep.add(f"root {r.id!r} has time {r.t}, expected 0")
        if r.p is not None:
            rep.add(f"root {r.id!r} must have p null")
    by_id = tree._by_id
    for n in tree.nodes:
        if n.parent is None:
            continue
        par = by_id.get(n.parent)
        if par is None:
            rep.add(f"node {n.id!r}: unknown parent {n.parent!r}")
            continue
        if n.t != par.t + 1:
            rep.add(f"node {n.id!r}: time gap (t={n.t} under parent {par.id!r} with t={par.t})")
        if n.p is None or not np.isfinite(n.p) or n.p <= 0:
            rep.add(f"node {n.id!r}: transition probability {n.p} must be > 0")
    for nid, kids in tree._children_ids.items():
        node = by_id[nid]
        if not kids:
            if node.t != tree.T:
                rep.add(f"leaf {nid!r} has time {node.t}, expected T={tree.T}")
            continue
        probs = [by_id[c].p for c in kids]
        if all(p is not None for p in probs):
            total = float(sum(probs))
            if abs(total - 1.0) > tol:
                rep.add(f"probabilities sum to {total:.12g} != 1 at node {nid!r}")
    # reachability from the root (catches cycles / orphans)
    if len(roots) == 1 and not any("unknown parent" in v for v in rep.violations):
        reached = set()
        stack = [roots[0].id]
        while stack:
            cur = stack.pop()
            if cur in reached:
                continue
            reached.add(cur)
            stack.extend(tree._children_ids[cur])
        missing = [n.id for n in tree.nodes if n.id not in reached]
        if missing:
            rep.add(f"nodes unreachable from root: {missing}")
    return rep


def node_probability(tree: ScenarioTree, node: str) -> float:
    if node not in tree.index:
        raise KeyError(f"unknown node id {node!r}")
    return float(tree.probabilities[tree.index[node]])


def _leaf_array(tree: ScenarioTree, terminal) -> np.ndarray:
    if isinstance(terminal, Mapping):
        missing = [lid for lid in tree.leaf_ids if lid not in terminal]
        if missing:
            raise KeyError(f"missing leaf value(s) for {missing}")
        return np.array([terminal[lid] for lid in tree.leaf_ids], dtype=float)
    arr = np.asarray(terminal, dtype=float)
    if arr.shape[0] != len(tree.leaves):
        raise ValueError(f"expected {len(tree.leaves)} leaf values, got {arr.shape[0]}")
    return arr


def backward_expectation(tree: ScenarioTree, terminal) -> np.ndarray:
    """``E[terminal | F_t]`` at every node, by one-step averaging from the leaves.

    Returns an array indexed like ``tree.ids``; trailing dimensions of
    ``terminal`` (e.g. one column per asset) are kept.
    """
    leaf_vals = _leaf_array(tree, terminal)
    out = np.zeros((tree.size,) + leaf_vals.shape[1:])
    out[list(tree.leaves)] = leaf_vals
    for k in reversed(range(tree.size)):
        kids = tree.children[k]
        if kids:
            acc = np.zeros(leaf_vals.shape[1:])
            for c in kids:
                acc = acc + tree.transition[c] * out[c]
            out[k] = acc
    return out


def conditional_expectation(tree: ScenarioTree, terminal, t: int) -> dict[str, float | np.ndarray]:
    """Values of ``E[terminal | F_t]`` at the time-``t`` nodes, keyed by node id."""
    if not 0 <= t <= tree.T:
        raise ValueError(f"t={t} outside [0, {tree.T}]")
    full = backward_expectation(tree, terminal)
    return {tree.ids[k]: (full[k] if full.ndim > 1 else float(full[k])) for k in tree.nodes_at(t)}


def generate_random_tree(seed: int, branching: int, T: int, floor: float = 0.05) -> ScenarioTree:
    """Random tree with exactly ``branching`` children per interior node.

    Branch probabilities are uniform draws, normalized and then floored at
    ``floor`` (mixed back in so they still sum to one).
    """
    if branching < 1 or T < 1:
        raise ValueError("branching and T must be >= 1")
    if floor * branching >= 1.0 and branching > 1:
        raise ValueError(f"probability floor {floor} infeasible for branching {branching}")
    rng = np.random.default_rng(seed)
    nodes = [Node("0", 0, None, None)]
    frontier = ["0"]
    for t in range(1, T + 1):
        nxt = []
        for par in frontier:
            if branching == 1:
                probs = np.ones(1)
            else:
                w = rng.uniform(0.0, 1.0, branching) + 1e-12
                probs = floor + (1.0 - floor * branching) * w / w.sum()
                probs[-1] = 1.0 - probs[:-1].sum()
            for c in range(branching):
                cid = f"{par}.{c}"
                nodes.append(Node(cid, t, par, float(probs[c])))
                nxt.append(cid)
        frontier = nxt
    return ScenarioTree(T, nodes)


def deterministic_tree(T: int = 1) -> ScenarioTree:
    return generate_random_tree(0, 1, T)


def two_state_tree(p_up: float = 0.5) -> ScenarioTree:
    """One-period tree with leaves ``u`` and ``d``."""
    return ScenarioTree(1, [Node("0", 0), Node("u", 1, "0", p_up), Node("d", 1, "0", 1.0 - p_up)])
