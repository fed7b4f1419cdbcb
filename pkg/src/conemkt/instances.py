"""Instance bundles, their JSON form, and seeded instance construction.

Generated bid-ask processes are built around a positive "shadow" price
process ``Z``: ``pi[i, j] = Z_j / Z_i * (1 + s_ij)`` with spreads ``s_ij >= 0``,
followed by triangle closure.  Entries never fall below the frictionless
ratios ``Z_j / Z_i`` under closure, so ``Z`` stays consistent.  The kinds are

``roundtrip``  Z a strictly positive martingale, one spread in [0.05, 0.5]
               per asset pair used in both directions: Z is strictly
               consistent, NA^r holds.
``boundary``   as roundtrip, but assets 1 and 2 trade without spread at the
               root and their price ratio at the root's children sits exactly
               on the lower end of the spread: NA holds, NA^r fails.
``arbitrage``  as boundary, but the ratio at the children is strictly above
               the root price: buying asset 2 at the root is an arbitrage.
``free``       unstructured random prices and spreads (no label).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .market_cones import BidAskProcess, frictionless, triangle_closure
from .scenario_tree import ScenarioTree, ValidationReport, generate_random_tree, two_state_tree, validate_tree
from .utility import AssetUtility, FAMILIES, UtilitySpec

KINDS = ("free", "arbitrage", "boundary", "roundtrip")


@dataclass
class InstanceBundle:
    tree: ScenarioTree
    process: BidAskProcess
    x: np.ndarray
    utility: UtilitySpec
    params: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.process.d

    def validate(self) -> ValidationReport:
        rep = ValidationReport()
        rep.extend(validate_tree(self.tree), "tree: ")
        if not rep.ok:
            return rep
        rep.extend(self.process.validate(), "bid-ask ")
        x = np.asarray(self.x)
        if x.shape != (self.d,):
            rep.add(f"endowment has {x.size} entries, expected d={self.d}")
        elif np.any(x < 0):
            rep.add("endowment must be nonnegative")
        if self.utility.d != self.d:
            rep.add(f"utility spec has {self.utility.d} assets, expected d={self.d}")
        return rep

    def to_dict(self) -> dict:
        return {
            "tree": self.tree.to_dict(),
            "bid_ask": self.process.to_records(),
            "x": np.asarray(self.x, dtype=float).tolist(),
            "utility": self.utility.to_dict(),
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "InstanceBundle":
        tree_data = data.get("tree")
        if tree_data is None and "tree_path" in data:
            path = Path(data["tree_path"])
            if base is not None and not path.is_absolute():
                path = base / path
            tree_data = json.loads(path.read_text())
        tree = ScenarioTree.from_dict(tree_data, validate=False)
        process = BidAskProcess.from_records(tree, data["bid_ask"])
        return cls(tree, process, np.asarray(data["x"], dtype=float),
                   UtilitySpec.from_dict(data["utility"]), dict(data.get("params", {})))

    def digest(self) -> str:
        return digest_of(self.to_dict())

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def digest_of(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def load_instance(path) -> InstanceBundle:
    path = Path(path)
    return InstanceBundle.from_dict(json.loads(path.read_text()), base=path.parent)


# shadow price processes

def random_martingale(tree: ScenarioTree, d: int, rng: np.random.Generator,
                      tied_pair_until: int = -1) -> np.ndarray:
    """Strictly positive martingale built top-down from mean-one multipliers.

    Up to time ``tied_pair_until`` assets 0 and 1 share multipliers, so their
    price ratio stays constant there.
    """
    Z = np.zeros((tree.size, d))
    Z[0] = rng.uniform(0.5, 2.0, d)
    for k in range(tree.size):
        kids = tree.children[k]
        if not kids:
            continue
        p = tree.transition[list(kids)]
        u = rng.uniform(0.5, 1.5, (len(kids), d))
        mult = u / (p @ u)
        if tree.times[k] < tied_pair_until and d >= 2:
            mult[:, 1] = mult[:, 0]
        for c, m in zip(kids, mult):
            Z[c] = Z[k] * m
    return Z


def _spreads(rng, d, low=0.05, high=0.5):
    s = rng.uniform(low, high, (d, d))
    np.fill_diagonal(s, 0.0)
    return s


def _pair_spreads(rng, d, low=0.05, high=0.5):
    """One spread per unordered pair, applied to both directions."""
    s = np.triu(rng.uniform(low, high, (d, d)), 1)
    return s + s.T


def roundtrip_process(tree: ScenarioTree, d: int, rng: np.random.Generator):
    """Spreads around a positive martingale; before closure it sits at each log-midpoint."""
    Z = random_martingale(tree, d, rng)
    pi = np.array([triangle_closure(frictionless(Z[k]) * (1.0 + _pair_spreads(rng, d)))
                   for k in range(tree.size)])
    return BidAskProcess(tree, pi), Z


def _pinned_pair_process(tree, d, rng, shift: bool):
    if d < 2:
        raise ValueError("boundary and arbitrage constructions need d >= 2")
    Z = random_martingale(tree, d, rng, tied_pair_until=1)
    if shift:
        for c in tree.children[0]:
            Z[c, 1] *= 1.0 + rng.uniform(0.1, 0.5)
    pis = []
    for k in range(tree.size):
        s = _spreads(rng, d)
        if k == 0:
            s[0, 1] = s[1, 0] = 0.0
        elif tree.parent_index[k] == 0:
            s[1, 0] = 0.0          # ratio Z_1 / Z_0 on the lower end of the spread
        pis.append(triangle_closure(frictionless(Z[k]) * (1.0 + s)))
    return BidAskProcess(tree, np.array(pis)), Z


def boundary_process(tree: ScenarioTree, d: int, rng: np.random.Generator):
    return _pinned_pair_process(tree, d, rng, shift=False)


def arbitrage_process(tree: ScenarioTree, d: int, rng: np.random.Generator):
    return _pinned_pair_process(tree, d, rng, shift=True)


def free_process(tree: ScenarioTree, d: int, rng: np.random.Generator):
    Z = rng.uniform(0.5, 2.0, (tree.size, d))
    pi = np.array([triangle_closure(frictionless(Z[k]) * (1.0 + _spreads(rng, d, 0.0, 0.3)))
                   for k in range(tree.size)])
    return BidAskProcess(tree, pi), Z


BUILDERS = {
    "roundtrip": roundtrip_process,
    "boundary": boundary_process,
    "arbitrage": arbitrage_process,
    "free": free_process,
}


def random_utility(d: int, rng: np.random.Generator, family: str | None = None) -> UtilitySpec:
    fams = [family] * d if family else list(rng.choice(FAMILIES, size=d))
    return UtilitySpec(tuple(AssetUtility(str(f), float(np.round(rng.uniform(0.5, 2.0), 6)))
                             for f in fams))


def generate_instance(seed: int, kind: str, d: int = 2, T: int = 1, branching: int = 2,
                      family: str | None = None, x=None) -> InstanceBundle:
    """Deterministic instance of the requested kind."""
    if kind not in BUILDERS:
        raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")
    if d < 1 or T < 1 or branching < 1:
        raise ValueError("d, T and branching must be >= 1")
    rng = np.random.default_rng([seed, KINDS.index(kind), d, T, branching])
    tree = generate_random_tree(int(rng.integers(2**31)), branching, T)
    process, _ = BUILDERS[kind](tree, d, rng)
    spec = random_utility(d, rng, family)
    x = np.ones(d) if x is None else np.asarray(x, dtype=float)
    params = {"seed": seed, "kind": kind, "d": d, "T": T, "branching": branching}
    return InstanceBundle(tree, process, x, spec, params)


# small hand-built fixtures

def two_state_frictionless(s_up: float, s_down: float, s0: float = 1.0, p_up: float = 0.5):
    """Two assets, asset 1 worth 1, asset 2 worth ``s0`` then ``s_up``/``s_down``; no spreads."""
    tree = two_state_tree(p_up)
    prices = {"0": s0, "u": s_up, "d": s_down}
    pi = np.array([frictionless([1.0, prices[n]]) for n in tree.ids])
    return tree, BidAskProcess(tree, pi)


def two_state_boundary():
    """Root frictionless at 1; leaf ``u`` has bid 1 / ask 2, leaf ``d`` frictionless at 1.

    The only consistent price ratio at ``u`` is the bid, so NA holds while
    NA^r fails.
    """
    tree = two_state_tree(0.5)
    pis = {"0": frictionless([1.0, 1.0]),
           "u": np.array([[1.0, 2.0], [1.0, 1.0]]),
           "d": frictionless([1.0, 1.0])}
    return tree, BidAskProcess(tree, np.array([pis[n] for n in tree.ids]))
