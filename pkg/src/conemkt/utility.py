"""Component-wise utilities: concave, strictly increasing, bounded above by 1, ``U(0) = 0``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .scenario_tree import ScenarioTree

FAMILIES = ("exp", "hyp", "powasym")


@dataclass(frozen=True)
class AssetUtility:
    family: str
    param: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown utility family {self.family!r}; expected one of {FAMILIES}")
        if not self.param > 0:
            raise ValueError(f"utility parameter must be positive, got {self.param}")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        a = self.param
        if self.family == "exp":
            return -np.expm1(-a * x)
        if self.family == "hyp":
            return x / (a + x)
        return -np.expm1(-a * np.log1p(x))

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        a = self.param
        if self.family == "exp":
            return a * np.exp(-a * x)
        if self.family == "hyp":
            return a / (a + x) ** 2
        return a * (1.0 + x) ** (-a - 1.0)

    def second(self, x):
        x = np.asarray(x, dtype=float)
        a = self.param
        if self.family == "exp":
            return -a * a * np.exp(-a * x)
        if self.family == "hyp":
            return -2.0 * a / (a + x) ** 3
        return -a * (a + 1.0) * (1.0 + x) ** (-a - 2.0)


@dataclass(frozen=True)
class UtilitySpec:
    assets: tuple[AssetUtility, ...]

    @property
    def d(self) -> int:
        return len(self.assets)

    def _columns(self, X, fn: str) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty_like(X)
        for i, u in enumerate(self.assets):
            out[..., i] = getattr(u, fn)(X[..., i])
        return out

    def value(self, X) -> np.ndarray:
        return self._columns(X, "value")

    def deriv(self, X) -> np.ndarray:
        return self._columns(X, "deriv")

    def second(self, X) -> np.ndarray:
        return self._columns(X, "second")

    def to_dict(self) -> dict:
        return {"assets": [{"family": u.family, "param": u.param} for u in self.assets]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "UtilitySpec":
        return cls(tuple(AssetUtility(a["family"], float(a["param"])) for a in data["assets"]))

    @classmethod
    def exponential(cls, alphas: Sequence[float]) -> "UtilitySpec":
        return cls(tuple(AssetUtility("exp", float(a)) for a in alphas))


def eval_utility(spec: UtilitySpec, i: int, x: float) -> tuple[float, float]:
    """Value and derivative of the ``i``-th utility at ``x >= 0``."""
    if x < 0:
        raise ValueError(f"utility evaluated at negative position {x}")
    u = spec.assets[i]
    return float(u.value(x)), float(u.deriv(x))


def expected_vector_utility(tree: ScenarioTree, X_T, spec: UtilitySpec) -> np.ndarray:
    """``(E U^1(X^1), ..., E U^d(X^d))`` for terminal positions given per leaf."""
    X = np.asarray(X_T, dtype=float)
    if np.any(X < 0):
        raise ValueError("terminal positions must be nonnegative")
    return tree.leaf_probabilities @ spec.value(X)
