"""Central tolerance record.

Every solver and verifier reads its thresholds from :func:`get_tolerances`.
The environment variable ``CONEMKT_TOL`` overrides individual fields, either
as a JSON object (``{"feasibility": 1e-9}``) or as ``key=value`` pairs
separated by commas.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace


@dataclass(frozen=True)
class Tolerances:
    feasibility: float = 1e-8      # LP primal residual
    pivot: float = 1e-9            # smallest admissible pivot / reduced cost
    duality: float = 1e-7          # weak duality and complementary slackness
    probability: float = 1e-12     # transition probabilities sum to one
    triangle: float = 1e-10        # relative slack in pi_ij <= pi_ik pi_kj
    na_value: float = 1e-7         # NA holds iff max terminal mass <= this
    strict_margin: float = 1e-7    # strict consistency needs margin > this
    membership: float = 1e-6       # polar slack / martingale residual in reports
    nonzero: float = 1e-6          # sum_i Z^i(n) >= this for consistent Z
    fw_gap: float = 1e-6           # Frank-Wolfe stopping gap
    pareto: float = 1e-5           # improvement below this counts as maximal


ENV_VAR = "CONEMKT_TOL"


def _parse_override(raw: str) -> dict[str, float]:
    raw = raw.strip()
    if not raw:
        return {}
    if raw.startswith("{"):
        data = json.loads(raw)
    else:
        data = {}
        for item in raw.split(","):
            key, _, value = item.partition("=")
            data[key.strip()] = value.strip()
    known = {f.name for f in fields(Tolerances)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{ENV_VAR}: unknown tolerance field(s) {sorted(unknown)}")
    return {k: float(v) for k, v in data.items()}


def get_tolerances() -> Tolerances:
    """Return the default tolerances with any ``CONEMKT_TOL`` overrides applied."""
    return replace(Tolerances(), **_parse_override(os.environ.get(ENV_VAR, "")))
