"""Equivalence experiment: robust no-arbitrage versus solvability under tighter spreads.

For each seed an instance is generated (half round-trip, a quarter each of
the arbitrage and boundary constructions).  Two verdicts are compared:

* the LP verdict of robust no-arbitrage, and
* the constructive verdict: the scalarized problem under spreads shrunk by
  ``theta`` is solved to a small Frank-Wolfe gap and its solution passes
  the Pareto check.

Records go to a fresh run directory, one JSON file per seed written
atomically.  Existing runs are never overwritten.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .arbitrage import check_na, check_nar
from .config import get_tolerances
from .instances import InstanceBundle, generate_instance
from .lp_core import LpError
from .market_cones import ShrinkError, shrink_spreads
from .pareto import SolverError, is_pareto_maximal, solve_scalarized
from .pricing import PreconditionError, strict_pipeline

log = logging.getLogger(__name__)

STRATA = ("roundtrip", "roundtrip", "arbitrage", "boundary")
LIMITS = {"d": 4, "T": 3, "branching": 3}
DEFAULT_DELTA = 1e-3


def kind_for_seed(seed: int) -> str:
    return STRATA[seed % len(STRATA)]


def check_limits(d: int, T: int, branching: int) -> None:
    for name, val in (("d", d), ("T", T), ("branching", branching)):
        if not 1 <= val <= LIMITS[name]:
            raise ValueError(f"{name}={val} outside 1..{LIMITS[name]}")
    if d < 2:
        raise ValueError("the stratified constructions need d >= 2")


@dataclass
class ExperimentRecord:
    seed: int
    kind: str
    d: int
    T: int
    branching: int
    theta: float
    instance_digest: str
    na: bool | str
    nar: bool | str
    nar_margin: float | None
    constructive: bool | str
    agree: bool
    solutions: list[dict] = field(default_factory=list)
    pareto: dict = field(default_factory=dict)
    pipeline: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)


def constructive_verdict(inst: InstanceBundle, theta: float, fw_tol: float, pareto_tol: float):
    """(verdict, solution summary, Pareto summary, error string or None)."""
    tree, x, spec = inst.tree, inst.x, inst.utility
    try:
        shrunk = shrink_spreads(inst.process, theta)
    except ShrinkError as exc:
        return False, {}, {}, f"shrink: {exc}"
    lam = np.ones(inst.d)
    try:
        sol = solve_scalarized(tree, shrunk, x, spec, lam, tol=fw_tol)
    except (SolverError, LpError) as exc:
        return False, {}, {}, f"solve: {exc}"
    summ = {"weights": sol.weights.tolist(), "utility": sol.utility.tolist(), "gap": sol.gap,
            "iterations": sol.iterations, "converged": sol.converged}
    if not (sol.converged and sol.gap <= fw_tol):
        return False, summ, {}, f"solve: gap {sol.gap:.3e} above {fw_tol:.1e}"
    try:
        chk = is_pareto_maximal(tree, shrunk, x, spec, sol.terminal, tol=pareto_tol)
    except (SolverError, LpError) as exc:
        return False, summ, {}, f"pareto: {exc}"
    par = {"maximal": chk.maximal, "bound": chk.bound, "improvement": chk.improvement,
           "iterations": chk.iterations}
    return bool(chk.maximal), summ, par, None if chk.maximal else "pareto: candidate dominated"


def run_seed(seed: int, d: int, T: int, branching: int, theta: float,
             fw_tol: float | None = None, pareto_tol: float | None = None,
             delta: float = DEFAULT_DELTA) -> tuple[ExperimentRecord, InstanceBundle]:
    tol = get_tolerances()
    fw_tol = tol.fw_gap if fw_tol is None else fw_tol
    pareto_tol = tol.pareto if pareto_tol is None else pareto_tol
    kind = kind_for_seed(seed)
    inst = generate_instance(seed, kind, d, T, branching)
    inst.params.update({"theta": theta})
    errors, timings = {}, {}

    t0 = time.perf_counter()
    try:
        na = check_na(inst.tree, inst.process).holds
    except LpError as exc:
        na, errors["na"] = f"error: {exc}", str(exc)
    t1 = time.perf_counter()
    try:
        res = check_nar(inst.tree, inst.process)
        nar, margin = res.holds, float(res.margin)
    except LpError as exc:
        nar, margin, errors["nar"] = f"error: {exc}", None, str(exc)
    t2 = time.perf_counter()
    cons, summ, par, err = constructive_verdict(inst, theta, fw_tol, pareto_tol)
    if err:
        errors["constructive"] = err
    t3 = time.perf_counter()
    timings.update(na=t1 - t0, nar=t2 - t1, constructive=t3 - t2)

    agree = isinstance(nar, bool) and nar == cons
    pipe = {}
    if agree and nar:
        try:
            out = strict_pipeline(inst.tree, inst.process, theta, inst.x, inst.utility,
                                  np.ones(d), delta)
            pipe = {"status": out.status, **out.report.summary()}
        except (PreconditionError, SolverError, LpError, ShrinkError) as exc:
            pipe = {"status": "error"}
            errors["pipeline"] = str(exc)
        timings["pipeline"] = time.perf_counter() - t3
    rec = ExperimentRecord(seed, kind, d, T, branching, theta, inst.digest(), na, nar, margin,
                           cons, agree, [summ] if summ else [], par, pipe, errors, timings)
    return rec, inst


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def new_run_dir(root) -> Path:
    """Next unused ``run-NNNN`` directory under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    k = 1
    while True:
        path = root / f"run-{k:04d}"
        try:
            path.mkdir()
            return path
        except FileExistsError:
            k += 1


def aggregate(records: list[ExperimentRecord]) -> dict:
    records = sorted(records, key=lambda r: r.seed)
    by_kind = {}
    for r in records:
        row = by_kind.setdefault(r.kind, {"n": 0, "na": 0, "nar": 0, "constructive": 0,
                                          "disagree": 0, "strict_ok": 0, "floor_unmet": 0})
        row["n"] += 1
        row["na"] += r.na is True
        row["nar"] += r.nar is True
        row["constructive"] += r.constructive is True
        row["disagree"] += not r.agree
        row["strict_ok"] += r.pipeline.get("status") == "ok"
        row["floor_unmet"] += r.pipeline.get("status") == "precondition-unmet"
    gap_exhibits = [r.seed for r in records if r.na is True and r.nar is False]
    return {
        "n": len(records),
        "disagreements": [r.seed for r in records if not r.agree],
        "by_kind": by_kind,
        "na_without_nar": gap_exhibits,
        "version": __version__,
    }


def summary_table(agg: dict) -> str:
    cols = ("n", "na", "nar", "constructive", "disagree", "strict_ok", "floor_unmet")
    lines = ["kind       " + " ".join(f"{c:>12}" for c in cols)]
    for kind in sorted(agg["by_kind"]):
        row = agg["by_kind"][kind]
        lines.append(f"{kind:<10} " + " ".join(f"{row[c]:>12d}" for c in cols))
    lines.append(f"disagreements: {len(agg['disagreements'])} of {agg['n']}")
    lines.append(f"NA without NA^r: {len(agg['na_without_nar'])} instances")
    return "\n".join(lines)


def write_csv(path: Path, records: list[ExperimentRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "kind", "d", "T", "branching", "na", "nar", "nar_margin",
                    "constructive", "agree", "pipeline_status"])
        for r in sorted(records, key=lambda r: r.seed):
            w.writerow([r.seed, r.kind, r.d, r.T, r.branching, r.na, r.nar, r.nar_margin,
                        r.constructive, r.agree, r.pipeline.get("status", "")])


def run_equivalence(seeds, d: int, T: int, branching: int, theta: float, out_dir=None,
                    fw_tol: float | None = None, pareto_tol: float | None = None,
                    delta: float = DEFAULT_DELTA, figures: bool = True) -> tuple[dict, list, Path | None]:
    """Run all seeds; returns (aggregate, records, run directory or None)."""
    check_limits(d, T, branching)
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    run = new_run_dir(out_dir) if out_dir is not None else None
    if run is not None:
        (run / "records").mkdir()
    records = []
    for seed in seeds:
        rec, inst = run_seed(seed, d, T, branching, theta, fw_tol, pareto_tol, delta)
        records.append(rec)
        if run is not None:
            _write_atomic(run / "records" / f"seed-{seed:06d}.json",
                          json.dumps(rec.to_dict(), indent=1, sort_keys=True))
            if not rec.agree:
                (run / "forensics").mkdir(exist_ok=True)
                _write_atomic(run / "forensics" / f"seed-{seed:06d}.json", inst.dumps())
        if not rec.agree:
            log.error("seed %d (%s): NA^r %s but constructive %s (%s)", seed, rec.kind, rec.nar,
                      rec.constructive, rec.errors.get("constructive", ""))
    agg = aggregate(records)
    agg["params"] = {"d": d, "T": T, "branching": branching, "theta": theta}
    if run is not None:
        _write_atomic(run / "aggregate.json", json.dumps(agg, indent=1, sort_keys=True))
        _write_atomic(run / "summary.txt", summary_table(agg) + "\n")
        write_csv(run / "equivalence.csv", records)
        if figures:
            from .plotting import equivalence_figure
            equivalence_figure(records, run / "equivalence.png")
    return agg, records, run
