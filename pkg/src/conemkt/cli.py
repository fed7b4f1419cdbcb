"""Command-line entry point.

Exit codes: 0 holds / ok, 1 validation failure or error, 2 input, parse or
digest error, 3 verdict fails, 4 precondition unmet, 5 disagreement in the
equivalence experiment.  Every nonzero exit prints a JSON reason on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .arbitrage import check_na, find_price_process
from .attainable import TransferPlan
from .config import get_tolerances
from .instances import KINDS, InstanceBundle, digest_of, generate_instance
from .lp_core import LpError
from .pareto import (ParetoSolution, SolverError, SweepFailure, improvement_from_arbitrage,
                     normalize_weights, pareto_front_sweep, simplex_grid)
from .pricing import PreconditionError, price_from_maximizer, strict_pipeline, verify_consistency
from .utility import expected_vector_utility

log = logging.getLogger("conemkt")

OK, ERROR, INPUT, FAILS, PRECONDITION, DISAGREE = 0, 1, 2, 3, 4, 5
EXAMPLE_INSTANCE = Path(__file__).with_name("data") / "example_instance.json"


class CliExit(Exception):
    def __init__(self, code: int, reason: str, **extra):
        super().__init__(reason)
        self.code = code
        self.reason = reason
        self.extra = extra


def _dump(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliExit(INPUT, f"no such file: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CliExit(INPUT, f"cannot parse {path}: {exc}") from None


def _load(path, validate: bool = True) -> InstanceBundle:
    data = _read_json(path)
    try:
        inst = InstanceBundle.from_dict(data, base=Path(path).parent)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CliExit(INPUT, f"malformed instance: {exc!r}") from None
    if validate:
        rep = inst.validate()
        if not rep.ok:
            raise CliExit(ERROR, "instance fails validation", violations=rep.violations)
    return inst


def _sidecar(instance_path, suffix: str, out_dir=None) -> Path:
    p = Path(instance_path)
    base = Path(out_dir) if out_dir else p.parent
    base.mkdir(parents=True, exist_ok=True)
    return base / f"{p.stem}.{suffix}.json"


# commands

def cmd_validate(args) -> int:
    inst = _load(args.instance, validate=False)
    rep = inst.validate()
    report = {"ok": rep.ok, "violations": rep.violations, "instance_digest": inst.digest()}
    if args.json:
        print(json.dumps(report, indent=1))
    else:
        print("valid" if rep.ok else "invalid")
        for v in rep.violations:
            print(f"  {v}")
    if not rep.ok:
        raise CliExit(ERROR, "instance fails validation", violations=rep.violations)
    return OK


def cmd_check(args) -> int:
    inst = _load(args.instance)
    tree, proc = inst.tree, inst.process
    out = _sidecar(args.instance, args.mode, args.out_dir)
    if args.mode == "na":
        res = check_na(tree, proc)
        if res.holds:
            pr = find_price_process(tree, proc, strict=False)
            payload = {"kind": "price_process", "strict": False,
                       "Z": pr.Z.to_records() if pr.Z else None, "margin": pr.margin}
        else:
            payload = res.certificate.to_dict(tree)
        payload.update(verdict="holds" if res.holds else "fails", value=res.value,
                       instance_digest=inst.digest())
        _dump(out, payload)
        print(f"NA {'holds' if res.holds else 'fails'} (terminal mass {res.value:.3e}); wrote {out}")
        if not res.holds:
            raise CliExit(FAILS, "arbitrage found", certificate=str(out))
        return OK
    res = find_price_process(tree, proc, strict=True)
    holds = res.Z is not None and res.margin > get_tolerances().strict_margin
    payload = {"kind": "price_process", "strict": True, "verdict": "holds" if holds else "fails",
               "margin": res.margin, "threshold": get_tolerances().strict_margin,
               "instance_digest": inst.digest(),
               "Z": res.Z.to_records() if res.Z is not None else None}
    if not holds:
        na = check_na(tree, proc)
        payload["na_holds"] = na.holds
        if not na.holds:
            payload["arbitrage"] = na.certificate.to_dict(tree)
    _dump(out, payload)
    print(f"NA^r {'holds' if holds else 'fails'} (margin {res.margin:.3e}); wrote {out}")
    if not holds:
        raise CliExit(FAILS, "robust no-arbitrage fails", margin=res.margin, certificate=str(out))
    return OK


def _solution_file(inst: InstanceBundle, sol: ParetoSolution) -> dict:
    payload = sol.to_dict(inst.tree)
    return {"instance_digest": inst.digest(), "payload": payload,
            "payload_digest": digest_of(payload), "version": __version__}


def _parse_weights(text: str, d: int) -> np.ndarray:
    try:
        lam = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise CliExit(INPUT, f"cannot parse weights {text!r}") from None
    if lam.size != d:
        raise CliExit(INPUT, f"expected {d} weights, got {lam.size}")
    try:
        normalize_weights(lam)
    except ValueError as exc:
        raise CliExit(INPUT, str(exc)) from None
    return lam


def cmd_maximize(args) -> int:
    inst = _load(args.instance)
    tree, proc, x, spec = inst.tree, inst.process, inst.x, inst.utility
    d = inst.d
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.instance).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.instance).stem
    if args.sweep is not None:
        if args.sweep < 1:
            raise CliExit(INPUT, "sweep needs at least one point")
        grid = simplex_grid(d, args.sweep)
    else:
        grid = [_parse_weights(args.weights, d) if args.weights else np.ones(d)]
    na = check_na(tree, proc)
    if not na.holds:
        cert = na.certificate
        X0 = np.tile(x, (len(tree.leaves), 1))
        better = improvement_from_arbitrage(tree, proc, x, spec, X0, cert)
        demo = {"certificate": cert.to_dict(tree),
                "no_trade_utility": expected_vector_utility(tree, X0, spec).tolist(),
                "improved_utility": expected_vector_utility(tree, better, spec).tolist(),
                "improved_terminal": {lid: better[k].tolist() for k, lid in enumerate(tree.leaf_ids)},
                "instance_digest": inst.digest()}
        path = _dump(out_dir / f"{stem}.arbitrage.json", demo)
        print(f"NA fails: no Pareto maximizer exists; improvement of the no-trade position written to {path}")
        raise CliExit(FAILS, "arbitrage: maximization refused", certificate=str(path))
    sols = pareto_front_sweep(tree, proc, x, spec, grid, tol=args.tol)
    rows, failed = [], 0
    for k, sol in enumerate(sols):
        if isinstance(sol, SweepFailure):
            failed += 1
            print(f"lambda={np.round(sol.raw_weights, 6).tolist()}: failed ({sol.error})")
            continue
        name = f"{stem}.solution.json" if len(sols) == 1 else f"{stem}.solution-{k:03d}.json"
        _dump(out_dir / name, _solution_file(inst, sol))
        rows.append((sol.weights, sol.utility))
        print(f"lambda={np.round(sol.weights, 6).tolist()} utility={np.round(sol.utility, 6).tolist()} "
              f"gap={sol.gap:.2e} -> {name}")
    if args.csv:
        csv_path = Path(args.csv)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"lambda{i+1}" for i in range(d)] + [f"EU{i+1}" for i in range(d)])
            for lam, u in rows:
                w.writerow(list(lam) + list(u))
        if rows:
            from .plotting import frontier_figure
            frontier_figure([u for _, u in rows], [lam for lam, _ in rows],
                            csv_path.with_suffix(".png"))
    if failed:
        raise CliExit(ERROR, f"{failed} of {len(sols)} solves failed")
    return OK


def _load_solution(path, inst: InstanceBundle) -> ParetoSolution:
    data = _read_json(path)
    try:
        payload = data["payload"]
        if data["instance_digest"] != inst.digest():
            raise CliExit(INPUT, "solution was computed for a different instance")
        if data["payload_digest"] != digest_of(payload):
            raise CliExit(INPUT, "solution payload does not match its digest")
        tree = inst.tree
        X = np.array([payload["terminal"][lid] for lid in tree.leaf_ids], dtype=float)
        plan = TransferPlan.from_records(tree, inst.d, payload["plan"])
        return ParetoSolution(np.asarray(payload["weights"], dtype=float),
                              np.asarray(payload["raw_weights"], dtype=float), plan, X,
                              np.asarray(payload["utility"], dtype=float), float(payload["gap"]),
                              int(payload.get("iterations", 0)), bool(payload.get("converged", True)))
    except (KeyError, TypeError, ValueError) as exc:
        raise CliExit(INPUT, f"malformed solution file: {exc!r}") from None


def cmd_price(args) -> int:
    inst = _load(args.instance)
    sol = _load_solution(args.solution, inst)
    tree = inst.tree
    if args.strict:
        try:
            res = strict_pipeline(tree, inst.process, args.theta, inst.x, inst.utility,
                                  sol.raw_weights, args.delta)
        except PreconditionError as exc:
            raise CliExit(FAILS, str(exc)) from None
        report, Z, status = res.report, res.Z, res.status
    else:
        Z = price_from_maximizer(tree, inst.utility, sol)
        report = verify_consistency(Z, tree, inst.process, args.delta, sol.terminal, strict=False)
        status = "precondition-unmet" if report.floor_met is False else (
            "ok" if report.passed else "failed")
    out = _sidecar(args.instance, "price", args.out_dir)
    _dump(out, {"status": status, "report": report.to_dict(), "Z": Z.to_records(),
                "instance_digest": inst.digest()})
    s = report.summary()
    print(f"verdict: {s['verdict']}  status: {status}")
    print(f"  max martingale residual {s['max_martingale_residual']:.3e}")
    print(f"  max polar slack         {s['max_polar_slack']:.3e}")
    if "min_strict_margin" in s:
        print(f"  min strict margin       {s['min_strict_margin']:.3e}")
    for lid, i, v in report.floor_violations:
        print(f"  floor unmet at leaf {lid}, asset {i}: {v:.3e}")
    print(f"wrote {out}")
    if status == "precondition-unmet":
        raise CliExit(PRECONDITION, "terminal floor not met",
                      leaves=[f"{lid}:{i}" for lid, i, _ in report.floor_violations])
    if status != "ok":
        raise CliExit(FAILS, "consistency verification failed", failures=report.failures)
    return OK


def _seed_range(text: str) -> list[int]:
    try:
        if ".." in text:
            a, b = text.split("..")
            return list(range(int(a), int(b) + 1))
        return [int(s) for s in text.split(",")]
    except ValueError:
        raise CliExit(INPUT, f"cannot parse seeds {text!r}") from None


def cmd_equivalence(args) -> int:
    from .experiment import run_equivalence, summary_table
    seeds = _seed_range(args.seeds)
    try:
        agg, _, run = run_equivalence(seeds, args.d, args.T, args.branching, args.theta,
                                      out_dir=args.out_dir, figures=not args.no_figures)
    except ValueError as exc:
        raise CliExit(INPUT, str(exc)) from None
    print(summary_table(agg))
    if run is not None:
        print(f"run directory: {run}")
    if args.json:
        print(json.dumps(agg, indent=1, sort_keys=True))
    if agg["disagreements"]:
        raise CliExit(DISAGREE, "verdicts disagree", seeds=agg["disagreements"])
    return OK


def cmd_gen(args) -> int:
    if args.example:
        text = EXAMPLE_INSTANCE.read_text()
    else:
        try:
            inst = generate_instance(args.seed, args.kind, args.d, args.T, args.branching)
        except ValueError as exc:
            raise CliExit(INPUT, str(exc)) from None
        text = inst.dumps() + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"exit_code": INPUT, "reason": message}), file=sys.stderr)
        sys.exit(INPUT)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="conemkt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check an instance file")
    s.add_argument("instance")
    s.add_argument("--json", action="store_true", help="print a JSON report")
    s.set_defaults(fn=cmd_validate)

    s = sub.add_parser("check", help="no-arbitrage verdicts")
    s.add_argument("instance")
    s.add_argument("--mode", choices=("na", "nar"), default="na")
    s.add_argument("--out-dir")
    s.set_defaults(fn=cmd_check)

    s = sub.add_parser("maximize", help="scalarized utility maximization")
    s.add_argument("instance")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--lambda", dest="weights", help="comma-separated positive weights")
    g.add_argument("--sweep", type=int, help="number of weight vectors on the simplex")
    s.add_argument("--tol", type=float, default=None)
    s.add_argument("--out-dir")
    s.add_argument("--csv", help="write frontier points (weights, expected utilities) here")
    s.set_defaults(fn=cmd_maximize)

    s = sub.add_parser("price", help="price process from a solution")
    s.add_argument("instance")
    s.add_argument("solution")
    s.add_argument("--strict", action="store_true")
    s.add_argument("--theta", type=float, default=0.5)
    s.add_argument("--delta", type=float, default=1e-3)
    s.add_argument("--out-dir")
    s.set_defaults(fn=cmd_price)

    s = sub.add_parser("equivalence", help="robust NA versus solvability under shrunk spreads")
    s.add_argument("--seeds", default="0..199", help="range a..b or comma list")
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--T", type=int, default=1)
    s.add_argument("--branching", type=int, default=2)
    s.add_argument("--theta", type=float, default=0.5)
    s.add_argument("--out-dir", default="runs")
    s.add_argument("--json", action="store_true")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(fn=cmd_equivalence)

    s = sub.add_parser("gen", help="generate a seeded instance")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--kind", choices=KINDS, default="roundtrip")
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--T", type=int, default=1)
    s.add_argument("--branching", type=int, default=2)
    s.add_argument("--example", action="store_true", help="emit the bundled example instance")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_gen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        get_tolerances()
        return args.fn(args)
    except CliExit as exc:
        print(json.dumps({"exit_code": exc.code, "reason": exc.reason, **exc.extra}), file=sys.stderr)
        return exc.code
    except (SolverError, LpError, PreconditionError) as exc:
        print(json.dumps({"exit_code": ERROR, "reason": str(exc)}), file=sys.stderr)
        return ERROR
    except ValueError as exc:
        print(json.dumps({"exit_code": INPUT, "reason": str(exc)}), file=sys.stderr)
        return INPUT


if __name__ == "__main__":
    sys.exit(main())
