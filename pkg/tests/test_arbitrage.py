import json

import numpy as np
import pytest

from conemkt.arbitrage import (ArbitrageCertificate, PriceProcess, budget_bound, check_na,
                               check_nar, find_price_process, martingale_from_leaves)
from conemkt.attainable import TransferPlan, assemble_constraints, realize
from conemkt.instances import (InstanceBundle, generate_instance, two_state_boundary,
                               two_state_frictionless)
from conemkt.lp_core import solve_lp
from conemkt.market_cones import BidAskProcess, polar_membership, shrink_spreads
from conemkt.scenario_tree import generate_random_tree
from conftest import DATA


def random_feasible_terminals(inst, rng, n):
    """Terminal positions of ``n`` random LP vertices of the attainable set."""
    sk = assemble_constraints(inst.tree, inst.process, inst.x)
    out = []
    for _ in range(n):
        res = solve_lp(sk.lp.with_objective(rng.normal(size=sk.n_plan), maximize=True))
        out.append(sk.terminal(res.x))
    return out


def test_frictionless_no_arbitrage():
    tree, proc = two_state_frictionless(2.0, 0.5)
    assert check_na(tree, proc).holds


def test_frictionless_arbitrage_certificate():
    tree, proc = two_state_frictionless(2.0, 1.5)
    res = check_na(tree, proc)
    assert not res.holds
    cert = res.certificate
    assert cert.is_valid(tree, proc)
    assert cert.violated
    # the hand-built plan: buy asset 2 at the root, sell it back at both leaves
    plan = TransferPlan.zeros(tree.size, 2)
    plan.a[0, 0, 1] = 1.0
    for lid in ("u", "d"):
        plan.a[tree.index[lid], 1, 0] = 1.0 * proc.at(lid)[0, 1]
    X = realize(plan, tree, proc, np.zeros(2))[1]
    assert X[tree.leaf_ids.index("u")] == pytest.approx([1.0, 0.0])
    assert X[tree.leaf_ids.index("d")] == pytest.approx([0.5, 0.0])


def test_single_asset_na():
    tree = generate_random_tree(3, 2, 2)
    assert check_na(tree, BidAskProcess.constant(tree, [[1.0]])).holds


def test_price_process_frictionless():
    tree, proc = two_state_frictionless(2.0, 0.5)
    res = find_price_process(tree, proc, strict=False)
    Z = {nid: res.Z.Z[k] for k, nid in enumerate(tree.ids)}
    assert Z["0"] == pytest.approx([0.5, 0.5])
    assert Z["u"] == pytest.approx([1 / 3, 2 / 3])
    assert Z["d"] == pytest.approx([2 / 3, 1 / 3])
    assert res.Z.martingale_residuals().max() <= 1e-12


def test_price_process_arbitrage_none():
    tree, proc = two_state_frictionless(2.0, 1.5)
    assert find_price_process(tree, proc, strict=False).Z is None
    assert find_price_process(tree, proc, strict=True).Z is None
    assert not check_nar(tree, proc).holds


def test_price_process_single_asset():
    tree = generate_random_tree(1, 2, 2)
    res = find_price_process(tree, BidAskProcess.constant(tree, [[1.0]]), strict=True)
    assert np.allclose(res.Z.Z, 1.0)
    assert 1e-7 < res.margin <= 1.0 + 1e-12


def test_nar_frictionless_and_boundary():
    tree, proc = two_state_frictionless(2.0, 0.5)
    res = check_nar(tree, proc)
    assert res.holds and res.margin > 1e-7
    tree, proc = two_state_boundary()
    assert check_na(tree, proc).holds
    res = check_nar(tree, proc)
    assert not res.holds and res.margin <= 1e-7


def test_strict_certificate_is_strictly_consistent():
    inst = generate_instance(3, "roundtrip", 3, 2, 2)
    res = check_nar(inst.tree, inst.process)
    Z = res.certificate
    assert Z.martingale_residuals().max() <= 1e-8
    for k in range(inst.tree.size):
        assert polar_membership(inst.process.pi[k], Z.Z[k], 1e-9)
    assert Z.Z[0].sum() == pytest.approx(1.0)


def test_mutual_exclusion_300_instances():
    kinds = ("roundtrip", "boundary", "arbitrage", "free")
    seen = {True: 0, False: 0}
    for s in range(300):
        kind = kinds[s % 4]
        d, T = 2 + s % 2, 1 + (s // 4) % 2
        inst = generate_instance(s, kind, d, T, 2)
        na = check_na(inst.tree, inst.process)
        nar = check_nar(inst.tree, inst.process)
        assert not ((not na.holds) and nar.holds), f"seed {s} kind {kind}"
        seen[na.holds] += 1
        if not na.holds:
            assert na.certificate.is_valid(inst.tree, inst.process)
    assert seen[True] and seen[False]


def test_roundtrip_nar_over_seeds():
    for s in range(60):
        inst = generate_instance(s, "roundtrip", 2 + s % 3, 1 + s % 2, 2)
        assert check_nar(inst.tree, inst.process).holds, s


def test_arbitrage_kind_fails_na():
    for s in range(20):
        inst = generate_instance(s, "arbitrage", 2 + s % 2, 1 + s % 2, 2)
        res = check_na(inst.tree, inst.process)
        assert not res.holds and res.certificate.is_valid(inst.tree, inst.process)


def test_certificate_invariants():
    tree, proc = two_state_frictionless(2.0, 1.5)
    cert = check_na(tree, proc).certificate
    assert np.all(cert.terminal >= -1e-8)
    zero = ArbitrageCertificate(TransferPlan.zeros(tree.size, 2), np.zeros((2, 2)), [])
    assert not zero.is_valid(tree, proc)
    data = cert.to_dict(tree)
    assert data["kind"] == "arbitrage" and set(data["terminal"]) == set(tree.leaf_ids)


def test_shrink_keeps_na_on_roundtrip_population():
    for s in range(60):
        inst = generate_instance(s, "roundtrip", 2 + s % 2, 1 + (s // 2) % 2, 2)
        assert check_nar(inst.tree, inst.process).holds
        for theta in (0.25, 0.5):
            assert check_na(inst.tree, shrink_spreads(inst.process, theta)).holds, (s, theta)


def test_canonical_shrink_need_not_preserve_na():
    """Robust NA only promises some smaller-spread process without arbitrage.

    With direction-dependent spreads the canonical midpoint shrink can move a
    spread past every consistent price; this frozen instance shows it.
    """
    inst = InstanceBundle.from_dict(json.loads((DATA / "shrink_counterexample.json").read_text()))
    nar = check_nar(inst.tree, inst.process)
    assert nar.holds and nar.margin > 1e-2
    assert check_na(inst.tree, shrink_spreads(inst.process, 0.25)).holds
    assert not check_na(inst.tree, shrink_spreads(inst.process, 0.5)).holds


def test_budget_examples():
    inst = generate_instance(5, "roundtrip", 2, 2, 2)
    Z = check_nar(inst.tree, inst.process).certificate
    L = len(inst.tree.leaves)
    rep = budget_bound(Z, inst.x, np.tile(inst.x, (L, 1)), inst.tree)
    assert abs(rep.residual) <= 1e-12 and rep.ok
    for qe, qb in zip(rep.q_expectations, rep.q_bounds):
        assert qe == pytest.approx(1.0) and qb is not None
    plan = TransferPlan.zeros(inst.tree.size, 2)
    plan.dsp[0, 0] = 0.5
    X = realize(plan, inst.tree, inst.process, inst.x)[1]
    assert budget_bound(Z, inst.x, X, inst.tree).residual < 0


def test_budget_random_plans():
    rng = np.random.default_rng(0)
    for s in range(5):
        inst = generate_instance(s, "roundtrip", 3, 2, 2)
        Z = check_nar(inst.tree, inst.process).certificate
        for X in random_feasible_terminals(inst, rng, 100):
            assert budget_bound(Z, inst.x, X, inst.tree).residual <= 1e-7


def test_budget_marks_zero_coordinates():
    tree, _ = two_state_frictionless(2.0, 0.5)
    Z = PriceProcess(tree, np.array([[1.0, 0.0]] * 3))
    rep = budget_bound(Z, [1.0, 1.0], np.ones((2, 2)), tree)
    assert rep.q_expectations[1] is None and rep.q_bounds[1] is None


def test_martingale_from_leaves():
    tree = generate_random_tree(2, 3, 2)
    leaf = np.random.default_rng(1).uniform(0.5, 2.0, (len(tree.leaves), 2))
    Z = martingale_from_leaves(tree, leaf)
    assert Z.martingale_residuals().max() <= 1e-12
    assert np.array_equal(Z.terminal, leaf)
    assert np.array_equal(PriceProcess.from_records(tree, Z.to_records()).Z, Z.Z)
