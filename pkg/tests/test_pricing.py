import numpy as np
import pytest

from conemkt.arbitrage import PriceProcess, budget_bound, check_nar, find_price_process
from conemkt.attainable import TransferPlan, assemble_constraints
from conemkt.instances import generate_instance, two_state_frictionless
from conemkt.lp_core import solve_lp
from conemkt.market_cones import BidAskProcess, polar_slack
from conemkt.pareto import ParetoSolution, solve_scalarized
from conemkt.pricing import (FAILED, STRICT, PreconditionError, price_from_maximizer,
                             strict_pipeline, verify_consistency)
from conemkt.scenario_tree import deterministic_tree, two_state_tree
from conemkt.utility import UtilitySpec

EXP = UtilitySpec.exponential([1.0, 1.0])


def fake_solution(tree, X, lam):
    lam = np.asarray(lam, dtype=float)
    return ParetoSolution(lam / lam.sum(), lam, TransferPlan.zeros(tree.size, len(lam)),
                          np.asarray(X, dtype=float), np.zeros(len(lam)), 0.0)


def test_deterministic_price():
    tree = deterministic_tree(2)
    Z = price_from_maximizer(tree, EXP, fake_solution(tree, [[1.0, 1.0]], [1.0, 1.0]))
    assert np.allclose(Z.Z, np.exp(-1.0), rtol=1e-15)


def test_two_leaf_average():
    tree = two_state_tree(0.5)
    spec = UtilitySpec.exponential([1.0])
    Z = price_from_maximizer(tree, spec, fake_solution(tree, [[1.0], [2.0]], [1.0]))
    assert Z.Z[0, 0] == pytest.approx(0.5 * (np.exp(-1) + np.exp(-2)))
    assert Z.Z[0, 0] == pytest.approx(0.2516, abs=1e-4)


def test_price_input_errors():
    tree = two_state_tree(0.5)
    with pytest.raises(ValueError):
        price_from_maximizer(tree, EXP, fake_solution(tree, [[-1.0, 1.0], [1.0, 1.0]], [1.0, 1.0]))
    sol = fake_solution(tree, np.ones((2, 2)), [1.0, 1.0])
    sol.raw_weights = np.array([0.0, 0.0])
    with pytest.raises(ValueError):
        price_from_maximizer(tree, EXP, sol)


def test_zero_weight_flags_zero_coordinate():
    tree, proc = two_state_frictionless(2.0, 0.5)
    sol = fake_solution(tree, np.ones((2, 2)), [1.0, 1.0])
    sol.raw_weights = np.array([1.0, 0.0])
    Z = price_from_maximizer(tree, EXP, sol)
    rep = verify_consistency(Z, tree, proc)
    assert rep.zero_coordinates == [2]


def test_zero_process_fails():
    tree, proc = two_state_frictionless(2.0, 0.5)
    rep = verify_consistency(PriceProcess(tree, np.zeros((3, 2))), tree, proc)
    assert rep.verdict == FAILED and any("vanishes" in f for f in rep.failures)


def test_shape_mismatch_raises():
    tree, proc = two_state_frictionless(2.0, 0.5)
    with pytest.raises(ValueError):
        verify_consistency(PriceProcess(tree, np.ones((3, 3))), tree, proc)


def test_lp_certificate_verifies_strictly():
    for s in range(10):
        inst = generate_instance(s, "roundtrip", 2 + s % 2, 1 + s % 2, 2)
        Z = find_price_process(inst.tree, inst.process, strict=True).Z
        rep = verify_consistency(Z, inst.tree, inst.process, strict=True)
        assert rep.verdict == STRICT and rep.passed


def test_verification_is_scale_invariant():
    inst = generate_instance(2, "roundtrip", 2, 1, 2)
    Z = find_price_process(inst.tree, inst.process, strict=True).Z
    for scale in (1e-9, 1.0, 1e6):
        rep = verify_consistency(PriceProcess(inst.tree, scale * Z.Z), inst.tree, inst.process,
                                 strict=True)
        assert rep.verdict == STRICT


def test_maximizer_price_consistent_when_floor_met():
    checked = 0
    for s in range(20):
        inst = generate_instance(s, "roundtrip", 2, 1 + s % 2, 2, family="exp")
        sol = solve_scalarized(inst.tree, inst.process, inst.x, inst.utility, np.ones(2), tol=1e-9)
        Z = price_from_maximizer(inst.tree, inst.utility, sol)
        assert Z.martingale_residuals().max() <= 1e-12
        rep = verify_consistency(Z, inst.tree, inst.process, 1e-3, sol.terminal)
        if rep.floor_met:
            checked += 1
            assert rep.passed and rep.slack.max() <= 1e-6
            # first-order condition: every generator of every node pairs nonpositively with Z
            for k in range(inst.tree.size):
                assert polar_slack(inst.process.pi[k], Z.Z[k]) <= 1e-5
    assert checked >= 10


def test_floor_violation_reported():
    tree, proc = two_state_frictionless(2.0, 0.5)
    sol = fake_solution(tree, [[0.0, 2.0], [1.0, 1.0]], [1.0, 1.0])
    Z = price_from_maximizer(tree, EXP, sol)
    rep = verify_consistency(Z, tree, proc, 1e-3, sol.terminal)
    assert rep.floor_met is False
    assert rep.floor_violations == [(tree.leaf_ids[0], 1, 0.0)]
    data = rep.to_dict()
    assert data["floor_violations"][0]["asset"] == 1 and len(data["nodes"]) == 3


def test_pipeline_strict_on_roundtrip():
    inst = generate_instance(1, "roundtrip", 2, 1, 2, family="exp")
    res = strict_pipeline(inst.tree, inst.process, 0.5, [1.0, 1.0], inst.utility, [0.5, 0.5], 1e-3)
    assert res.status == "ok" and res.report.verdict == STRICT
    assert res.report.margin.min() > 1e-7
    assert res.Z.martingale_residuals().max() <= 1e-12
    lp_Z = check_nar(inst.tree, inst.process).certificate
    assert verify_consistency(lp_Z, inst.tree, inst.process, strict=True).passed
    assert verify_consistency(res.Z, inst.tree, inst.process, strict=True).passed


def test_pipeline_refuses_arbitrage():
    tree, proc = two_state_frictionless(2.0, 1.5)
    with pytest.raises(PreconditionError):
        strict_pipeline(tree, proc, 0.5, [1.0, 1.0], EXP, [1.0, 1.0], 1e-3)


def test_pipeline_theta_sweep_recorded():
    inst = generate_instance(5, "roundtrip", 2, 2, 2, family="exp")
    margins = {}
    for theta in (0.1, 0.3, 0.5):
        res = strict_pipeline(inst.tree, inst.process, theta, inst.x, inst.utility, np.ones(2), 1e-3)
        assert res.report.verdict == STRICT
        margins[theta] = float(res.report.margin.min())
    print("min strict margin by theta:", margins)
    tiny = strict_pipeline(inst.tree, inst.process, 1e-6, inst.x, inst.utility, np.ones(2), 1e-3)
    print("theta=1e-6:", tiny.report.summary())


def test_pipeline_price_satisfies_budget():
    rng = np.random.default_rng(0)
    inst = generate_instance(7, "roundtrip", 3, 1, 3, family="exp")
    res = strict_pipeline(inst.tree, inst.process, 0.5, inst.x, inst.utility, np.ones(3), 1e-3)
    sk = assemble_constraints(inst.tree, inst.process, inst.x)
    for _ in range(20):
        out = solve_lp(sk.lp.with_objective(rng.normal(size=sk.n_plan), maximize=True))
        assert budget_bound(res.Z, inst.x, sk.terminal(out.x), inst.tree).residual <= 1e-7


def test_single_asset_pipeline():
    tree = two_state_tree(0.3)
    proc = BidAskProcess.constant(tree, [[1.0]])
    res = strict_pipeline(tree, proc, 0.5, [1.0], UtilitySpec.exponential([2.0]), [1.0], 1e-3)
    assert res.status == "ok"
