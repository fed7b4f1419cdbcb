import numpy as np
import pytest
from hypothesis import given, strategies as st

from conemkt.scenario_tree import deterministic_tree, two_state_tree
from conemkt.utility import FAMILIES, AssetUtility, UtilitySpec, eval_utility, expected_vector_utility


def central_difference(f, x, h):
    return (f(x + h) - f(x - h)) / (2 * h)


def test_examples():
    assert eval_utility(UtilitySpec.exponential([1.0]), 0, 0.0) == (0.0, 1.0)
    hyp = UtilitySpec((AssetUtility("hyp", 1.0),))
    v, dv = eval_utility(hyp, 0, 1.0)
    assert v == pytest.approx(0.5) and dv == pytest.approx(0.25)


def test_negative_input_rejected():
    with pytest.raises(ValueError):
        eval_utility(UtilitySpec.exponential([1.0]), 0, -0.1)


def test_bad_family_and_param():
    with pytest.raises(ValueError):
        AssetUtility("log", 1.0)
    with pytest.raises(ValueError):
        AssetUtility("exp", 0.0)


@pytest.mark.parametrize("family", FAMILIES)
def test_derivatives_match_finite_differences(family):
    rng = np.random.default_rng(FAMILIES.index(family))
    for _ in range(50):
        u = AssetUtility(family, float(rng.uniform(0.5, 2.0)))
        x = float(rng.uniform(0.01, 5.0))
        h = 1e-5 * (1 + x)
        assert central_difference(u.value, x, h) == pytest.approx(float(u.deriv(x)), rel=1e-6)
        assert central_difference(u.deriv, x, h) == pytest.approx(float(u.second(x)), rel=1e-6)


@given(st.sampled_from(FAMILIES), st.floats(0.1, 5.0), st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_shape_properties(family, param, x, y):
    u = AssetUtility(family, param)
    lo, hi = min(x, y), max(x, y)
    assert u.value(0.0) == 0.0
    # the bound 1 is strict in exact arithmetic; doubles may round up to it
    assert 0.0 <= u.value(lo) <= u.value(hi) <= 1.0
    assert u.deriv(lo) >= u.deriv(hi) > 0.0
    assert u.second(lo) < 0.0
    # concavity along the chord
    mid = 0.5 * (lo + hi)
    assert u.value(mid) >= 0.5 * (u.value(lo) + u.value(hi)) - 1e-15


def test_expected_vector_utility_examples():
    tree = deterministic_tree(1)
    spec = UtilitySpec.exponential([1.0, 1.0])
    assert expected_vector_utility(tree, np.zeros((1, 2)), spec).tolist() == [0.0, 0.0]
    assert expected_vector_utility(tree, [[1.0, 1.0]], spec) == pytest.approx([1 - np.exp(-1)] * 2)
    two = two_state_tree(0.5)
    val = expected_vector_utility(two, [[0.0, 1.0], [2.0, 1.0]], spec)
    assert val[0] == pytest.approx(0.5 * (1 - np.exp(-2)))
    with pytest.raises(ValueError):
        expected_vector_utility(two, [[-1.0, 1.0], [2.0, 1.0]], spec)


def test_spec_roundtrip():
    spec = UtilitySpec((AssetUtility("exp", 1.5), AssetUtility("powasym", 0.7)))
    assert UtilitySpec.from_dict(spec.to_dict()) == spec
