"""Exhaustive pattern oracle, MILP cross-check, and the sampling upper bound."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bnncert import (
    MultilinearPoly,
    PerturbationRegion,
    Var,
    encode_milp,
    enumerate_patterns,
    exact_verify,
    feasible_patterns,
    forward,
    objective_targeted,
    relative_improvement,
    sample_upper_bound,
)
from bnncert.oracle import milp_feasible_patterns, pattern_assignment

from conftest import make_example1, random_net, random_region


def objective1(net):
    return objective_targeted(net, true_label=2, target=1)


def test_enumerate_patterns_shape(example1):
    patterns = list(enumerate_patterns(example1))
    assert len(patterns) == 16
    assert patterns[0] == ((-1, -1), (-1, -1))
    assert patterns[-1] == ((1, 1), (1, 1))
    assert all(len(p) == 2 and all(len(l) == 2 for l in p) for p in patterns)
    assert len(set(patterns)) == 16


def test_enumerate_patterns_cap():
    rng = np.random.default_rng(0)
    net = random_net(rng, (3, 4, 4, 2))
    with pytest.raises(ValueError, match="at most 6"):
        list(enumerate_patterns(net, cap=6))


def test_pattern_assignment_values(example1):
    pattern = ((1, -1), (-1, 1))
    assignment = pattern_assignment(example1, pattern)
    assert assignment == {
        Var(1, 1): 1,
        Var(1, 2): -1,
        Var(2, 1): -1,
        Var(2, 2): 1,
    }


def test_exact_verify_point_region(example1, x0_example):
    region = PerturbationRegion.l2(x0_example, 0.0)
    res = exact_verify(example1, region, objective1(example1))
    assert res.tau == Fraction(3)
    assert res.n_feasible == 1
    np.testing.assert_allclose(res.witness, x0_example)
    assert res.minimizer == ((1, 1), (-1, -1))


def test_exact_verify_small_l2_ball(example1, x0_example):
    region = PerturbationRegion.l2(x0_example, 0.2)
    res = exact_verify(example1, region, objective1(example1))
    assert res.tau <= Fraction(3)
    assert res.n_feasible >= 1
    assert res.value == float(res.tau)


def test_exact_verify_example1_full_box(example1, x0_example):
    region = PerturbationRegion.linf(x0_example, 1.0)
    res = exact_verify(example1, region, objective1(example1))
    assert res.tau == Fraction(-1)
    assert res.n_feasible == 4
    assert region.contains(res.witness)


def test_exact_verify_constant_objective(example1, x0_example):
    region = PerturbationRegion.linf(x0_example, 0.5)
    res = exact_verify(example1, region, MultilinearPoly.constant(Fraction(5, 4)))
    assert res.tau == Fraction(5, 4)


def test_exact_verify_rejects_input_variables(example1, x0_example):
    region = PerturbationRegion.linf(x0_example, 0.5)
    bad = MultilinearPoly.variable(Var(0, 1))
    with pytest.raises(ValueError, match="binary variables only"):
        exact_verify(example1, region, bad)


def test_witnesses_satisfy_their_patterns(example1, x0_example):
    region = PerturbationRegion.linf(x0_example, 1.0)
    for rec in feasible_patterns(example1, region):
        assert region.contains(rec.witness)
        x = np.asarray(rec.witness, dtype=float)
        cur = x
        for i, layer_signs in enumerate(rec.pattern, start=1):
            z = example1.weight(i) @ cur + example1.bias(i)
            assert np.all(np.asarray(layer_signs) * z >= -1e-12)
            cur = np.asarray(layer_signs, dtype=float)


@pytest.mark.parametrize("kind", ["linf", "l2"])
def test_milp_patterns_match_oracle_example1(example1, x0_example, kind):
    region = (
        PerturbationRegion.linf(x0_example, 1.0)
        if kind == "linf"
        else PerturbationRegion.l2(x0_example, 1.0)
    )
    inst = encode_milp(example1, region, objective1(example1), true_label=2, target=1)
    oracle_set = {r.pattern for r in feasible_patterns(example1, region)}
    milp_set = {r.pattern for r in milp_feasible_patterns(inst)}
    assert oracle_set == milp_set


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=10, deadline=None)
def test_milp_patterns_match_oracle_random(seed):
    rng = np.random.default_rng(seed)
    net = random_net(rng, (3, 3, 2, 2))
    region = random_region(rng, 3, "linf" if seed % 2 else "l2")
    f = objective_targeted(net, 1, 2)
    inst = encode_milp(net, region, f, true_label=1, target=2)
    oracle_set = {r.pattern for r in feasible_patterns(net, region)}
    milp_set = {r.pattern for r in milp_feasible_patterns(inst)}
    assert oracle_set == milp_set
    # and the minimum over encoded patterns is the oracle's tau
    ex = exact_verify(net, region, f)
    milp_min = min(
        f.to_exact().evaluate(pattern_assignment(net, p)) for p in milp_set
    )
    assert milp_min == ex.tau


def test_milp_threshold_feasibility_matches_sign(example1, x0_example):
    """threshold = 0 cuts exactly the patterns with objective <= 0."""
    region = PerturbationRegion.linf(x0_example, 1.0)
    f = objective1(example1)
    inst = encode_milp(
        example1, region, f, feasibility_threshold=0.0, true_label=2, target=1
    )
    cut_set = {r.pattern for r in milp_feasible_patterns(inst)}
    ex = exact_verify(example1, region, f)
    attack_exists = ex.tau <= 0
    assert bool(cut_set) == attack_exists
    for p in cut_set:
        assert f.to_exact().evaluate(pattern_assignment(example1, p)) <= 0


def test_sample_upper_bound_point_region(example1, x0_example):
    region = PerturbationRegion.linf(x0_example, 0.0)
    sb = sample_upper_bound(example1, region, objective1(example1), n_samples=1)
    assert sb.value == 3.0
    np.testing.assert_allclose(sb.x0, x0_example)


def test_sample_upper_bound_is_deterministic(example1, x0_example):
    region = PerturbationRegion.linf(x0_example, 1.0)
    a = sample_upper_bound(example1, region, objective1(example1), seed=7)
    b = sample_upper_bound(example1, region, objective1(example1), seed=7)
    assert a.value == b.value
    np.testing.assert_array_equal(a.x0, b.x0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_sample_upper_bound_dominates_exact_optimum(seed):
    rng = np.random.default_rng(seed)
    net = random_net(rng, (3, 3, 2))
    region = random_region(rng, 3, "l2" if seed % 3 == 0 else "linf")
    f = objective_targeted(net, 1, 2)
    ub = sample_upper_bound(net, region, f, n_samples=64, seed=seed)
    ex = exact_verify(net, region, f)
    assert ub.value >= float(ex.tau) - 1e-12


def test_sample_upper_bound_l2_samples_stay_in_ball(example1, x0_example):
    region = PerturbationRegion.l2(x0_example, 0.3)
    sb = sample_upper_bound(example1, region, objective1(example1), n_samples=128)
    assert region.contains(sb.x0)


def test_relative_improvement_endpoints():
    assert relative_improvement(-1.0, -1.0, 2.0) == 0.0
    assert relative_improvement(2.0, -1.0, 2.0) == 1.0
    assert relative_improvement(0.5, -1.0, 2.0) == 0.5
    assert relative_improvement(0.0, 1.0, 1.0) is None
    assert relative_improvement(0.0, 1.0, 0.5) is None
