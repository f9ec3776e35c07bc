import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from lottery import *
from lottery.analysis import (
    g, hitting_time_check, all_pairs, threshold_T, group_succeeds, enumerate_br, conjecture_probe, poisson_tail_bound,
    spl_example_closed_forms, spl_tight_closed_form, gl_tight_closed_form, il_bad_proof_bounds, il_limit_bad_proof_bounds,
    badnews_efficiency_ceiling, best_response_search, request_universe
)
from lottery.evaluation import exact_gl_dp, exact_enumerate
from lottery.mechanisms import allocate_individual, make_stream
from lottery.exceptions import DomainError, InsufficientTotalError, ParamViolationError, TooLargeError


def test_g():
    assert g(0) == 1.0
    grid = np.linspace(0.01, 0.99, 99)
    values = np.array([g(x) for x in grid])
    assert np.all(np.diff(values) < 0)
    assert np.all(values <= 1) and np.all(values >= 1 - grid / 2)


def test_bounds_hamilton():
    inst = generate_named(NamedConstruction(ConstructionTag.HAMILTON_LIKE, {"n": 2000}))
    record = bounds(inst)
    assert format(record.gl_eff, ".10g") == "0.9523809524"
    assert format(record.gl_fair, ".10g") == "0.9047619048"
    assert record.gl_eff >= 0.95 and record.gl_fair >= 0.90


def test_bounds_big_sur():
    record = bounds(generate_named(NamedConstruction(ConstructionTag.BIG_SUR_LIKE)))
    assert record.kappa == pytest.approx(14 / 702)
    assert record.alpha == pytest.approx(702 / 1296)
    assert 0.755 <= record.iw_eff <= 0.760
    assert 0.738 <= record.iw_fair <= 0.744
    assert record.gl_eff == pytest.approx(0.9801, abs=1e-4)
    assert record.gl_fair == pytest.approx(0.9601, abs=1e-4)


def test_bounds_clamped_and_limits():
    record = bounds(make_instance(1, [1, 2, 2, 2, 2]), ell=2)
    assert record.gl_fair == -1
    assert record.clamped()["gl_fair"] == 0.0
    assert record.il_limit_eff == 0.5
    assert record.for_mechanism(MechanismKind.INDIVIDUAL_LOTTERY) == (None, None)
    assert bounds(make_instance(3, [1, 3, 3]), ell=2).il_limit_eff is None
    assert record.for_mechanism(MechanismKind.FAIR_GROUP_LOTTERY)[1] == 1.0


def test_hitting_time_examples():
    record = hitting_time_check([1, 1, 1, 1], 3)
    assert record.e_tau == pytest.approx(3)
    assert (record.lower, record.upper) == (3, 3)

    record = hitting_time_check([1, 2], 2, pairs=[(1, 1)])
    assert record.e_tau == pytest.approx(1.5)
    assert (record.lower, record.upper) == (1, 2)
    assert record.subadditivity_pairs == [(1, 1, True)]
    assert record.passed

    with pytest.raises(InsufficientTotalError):
        hitting_time_check([1, 2], 4)


def test_hitting_time_monte_carlo():
    record = hitting_time_check([1, 2, 3, 1, 4], 6, EvaluationMethod.MONTE_CARLO, seed=2, replicas=20000, pairs=all_pairs(11))
    exact = hitting_time_check([1, 2, 3, 1, 4], 6)
    assert abs(record.e_tau - exact.e_tau) <= 4 * record.standard_error
    assert record.passed
    with pytest.raises(ParamViolationError):
        hitting_time_check([1, 2], 2, EvaluationMethod.MONTE_CARLO)


def test_threshold_examples():
    ctx = ThresholdContext(3, 1, [(2, 1.0), (2, 5.0)])
    assert threshold_T(ctx) == 5.0
    assert ctx.T == 5.0

    assert threshold_T(ThresholdContext(3, 2, [])) == math.inf
    assert group_succeeds(ThresholdContext(3, 2, []), [1, 1], [0.5, 7.0])

    impossible = ThresholdContext(1, 2, [])
    assert threshold_T(impossible) == 0.0
    assert not group_succeeds(impossible, [2, 2], [0.1, 0.2])


@settings(max_examples=300)
@given(st.integers(1, 10), st.integers(1, 4), st.integers(0, 5), st.integers(0, 2 ** 32))
def test_threshold_matches_allocation(k, group_size, outsiders, seed):
    stream = make_stream(seed)
    requests = stream.integers(1, min(4, k) + 1, size=group_size + outsiders)
    scores = requests * stream.standard_exponential(requests.size)
    ctx = ThresholdContext(k, group_size, list(zip(requests[group_size:].tolist(), scores[group_size:].tolist())))
    predicted = group_succeeds(ctx, requests[:group_size].tolist(), scores[:group_size].tolist())
    x = allocate_individual(np.argsort(scores, kind="stable"), requests, k).x
    assert predicted == (x[:group_size].sum() >= group_size)


def test_enumerate_br():
    classes = {s: {r: [x.requests for x in enumerate_br(s, r)] for r in range(s)} for s in range(1, 7)}
    assert (4, 4, 4, 4) in classes[4][0]
    assert (2, 2, 2, 2) in classes[4][1]
    assert (1, 1) in classes[2][1]
    assert BrStrategy(4, 1, (2, 2, 2, 2)).reciprocal_sum == 2
    for s in classes:
        for r, strategies in classes[s].items():
            for requests in strategies:
                assert sum(Fraction(1, a) for a in requests) <= r + 1
    with pytest.raises(TooLargeError):
        enumerate_br(7, 0)
    with pytest.raises(ParamViolationError):
        enumerate_br(3, 3)


def test_conjecture_probe():
    record = conjecture_probe(4, (4, 4, 4, 4), 0.8, 5000, 1)
    assert record.p_exact == pytest.approx(1 - math.exp(-0.8), abs=1e-12)
    assert record.p_group_request == pytest.approx(1 - math.exp(-0.8))

    low = conjecture_probe(4, (2, 2, 2, 2), 1.0, 20000, 2)
    assert low.p_exact == pytest.approx(0.5135, abs=1e-4)
    assert low.p_success <= low.p_group_request + 3 * low.standard_error
    assert abs(low.p_success - low.p_exact) <= 4 * low.standard_error

    high = conjecture_probe(4, (2, 2, 2, 2), 3.0, 20000, 3)
    assert high.p_exact > high.p_group_request
    assert high.beats_group_request

    with pytest.raises(DomainError):
        conjecture_probe(2, (1, 1), math.inf, 10, 0)


def test_poisson_tail():
    record = poisson_tail_bound(1, 1)
    assert record.bound == pytest.approx(1 - math.exp(-1))
    assert record.exact == pytest.approx(1 - math.exp(-1))

    record = poisson_tail_bound(0, 1)
    assert (record.bound, record.exact) == (0.0, 0.0)

    record = poisson_tail_bound(1, 2)
    assert record.bound == pytest.approx(0.3935, abs=1e-4)
    assert record.exact == pytest.approx(1 - 2 * math.exp(-1))
    assert record.bound >= record.exact

    with pytest.raises(DomainError):
        poisson_tail_bound(2, 1)


def test_spl_example_crossover():
    for m in range(4, 14):
        assert not spl_example_closed_forms(m).deviation_gains
    for m in range(14, 21):
        record = spl_example_closed_forms(m)
        assert record.deviation_gains
        assert record.u_group_request == 1 - Fraction(1, m)


def test_spl_example_matches_enumeration():
    inst = generate_named(NamedConstruction(ConstructionTag.SPL_EXAMPLE, {"n": 7}))
    record = spl_example_closed_forms(4)
    twos = ActionProfile(ActionKind.TICKET_REQUEST, [2, 2, 2, 2, 1, 1, 1])
    assert exact_enumerate(MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, inst).values[0] == pytest.approx(float(record.u_group_request))
    assert exact_enumerate(MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, inst, twos).values[0] == pytest.approx(float(record.u_all_twos))


def test_spl_tight_closed_form():
    assert abs(spl_tight_closed_form(200, 100, 0.5) - g(0.5)) <= 0.02
    assert spl_tight_closed_form(10, 3, "1/10") == pytest.approx(1.0)
    with pytest.raises(ParamViolationError):
        spl_tight_closed_form(3, 2, 0.5)


def test_proof_bounds():
    single, couple = gl_tight_closed_form(2, 3)
    assert exact_gl_dp(make_instance(3, [1, 2, 2])).values == pytest.approx([float(single), float(couple), float(couple)])

    efficiency, fairness = il_bad_proof_bounds(24, 576, 0.25)
    assert efficiency == pytest.approx(23 / 576 + 1 / 6)
    assert fairness == pytest.approx(0.25)
    assert il_bad_proof_bounds(8, 64, 0.25)[0] > il_bad_proof_bounds(16, 256, 0.25)[0] > efficiency

    small = il_limit_bad_proof_bounds(2, 50, 4)
    large = il_limit_bad_proof_bounds(2, 500, 4)
    assert large[0] < small[0] and large[1] < small[1]

    assert badnews_efficiency_ceiling(10, 3, 2, 0.5) < 1


def test_best_response_group_lottery():
    inst = make_instance(2, [2, 1])
    record = best_response_search(MechanismKind.GROUP_LOTTERY, inst, 0)
    pair = frozenset({0, 1})
    split = [frozenset({0}), frozenset({1})]
    assert record.group_request_utility == pytest.approx(0.5)
    assert record.best_utility == pytest.approx(0.5)
    assert record.best_actions == [[pair, pair]]
    assert dict((tuple(actions), u) for actions, u in record.utilities)[tuple(split)] == pytest.approx(1 / 3)


def test_best_response_individual_lottery():
    inst = make_instance(2, [2, 1])
    assert request_universe(inst, 0) == [[1, 1], [1, 2], [2, 2]]
    record = best_response_search(MechanismKind.INDIVIDUAL_LOTTERY, inst, 0)
    assert record.best_actions == [[2, 2]]
    assert record.best_utility == pytest.approx(2 / 3)
    utilities = dict((tuple(actions), u) for actions, u in record.utilities)
    assert utilities[(1, 1)] == pytest.approx(1 / 3)
    assert utilities[(1, 2)] == pytest.approx(1 / 2)


def test_best_response_weighted_example():
    inst = generate_named(NamedConstruction(ConstructionTag.SPL_EXAMPLE, {"n": 17}))
    record = best_response_search(MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, inst, 0,
                                  action_universe=[[4, 4, 4, 4], [2, 2, 2, 2]])
    closed = spl_example_closed_forms(14)
    assert record.best_actions == [[2, 2, 2, 2]]
    assert record.group_request_utility == pytest.approx(float(closed.u_group_request), abs=1e-9)
    assert record.best_utility == pytest.approx(float(closed.u_all_twos), abs=1e-9)


def test_individual_lottery_requests_at_group_size_tie():
    inst = make_instance(3, [2, 1, 1, 1])
    universe = request_universe(inst, 0)
    assert [3, 3] in universe and len(universe) == 6
    record = best_response_search(MechanismKind.INDIVIDUAL_LOTTERY, inst, 0)
    assert record.best_actions == [[2, 2], [2, 3], [3, 3]]
    assert record.best_utility == pytest.approx(record.group_request_utility)
    assert request_universe(inst, 0, cap=2) == [[1, 1], [1, 2], [2, 2]]


def test_individual_lottery_degrades():
    estimates = []
    for r in (8, 16, 24):
        inst = generate_named(NamedConstruction(ConstructionTag.IL_BAD, {"r": r, "s": r * r, "alpha": 0.25}))
        u = monte_carlo(MechanismKind.INDIVIDUAL_LOTTERY, inst, None, 400, r)
        estimates.append((utilization(u, inst), u.utilization_se))
        efficiency, fairness = il_bad_proof_bounds(r, r * r, 0.25)
        assert estimates[-1][0] <= efficiency + 3 * u.utilization_se + 1e-12
    for (higher, higher_se), (lower, lower_se) in zip(estimates, estimates[1:]):
        assert higher - 3 * higher_se > lower + 3 * lower_se
    assert estimates[-1][0] + 3 * estimates[-1][1] <= 0.30
    assert fairness_ratio(u) <= 0.30

    gl = monte_carlo(MechanismKind.GROUP_LOTTERY, inst, None, 100, 24)
    assert utilization(gl, inst) - 3 * gl.utilization_se >= 0.80


def test_spl_example_monte_carlo():
    inst = generate_named(NamedConstruction(ConstructionTag.SPL_EXAMPLE, {"n": 17}))
    closed = spl_example_closed_forms(14)
    truthful = monte_carlo(MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, inst, None, 20000, 5)
    twos = ActionProfile(ActionKind.TICKET_REQUEST, [2, 2, 2, 2] + [1] * 13)
    deviated = monte_carlo(MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, inst, twos, 20000, 6)
    assert abs(truthful.values[0] - float(closed.u_group_request)) <= 4 * truthful.standard_errors[0]
    assert abs(deviated.values[0] - float(closed.u_all_twos)) <= 4 * deviated.standard_errors[0]


def test_spl_tight_monte_carlo():
    inst = generate_named(NamedConstruction(ConstructionTag.SPL_TIGHT, {"m": 200, "s": 100, "alpha": 0.5}))
    u = monte_carlo(MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, inst, None, 200, 9)
    estimate = utilization(u, inst)
    assert abs(estimate - spl_tight_closed_form(200, 100, 0.5)) <= 0.02
    assert abs(estimate - g(0.5)) <= 0.03


@settings(max_examples=20, deadline=None)
@given(st.sampled_from([2, 3]), st.data())
def test_limited_individual_lottery_guarantees(ell, data):
    sizes = data.draw(st.lists(st.integers(1, ell), min_size=2, max_size=5))
    n = sum(sizes)
    inst = make_instance(data.draw(st.integers(max(sizes), n - 1)), sizes)
    u = exact_utilities(MechanismKind.INDIVIDUAL_LOTTERY_LIMIT, inst, limit=ell)
    assert bounds(inst, ell).il_limit_eff == pytest.approx(1 / ell)
    assert utilization(u, inst) >= 1 / ell - 1e-12
    assert fairness_ratio(u) >= 1 / ell - 1e-12


def test_limited_individual_lottery_degrades():
    results = []
    for m in (20, 200):
        inst = generate_named(NamedConstruction(ConstructionTag.IL_LIMIT_BAD, {"ell": 2, "m": m, "k": 4}))
        u = monte_carlo(MechanismKind.INDIVIDUAL_LOTTERY_LIMIT, inst, None, 10000, m, limit=2)
        efficiency, _ = il_limit_bad_proof_bounds(2, m, 4)
        assert utilization(u, inst) <= efficiency + 3 * u.utilization_se
        results.append((utilization(u, inst), u.utilization_se, fairness_ratio(u.class_values(inst).values())))
    (small, small_se, small_fair), (large, large_se, large_fair) = results
    assert small - 3 * small_se > large + 3 * large_se
    assert small_fair > large_fair
