import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from lottery import *
from lottery.evaluation import (
    exact_enumerate, exact_gl_dp, exact_subset_dp, expected_hitting_time, expected_hitting_times,
    exact_envy, envy_from_distribution, envy_matrix, write_csv, REPORT_COLUMNS
)
from lottery.exceptions import InsufficientTotalError, TooLargeError

GL_TIGHT_2_3 = make_instance(3, [1, 2, 2])


def test_gl_tight_enumeration():
    u = exact_enumerate(MechanismKind.GROUP_LOTTERY, GL_TIGHT_2_3)
    assert u.values == pytest.approx([2 / 3, 1 / 2, 1 / 2], abs=1e-12)
    assert utilization(u, GL_TIGHT_2_3) == pytest.approx(8 / 9)
    assert fairness_ratio(u) == pytest.approx(0.75)


def test_gl_dp_matches_enumeration():
    for inst in (GL_TIGHT_2_3, make_instance(5, [1, 1, 2, 2, 3]), make_instance(4, [3, 3, 1, 2, 1, 1])):
        dp = exact_gl_dp(inst)
        enumerated = exact_enumerate(MechanismKind.GROUP_LOTTERY, inst)
        assert dp.method == EvaluationMethod.EXACT_DP
        assert dp.values == pytest.approx(enumerated.values, abs=1e-9)


def test_gl_tight_large_ratio():
    u = exact_gl_dp(generate_named(NamedConstruction(ConstructionTag.GL_TIGHT, {"r": 3, "m": 500})))
    assert u.values[0] == pytest.approx(3 / 500)
    assert abs(u.values[1] / u.values[0] - 2 / 3) <= 0.005


def test_small_individual_examples():
    u = exact_enumerate(MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, make_instance(2, [1, 2]))
    assert u.values == pytest.approx([0.5, 0.5], abs=1e-12)
    u = exact_enumerate(MechanismKind.INDIVIDUAL_LOTTERY, make_instance(1, [1, 1]))
    assert u.values == pytest.approx([0.5, 0.5], abs=1e-12)


def test_subset_dp_matches_enumeration():
    inst = make_instance(4, [1, 2, 3])
    for kind, limit in ((MechanismKind.INDIVIDUAL_LOTTERY, None), (MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, None),
                        (MechanismKind.INDIVIDUAL_LOTTERY_LIMIT, 2)):
        dp = exact_subset_dp(kind, inst, limit=limit)
        enumerated = exact_enumerate(kind, inst, limit=limit)
        assert dp.values == pytest.approx(enumerated.values, abs=1e-9)

    profile = ActionProfile(ActionKind.TICKET_REQUEST, [1, 1, 2, 3, 1, 2])
    dp = exact_subset_dp(MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, inst, profile)
    enumerated = exact_enumerate(MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, inst, profile)
    assert dp.values == pytest.approx(enumerated.values, abs=1e-9)


def test_dominance_exact():
    for inst in (GL_TIGHT_2_3, make_instance(4, [1, 2, 3])):
        glr = exact_utilities(MechanismKind.GROUP_LOTTERY_REPLACEMENT, inst).values
        iw = exact_utilities(MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, inst).values
        gl = exact_utilities(MechanismKind.GROUP_LOTTERY, inst).values
        assert np.all(glr <= iw + 1e-12)
        assert np.all(iw <= gl + 1e-12)


def test_method_selection():
    big = make_instance(10, [1, 2] * 6)
    assert exact_utilities(MechanismKind.GROUP_LOTTERY, big).method == EvaluationMethod.EXACT_DP
    assert exact_utilities(MechanismKind.FAIR_GROUP_LOTTERY, big).method == EvaluationMethod.EXACT_LOTTERY
    assert exact_utilities(MechanismKind.INDIVIDUAL_LOTTERY, make_instance(5, [1, 2] * 3)).method == EvaluationMethod.EXACT_SUBSET_DP
    assert exact_utilities(MechanismKind.GROUP_LOTTERY, GL_TIGHT_2_3).method == EvaluationMethod.EXACT_ENUM
    with pytest.raises(TooLargeError):
        exact_utilities(MechanismKind.GROUP_LOTTERY_REPLACEMENT, big)


def test_fair_lottery_utilization():
    for inst in (make_instance(4, [2, 2, 2]), make_instance(10, [1, 2] * 6), make_instance(7, [4, 1, 3, 2, 2])):
        u = exact_utilities(MechanismKind.FAIR_GROUP_LOTTERY, inst)
        assert u.values == pytest.approx([float(inst.u_star)] * inst.m, abs=1e-12)
        assert utilization(u, inst) == pytest.approx(1 - (inst.s_max - 1) / inst.k, abs=1e-9)


def test_hitting_times():
    assert expected_hitting_time(3, {1: 5}) == pytest.approx(3)
    assert expected_hitting_time(2, {1: 1, 2: 1}) == pytest.approx(1.5)
    assert expected_hitting_times({1: 1, 2: 1}) == pytest.approx([0, 1, 1.5, 2])
    with pytest.raises(InsufficientTotalError):
        expected_hitting_time(4, {1: 1, 2: 1})


def test_monte_carlo_matches_exact():
    exact = exact_enumerate(MechanismKind.GROUP_LOTTERY, GL_TIGHT_2_3)
    u = monte_carlo(MechanismKind.GROUP_LOTTERY, GL_TIGHT_2_3, None, 20000, 1)
    assert u.method == EvaluationMethod.MONTE_CARLO
    assert np.all(np.abs(u.values - exact.values) <= 4 * u.standard_errors + 1e-12)


def test_monte_carlo_single_replica():
    u = monte_carlo(MechanismKind.INDIVIDUAL_LOTTERY, GL_TIGHT_2_3, None, 1, 8)
    assert set(u.values.tolist()) <= {0.0, 1.0}


def test_monte_carlo_worker_count():
    one = monte_carlo(MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, GL_TIGHT_2_3, None, 300, 42, workers=1)
    two = monte_carlo(MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, GL_TIGHT_2_3, None, 300, 42, workers=2)
    assert np.array_equal(one.values, two.values)
    assert one.utilization_se == two.utilization_se


def test_fairness_conventions():
    assert fairness_ratio([0.0, 0.0]) == 1.0
    assert fairness_ratio([0.0, 0.4]) == 0.0
    assert fairness_ratio([0.3, 0.3]) == 1.0
    with pytest.raises(ValueError):
        fairness_ratio([])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_fairness_in_unit_interval(values):
    assert 0.0 <= fairness_ratio(values) <= 1.0


def test_group_lottery_envy_free():
    report = exact_envy(MechanismKind.GROUP_LOTTERY, GL_TIGHT_2_3)
    assert report.margin <= 1e-12
    assert report.full_matrix(GL_TIGHT_2_3).shape == (3, 3)


def test_fair_but_envious():
    epsilon = 0.1
    report = envy_from_distribution([1, 2], {(1, 1): epsilon, (0, 2): epsilon, (0, 1): 1 - 2 * epsilon})
    assert report.own.tolist() == pytest.approx([epsilon, epsilon])
    assert report.margin == pytest.approx(1 - epsilon)
    assert report.margin >= 1 - 2 * epsilon


def test_envy_monte_carlo():
    report = envy_matrix(MechanismKind.GROUP_LOTTERY, GL_TIGHT_2_3, None, 5000, 3)
    assert report.margin_se > 0
    # the two couples never both win, so their estimates move in opposite directions
    assert report.margin <= 0.05


def test_report_rows():
    u = exact_utilities(MechanismKind.GROUP_LOTTERY, GL_TIGHT_2_3)
    report = OutcomeReport("gl_tight", MechanismKind.GROUP_LOTTERY, GL_TIGHT_2_3, u, instance_stats(GL_TIGHT_2_3),
                           bound_eff=2 / 3, bound_fair=1 / 3)
    rows = report.rows()
    assert [row["size_class"] for row in rows] == [1, 2]
    assert rows[0]["u_mean"] == "0.6666666667"
    assert rows[1]["u_mean"] == "0.5"
    assert rows[0]["fairness_ratio"] == "0.75"
    assert rows[0]["bound_fair"] == "0.3333333333"
    assert rows[0]["fair_check"] == "PASS" and rows[0]["eff_check"] == "PASS"
    assert report.passed

    text = write_csv(rows)
    lines = text.split("\n")
    assert lines[0] == ",".join(REPORT_COLUMNS)
    assert len(lines) == 4 and lines[-1] == ""


def test_report_fails_bound():
    u = exact_utilities(MechanismKind.GROUP_LOTTERY, GL_TIGHT_2_3)
    report = OutcomeReport("gl_tight", MechanismKind.GROUP_LOTTERY, GL_TIGHT_2_3, u, instance_stats(GL_TIGHT_2_3),
                           bound_eff=0.95, bound_fair=None)
    assert report.checks() == (False, None)
    assert not report.passed
    assert report.rows()[0]["fair_check"] == ""


def random_small_instances(count: int, seed: int, max_agents: int = 7) -> list[Instance]:
    rng = np.random.default_rng(seed)
    instances = []
    while len(instances) < count:
        sizes = rng.integers(1, 4, size=int(rng.integers(2, 5))).tolist()
        n = sum(sizes)
        if n > max_agents:
            continue
        instances.append(make_instance(int(rng.integers(max(sizes), n)), sizes))
    return instances


ORACLE_INSTANCES = random_small_instances(50, 2024)
ORACLE_REPLICAS = 1000


@pytest.mark.parametrize("kind", list(MechanismKind))
def test_monte_carlo_agrees_with_enumeration(kind):
    limit = 2 if kind == MechanismKind.INDIVIDUAL_LOTTERY_LIMIT else None
    for index, inst in enumerate(ORACLE_INSTANCES):
        exact = exact_enumerate(kind, inst, limit=limit).values
        u = monte_carlo(kind, inst, None, ORACLE_REPLICAS, index, limit=limit)
        tolerance = 4.5 * np.sqrt(exact * (1 - exact) / ORACLE_REPLICAS) + 2 / ORACLE_REPLICAS
        assert np.all(np.abs(u.values - exact) <= tolerance), (inst, u.values, exact)


def test_dynamic_programs_match_enumeration_on_random_instances():
    for inst in ORACLE_INSTANCES:
        assert exact_gl_dp(inst).values == pytest.approx(exact_enumerate(MechanismKind.GROUP_LOTTERY, inst).values, abs=1e-9)
        for kind, limit in ((MechanismKind.INDIVIDUAL_LOTTERY, None), (MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, None),
                            (MechanismKind.INDIVIDUAL_LOTTERY_LIMIT, 2)):
            dp = exact_subset_dp(kind, inst, limit=limit)
            assert dp.values == pytest.approx(exact_enumerate(kind, inst, limit=limit).values, abs=1e-9)


def draw_instance(data, sizes: list[int]) -> Instance:
    return make_instance(data.draw(st.integers(max(sizes), sum(sizes) - 1)), sizes)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=2, max_size=4), st.data())
def test_group_lottery_meets_bounds(sizes, data):
    inst = draw_instance(data, sizes)
    record = bounds(inst)
    u = exact_utilities(MechanismKind.GROUP_LOTTERY, inst)
    assert utilization(u, inst) >= record.gl_eff - 1e-12
    assert fairness_ratio(u) >= record.gl_fair - 1e-12
    for g, small in enumerate(inst.group_sizes):
        for h, large in enumerate(inst.group_sizes):
            if small < large:
                assert u.values[g] >= u.values[h] - 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=2, max_size=4), st.data())
def test_weighted_lottery_meets_bounds(sizes, data):
    inst = draw_instance(data, sizes)
    record = bounds(inst)
    u = exact_utilities(MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, inst)
    assert utilization(u, inst) >= record.iw_eff - 1e-12
    assert fairness_ratio(u) >= record.iw_fair - 1e-12


def test_class_errors_follow_replicas():
    u = monte_carlo(MechanismKind.GROUP_LOTTERY, GL_TIGHT_2_3, None, 500, 1)
    errors = u.class_standard_errors(GL_TIGHT_2_3)
    # exactly one couple wins in every outcome
    assert errors[2] == 0.0
    assert errors[1] == pytest.approx(u.standard_errors[0] * math.sqrt(500 / 499))

    pooled = UtilityVector([0.5, 0.5, 0.5], EvaluationMethod.MONTE_CARLO, 100, [0.05, 0.04, 0.06])
    assert pooled.class_standard_errors(GL_TIGHT_2_3) == pytest.approx({1: 0.05, 2: 0.05})
    assert exact_gl_dp(GL_TIGHT_2_3).class_standard_errors(GL_TIGHT_2_3) == {1: 0.0, 2: 0.0}
