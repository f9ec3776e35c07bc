import collections
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st
from scipy.stats import chisquare

from lottery import *
from lottery.mechanisms import (
    valid_groups, allocate_group_lottery, allocate_individual, sample_uniform_order, sample_weighted_order,
    insertion_order, sample_coupled_triple, coupled_successes, make_stream, derive_stream, derive_seed
)
from lottery.exceptions import InsufficientTotalError, ActionOutOfRangeError


def test_tau():
    assert tau(5, (2, 2, 2)) == 3
    assert tau(1, (3, 1)) == 1
    assert tau(4, (1, 2, 2)) == 3
    assert tau(4, (2, 2, 1)) == 2
    with pytest.raises(InsufficientTotalError):
        tau(6, (1, 2))


@given(st.lists(st.integers(1, 5), min_size=1, max_size=12), st.data())
def test_tau_is_first_crossing(sizes, data):
    c = data.draw(st.integers(1, sum(sizes)))
    index = tau(c, sizes)
    assert sum(sizes[:index]) >= c
    assert sum(sizes[:index - 1]) < c


def test_valid_groups():
    declared = lambda *sets: ActionProfile(ActionKind.GROUP_DECLARATION, [set(s) for s in sets])
    assert valid_groups(declared({0, 1}, {0, 1})) == [(0, 1)]
    assert valid_groups(declared({0, 1}, {1})) == [(1,)]
    assert valid_groups(declared({0, 5}, {1})) == [(1,)]

    inst = make_instance(3, [1, 2, 2])
    truthful = ActionProfile.group_request(inst, ActionKind.GROUP_DECLARATION)
    assert valid_groups(truthful) == [(0,), (1, 2), (3, 4)]


def test_allocate_group_lottery():
    inst = make_instance(4, [2, 3])
    allocation = allocate_group_lottery([(0, 1), (2, 3, 4)], 4, inst.n)
    assert allocation.x.tolist() == [1, 1, 0, 0, 0]
    assert allocation.wasted(inst) == 2

    inst = make_instance(4, [3, 2])
    allocation = allocate_group_lottery([(0, 1, 2), (3, 4)], 4, inst.n)
    assert allocation.successes(inst).tolist() == [True, False]
    assert allocation.successful_agents(inst) / inst.k == 0.75

    everyone = allocate_group_lottery([(1,), (0,)], 5, 2)
    assert everyone.x.tolist() == [1, 1]


@given(st.lists(st.integers(1, 4), min_size=1, max_size=8), st.integers(1, 20), st.randoms())
def test_group_lottery_all_or_nothing(sizes, k, random):
    groups, start = [], 0
    for size in sizes:
        groups.append(tuple(range(start, start + size)))
        start += size
    random.shuffle(groups)
    allocation = allocate_group_lottery(groups, k, start)
    assert allocation.allocated <= k
    for group in groups:
        assert len(set(allocation.x[list(group)].tolist())) == 1


def test_allocate_individual():
    assert allocate_individual([0, 1], np.array([2, 2]), 3).x.tolist() == [2, 1]
    assert allocate_individual([0, 1], np.array([3, 1]), 2).x.tolist() == [2, 0]
    assert allocate_individual([0, 1], np.array([3, 1]), 4).x.tolist() == [3, 1]
    assert allocate_individual([1, 0], np.array([2, 2]), 3).x.tolist() == [1, 2]


@given(st.lists(st.integers(1, 6), min_size=1, max_size=10), st.integers(1, 30), st.randoms())
def test_individual_allocation_feasible(requests, k, random):
    order = list(range(len(requests)))
    random.shuffle(order)
    x = allocate_individual(order, np.array(requests), k).x
    assert x.sum() == min(k, sum(requests))
    assert np.all((0 <= x) & (x <= np.array(requests)))


def test_uniform_order_single():
    stream = make_stream(1)
    assert all(sample_uniform_order([5], stream).as_tuple() == (5,) for _ in range(10))
    with pytest.raises(ValueError):
        sample_uniform_order([], stream)


@given(st.lists(st.integers(0, 50), min_size=1, max_size=10, unique=True), st.data(), st.integers(0, 2 ** 32))
def test_insertion_order_is_permutation(elements, data, seed):
    subset = data.draw(st.lists(st.sampled_from(elements), unique=True))
    order = insertion_order(elements, subset, make_stream(seed))
    assert sorted(order.as_tuple()) == sorted(elements)


def test_weighted_order_first_element():
    stream = make_stream(4)
    draws = 20000
    firsts = collections.Counter(sample_weighted_order([1, 2, 2], stream).elements[0] for _ in range(draws))
    observed = [firsts[0], firsts[1], firsts[2]]
    assert chisquare(observed, [draws / 2, draws / 4, draws / 4]).pvalue > 1e-3


def test_weighted_order_scores_sorted():
    order = sample_weighted_order([3, 1, 2, 2], make_stream(9), elements=[10, 11, 12, 13])
    assert np.all(np.diff(order.scores) >= 0)
    assert sorted(order.as_tuple()) == [10, 11, 12, 13]


def test_streams_reproducible():
    assert derive_seed(5, 3) == derive_seed(5, 3)
    assert derive_seed(5, 3) != derive_seed(5, 4)
    assert np.array_equal(derive_stream(5, 3).random(4), derive_stream(5, 3).random(4))


def test_fair_lottery_examples():
    lottery = build_fair_lottery(make_instance(1, [1, 1]))
    assert lottery.marginals() == [Fraction(1, 2)] * 2

    lottery = build_fair_lottery(make_instance(2, [1, 2]))
    assert lottery.marginals() == [Fraction(1, 3)] * 2

    inst = make_instance(4, [2, 2, 2])
    lottery = build_fair_lottery(inst)
    assert lottery.u_star == Fraction(1, 2)
    assert lottery.marginals() == [Fraction(1, 2)] * 3
    assert sum(weight for _, weight in lottery.support) == 1
    assert len(lottery.support) <= inst.m + 1
    assert all(sum(inst.group_sizes[g] for g in subset) <= inst.k for subset, _ in lottery.support)


def test_fair_lottery_zero_benchmark():
    lottery = build_fair_lottery(make_instance(1, [2, 1]))
    assert lottery.u_star == 0
    assert lottery.support == [((), Fraction(1))]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=2, max_size=10), st.data())
def test_fair_lottery_marginals(sizes, data):
    k = data.draw(st.integers(max(1, max(sizes) - 1), sum(sizes) - 1))
    inst = make_instance(k, sizes)
    lottery = build_fair_lottery(inst)
    assert all(marginal == inst.u_star for marginal in lottery.marginals())
    assert len(lottery.support) <= inst.m + 1


def test_profile_validation():
    inst = make_instance(3, [1, 2, 2])
    with pytest.raises(ActionOutOfRangeError):
        run_mechanism(MechanismKind.GROUP_LOTTERY, inst, ActionProfile.group_request(inst, ActionKind.TICKET_REQUEST), make_stream(0))
    with pytest.raises(ActionOutOfRangeError):
        make_mechanism(MechanismKind.INDIVIDUAL_LOTTERY_LIMIT, inst)
    with pytest.raises(ActionOutOfRangeError):
        make_mechanism(MechanismKind.INDIVIDUAL_LOTTERY, inst, ActionProfile(ActionKind.TICKET_REQUEST, [1, 0, 2, 2, 2]))
    with pytest.raises(ActionOutOfRangeError):
        make_mechanism(MechanismKind.INDIVIDUAL_LOTTERY, inst, ActionProfile(ActionKind.TICKET_REQUEST, [1, 4, 2, 2, 2]))


def test_limited_group_request():
    inst = make_instance(3, [1, 3])
    profile = ActionProfile.group_request(inst, ActionKind.TICKET_REQUEST, limit=2)
    assert profile.actions == [1, 2, 2, 2]
    assert ActionProfile.from_json(profile.to_json()) == profile


def test_mechanisms_feasible():
    inst = make_instance(5, [1, 2, 3, 2])
    stream = make_stream(12)
    for kind in MechanismKind:
        limit = 2 if kind == MechanismKind.INDIVIDUAL_LOTTERY_LIMIT else None
        for _ in range(50):
            allocation = run_mechanism(kind, inst, None, stream, limit)
            assert allocation.allocated <= inst.k
            assert allocation.x.size == inst.n


def test_coupled_triple():
    inst = make_instance(3, [1, 2, 2])
    stream = make_stream(21)
    for _ in range(100):
        triple = sample_coupled_triple(inst, stream)
        assert sorted(triple.sigma_iw.tolist()) == list(range(inst.n))
        assert sorted(triple.sigma_gl.tolist()) == list(range(inst.m))
        assert np.array_equal(triple.sigma_gr, inst.group_of[triple.master])
        assert triple.master[-1] not in triple.master[:-1]

        gr, iw, gl = coupled_successes(inst, triple)
        assert np.all(gr <= iw) and np.all(iw <= gl)


def test_group_larger_than_tickets():
    inst = make_instance(2, [3, 1, 1])
    assert ActionProfile.group_request(inst, ActionKind.TICKET_REQUEST).actions == [2, 2, 2, 1, 1]
    assert ActionProfile.group_request(inst, ActionKind.TICKET_REQUEST, limit=5).actions == [2, 2, 2, 1, 1]
    stream = make_stream(4)
    for kind, limit in ((MechanismKind.INDIVIDUAL_LOTTERY, None), (MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY, None),
                        (MechanismKind.INDIVIDUAL_LOTTERY_LIMIT, 5)):
        for _ in range(30):
            allocation = run_mechanism(kind, inst, None, stream, limit)
            assert not allocation.successes(inst)[0]
            assert allocation.allocated == inst.k


@given(st.lists(st.integers(1, 4), min_size=2, max_size=6), st.data())
def test_individual_lottery_monotone_in_requests(sizes, data):
    n = sum(sizes)
    k = data.draw(st.integers(1, n - 1))
    inst = make_instance(k, sizes)
    requests = np.array(data.draw(st.lists(st.integers(1, k), min_size=n, max_size=n)))
    order = data.draw(st.permutations(range(n)))
    agent = data.draw(st.integers(0, n - 1))
    raised = requests.copy()
    raised[agent] = data.draw(st.integers(int(requests[agent]), k))

    before = allocate_individual(order, requests, k).successes(inst)
    after = allocate_individual(order, raised, k).successes(inst)
    others = np.arange(inst.m) != inst.group_of[agent]
    assert np.all(after[others] <= before[others])


@given(st.lists(st.integers(1, 5), min_size=2, max_size=10), st.data(), st.randoms())
def test_group_lottery_waste_bounded(sizes, data, random):
    n = sum(sizes)
    k = data.draw(st.integers(1, n - 1))
    inst = make_instance(k, sizes)
    groups = [tuple(inst.members(g)) for g in range(inst.m)]
    random.shuffle(groups)
    allocation = allocate_group_lottery(groups, k, n)
    assert k - allocation.allocated <= inst.s_max - 1
