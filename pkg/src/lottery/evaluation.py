import csv
import io
import itertools
import logging
import math
import multiprocessing
import concurrent.futures
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.special import gammaln, logsumexp

from .enums import MechanismKind, EvaluationMethod, ActionKind
from .exceptions import (
    TooLargeError, StateSpaceTooLargeError, ActionOutOfRangeError, InsufficientTotalError, BoundViolationError
)
from .instance import Instance, InstanceStats
from .mechanisms import (
    ActionProfile, DrawOrder, Mechanism, OrderLaw, make_mechanism, derive_stream
)

logger = logging.getLogger(__name__)

GROUP_ENUMERATION_LIMIT = 8
AGENT_ENUMERATION_LIMIT = 8
SUBSET_DP_AGENT_LIMIT = 20
DP_STATE_LIMIT = 10 ** 7
CI_MULTIPLIER = 3
FLOAT_FORMAT = ".10g"

_INDIVIDUAL_KINDS = (
    MechanismKind.INDIVIDUAL_LOTTERY,
    MechanismKind.INDIVIDUAL_LOTTERY_LIMIT,
    MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY,
)


class UtilityVector:
    """
    Per-group success probabilities and how they were obtained.
    Members of a group share their group's value.
    """
    def __init__(self, values, method: EvaluationMethod, replicas: int = None, standard_errors=None,
                 seed: int = None, utilization_se: float = None, class_errors: dict[int, float] = None):
        self.values = np.asarray(values, dtype=float)
        self.method = method
        self.replicas = replicas
        self.standard_errors = None if standard_errors is None else np.asarray(standard_errors, dtype=float)
        self.seed = seed
        self.utilization_se = utilization_se
        self.class_errors = class_errors

    def agent_values(self, inst: Instance) -> np.ndarray:
        return self.values[inst.group_of]

    def class_values(self, inst: Instance) -> dict[int, float]:
        """
        :return: The mean utility of each group size class.
        """
        return {s: float(self.values[inst.sizes == s].mean()) for s in inst.size_classes()}

    def class_standard_errors(self, inst: Instance) -> dict[int, float]:
        """
        Standard error of each size class mean, from the per-replica class success counts when the
        simulation kept them. Otherwise the mean of the groups' standard errors, which bounds the class
        error whatever the correlation between groups. Exact vectors report zero.
        """
        if self.class_errors is not None:
            return dict(self.class_errors)
        if self.standard_errors is None:
            return {s: 0.0 for s in inst.size_classes()}
        return {s: float(self.standard_errors[inst.sizes == s].mean()) for s in inst.size_classes()}

    def to_json(self) -> dict:
        json = {"values": self.values.tolist(), "method": self.method.value}
        if self.method == EvaluationMethod.MONTE_CARLO:
            json["replicas"] = self.replicas
            json["seed"] = self.seed
            json["standard_errors"] = self.standard_errors.tolist()
            json["utilization_se"] = self.utilization_se
        return json

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"UtilityVector({self.method.value}, {np.array2string(self.values, precision=4)})"


def _enumeration_guard(mech: Mechanism):
    if mech.action_kind == ActionKind.GROUP_DECLARATION:
        if len(mech.valid) > GROUP_ENUMERATION_LIMIT:
            raise TooLargeError(f"Enumeration needs at most {GROUP_ENUMERATION_LIMIT} valid groups, got {len(mech.valid)}.")
    elif mech.inst.n > AGENT_ENUMERATION_LIMIT:
        raise TooLargeError(f"Enumeration needs at most {AGENT_ENUMERATION_LIMIT} agents, got {mech.inst.n}.")


def weighted_order_probability(order: tuple[int, ...], inverse: np.ndarray) -> float:
    """
    Probability of a full order when each next element is drawn proportionally to ``inverse`` among those left.
    """
    remaining = math.fsum(inverse[list(order)])
    probability = 1.0
    for agent in order:
        probability *= inverse[agent] / remaining
        remaining -= inverse[agent]
    return probability


def _valid_contributions(mech: Mechanism) -> np.ndarray:
    # tickets each true group receives when a valid group is served once
    contributions = np.zeros((len(mech.valid), mech.inst.m), dtype=np.int64)
    for v, group in enumerate(mech.valid):
        for agent in group:
            contributions[v, mech.inst.group_of[agent]] += 1
    return contributions


def _replacement_distribution(mech: Mechanism) -> dict[tuple[int, ...], float]:
    inst = mech.inst
    if not mech.valid:
        return {(0,) * inst.m: 1.0}
    contributions = _valid_contributions(mech).tolist()
    valid_sizes = mech.valid_sizes.tolist()
    draw = 1.0 / len(mech.valid)
    cap = inst.s_max

    # states keyed by remaining tickets, processed from k down since every draw spends at least one ticket
    buckets: list[dict[tuple[int, ...], float]] = [dict() for _ in range(inst.k + 1)]
    buckets[inst.k][(0,) * inst.m] = 1.0
    outcomes: dict[tuple[int, ...], float] = {}
    states = 0
    for remaining in range(inst.k, -1, -1):
        for tickets, probability in buckets[remaining].items():
            states += 1
            if states > DP_STATE_LIMIT:
                raise StateSpaceTooLargeError(f"Replacement lottery state space exceeds {DP_STATE_LIMIT}.")
            for v, size in enumerate(valid_sizes):
                mass = probability * draw
                if size > remaining:
                    outcomes[tickets] = outcomes.get(tickets, 0.0) + mass
                    continue
                after = tuple(min(t + c, cap) for t, c in zip(tickets, contributions[v]))
                bucket = buckets[remaining - size]
                bucket[after] = bucket.get(after, 0.0) + mass
        buckets[remaining] = {}
    return outcomes


def outcome_distribution(kind: MechanismKind, inst: Instance, profile: ActionProfile = None,
                         limit: int = None) -> tuple[dict[tuple[int, ...], float], EvaluationMethod]:
    """
    Computes the exact joint law of the tickets each group ends up holding.
    Ticket counts under the replacement lottery are capped at ``s_max``, which preserves every success and envy event.
    :param kind: The mechanism.
    :param inst: The instance.
    :param profile: The action profile, or None for group request.
    :param limit: The request limit, for the limited Individual Lottery.
    :return: The distribution as ``{tickets per group: probability}`` and the method used.
    :raises TooLargeError: If the instance is beyond the enumeration limits.
    """
    mech = make_mechanism(kind, inst, profile, limit)
    if kind == MechanismKind.FAIR_GROUP_LOTTERY:
        result = {}
        for subset, weight in mech.lottery.support:
            order = DrawOrder(np.array(subset, dtype=np.int64), OrderLaw.UNIFORM_PERM)
            tickets = tuple(mech.allocate(order).group_tickets(inst).tolist())
            result[tickets] = result.get(tickets, 0.0) + float(weight)
        return result, EvaluationMethod.EXACT_LOTTERY

    _enumeration_guard(mech)
    if kind == MechanismKind.GROUP_LOTTERY_REPLACEMENT:
        return _replacement_distribution(mech), EvaluationMethod.EXACT_ENUM

    if mech.action_kind == ActionKind.GROUP_DECLARATION:
        elements = range(len(mech.valid))
    else:
        elements = range(inst.n)
    weighted = kind == MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY
    inverse = 1.0 / mech.requests if weighted else None
    uniform = 1.0 / math.factorial(len(elements))

    masses: dict[tuple[int, ...], list[float]] = {}
    for order in itertools.permutations(elements):
        probability = weighted_order_probability(order, inverse) if weighted else uniform
        allocation = mech.allocate(DrawOrder(np.array(order, dtype=np.int64), OrderLaw.UNIFORM_PERM))
        masses.setdefault(tuple(allocation.group_tickets(inst).tolist()), []).append(probability)

    result = {tickets: math.fsum(parts) for tickets, parts in masses.items()}
    total = math.fsum(result.values())
    if abs(total - 1.0) > 1e-12:
        raise BoundViolationError(f"Order probabilities sum to {total!r}, expected 1.")
    return result, EvaluationMethod.EXACT_ENUM


def _utilities_from_distribution(inst: Instance, distribution: dict[tuple[int, ...], float]) -> np.ndarray:
    values = np.zeros(inst.m)
    for tickets, probability in distribution.items():
        values += probability * (np.array(tickets) >= inst.sizes)
    return np.clip(values, 0.0, 1.0)


def exact_enumerate(kind: MechanismKind, inst: Instance, profile: ActionProfile = None, limit: int = None) -> UtilityVector:
    """
    Computes exact success probabilities by enumerating every order
    (weighted by the order law for the weighted lottery, by a forward recursion for the replacement lottery).
    :param kind: The mechanism.
    :param inst: The instance.
    :param profile: The action profile, or None for group request.
    :param limit: The request limit, for the limited Individual Lottery.
    :return: The exact UtilityVector.
    :raises TooLargeError: If there are more than 8 valid groups (group lotteries) or 8 agents (individual lotteries).
    """
    distribution, method = outcome_distribution(kind, inst, profile, limit)
    return UtilityVector(_utilities_from_distribution(inst, distribution), method)


def exact_subset_dp(kind: MechanismKind, inst: Instance, profile: ActionProfile = None, limit: int = None) -> UtilityVector:
    """
    Exact success probabilities of the individual lotteries by dynamic programming over the set of agents
    served while tickets remain. The order inside that set does not change the outcome.
    :param kind: IL, IL with limit, or the weighted IL.
    :param inst: The instance, with at most 20 agents.
    :param profile: The action profile, or None for group request.
    :param limit: The request limit, for the limited Individual Lottery.
    :return: The exact UtilityVector.
    :raises TooLargeError: If the instance has more than 20 agents.
    """
    if kind not in _INDIVIDUAL_KINDS:
        raise ActionOutOfRangeError(f"Subset dynamic programming covers the individual lotteries, not {kind.value}.")
    if inst.n > SUBSET_DP_AGENT_LIMIT:
        raise TooLargeError(f"Subset dynamic programming needs at most {SUBSET_DP_AGENT_LIMIT} agents, got {inst.n}.")
    mech = make_mechanism(kind, inst, profile, limit)
    a = mech.requests.tolist()
    n, k = inst.n, inst.k
    weights = [1.0 / value for value in a] if kind == MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY else [1.0] * n
    group_of = inst.group_of.tolist()
    members = [list(inst.members(g)) for g in range(inst.m)]
    sizes = inst.group_sizes

    success = np.zeros(inst.m)
    layer = {0: (1.0, 0)}
    while layer:
        following = {}
        for mask, (probability, spent) in layer.items():
            free = [j for j in range(n) if not mask >> j & 1]
            held = [sum(a[i] for i in members[g] if mask >> i & 1) for g in range(inst.m)]
            if not free:
                for g in range(inst.m):
                    if held[g] >= sizes[g]:
                        success[g] += probability
                continue

            left = k - spent
            total = math.fsum(weights[j] for j in free)
            ended = 0.0
            for j in free:
                mass = probability * weights[j] / total
                if a[j] < left:
                    grown = mask | 1 << j
                    previous = following.get(grown, (0.0, spent + a[j]))[0]
                    following[grown] = (previous + mass, spent + a[j])
                    continue
                # j exhausts the tickets; later agents get nothing
                ended += mass
                g = group_of[j]
                if held[g] < sizes[g] <= held[g] + left:
                    success[g] += mass
            if ended > 0:
                for g in range(inst.m):
                    if held[g] >= sizes[g]:
                        success[g] += ended
        layer = following

    return UtilityVector(np.clip(success, 0.0, 1.0), EvaluationMethod.EXACT_SUBSET_DP)


def _dp_guard(inst: Instance):
    states = 1
    for size, count in inst.size_counts().items():
        states *= min(count, inst.k // size) + 1
        if states > DP_STATE_LIMIT:
            raise StateSpaceTooLargeError(f"Hitting-time state space exceeds {DP_STATE_LIMIT}.")


def _log_subset_weights(size_counts: dict[int, int], horizon: int, width: int) -> np.ndarray:
    # log of the number of t-subsets with size sum w, for t <= horizon and w < width
    log_weights = np.full((horizon + 1, width), -np.inf)
    log_weights[0, 0] = 0.0
    for size, count in size_counts.items():
        taken = np.arange(min(count, horizon, (width - 1) // size) + 1)
        log_choose = gammaln(count + 1) - gammaln(taken + 1) - gammaln(count - taken + 1)
        updated = log_weights.copy()
        for x in taken[1:]:
            shifted = np.full_like(log_weights, -np.inf)
            shifted[x:, size * x:] = log_weights[:horizon + 1 - x, :width - size * x] + log_choose[x]
            updated = np.logaddexp(updated, shifted)
        log_weights = updated
    return log_weights


def _log_subset_counts(total: int, horizon: int) -> np.ndarray:
    t = np.arange(horizon + 1)
    return gammaln(total + 1) - gammaln(t + 1) - gammaln(total - t + 1)


def expected_hitting_time(c: int, size_counts: dict[int, int]) -> float:
    """
    ``E[tau(c, order)]`` for a uniform order over a multiset of sizes, as ``sum_t P(S_t < c)``.
    The law of the first ``t`` sizes is multivariate hypergeometric over the size classes; it is
    propagated in log space over (elements taken, sum) truncated at ``c``.
    :param c: The budget, at least 1.
    :param size_counts: Count of elements of each size.
    :return: The expected hitting index.
    :raises InsufficientTotalError: If all sizes together stay below ``c``.
    """
    if c <= 0:
        return 0.0
    if sum(size * count for size, count in size_counts.items()) < c:
        raise InsufficientTotalError(f"Sizes sum below the budget {c}.")
    total = sum(size_counts.values())
    horizon = min(total, c - 1)
    log_weights = _log_subset_weights(size_counts, horizon, c)
    below = np.exp(logsumexp(log_weights, axis=1) - _log_subset_counts(total, horizon))
    return float(np.minimum(below, 1.0).sum())


def expected_hitting_times(size_counts: dict[int, int]) -> np.ndarray:
    """
    ``E[tau(c, order)]`` for every budget ``c`` from 0 to the sum of all sizes, in one pass.
    :param size_counts: Count of elements of each size.
    :return: Array indexed by ``c``.
    """
    total = sum(size_counts.values())
    mass = sum(size * count for size, count in size_counts.items())
    log_weights = _log_subset_weights(size_counts, total, mass + 1)
    # column c-1 of the running sum holds log P(S_t < c) before normalising
    cumulative = np.logaddexp.accumulate(log_weights, axis=1)
    below = np.exp(cumulative - _log_subset_counts(total, total)[:, None])
    result = np.zeros(mass + 1)
    result[1:] = np.minimum(below, 1.0).sum(axis=0)[:mass]
    return result


def exact_gl_dp(inst: Instance) -> UtilityVector:
    """
    Exact Group Lottery utilities under group request: a group of size ``s`` succeeds with probability
    ``E[tau(k - s + 1, uniform order over the other groups)] / m``.
    :param inst: The instance.
    :return: The exact UtilityVector.
    :raises StateSpaceTooLargeError: If the composition state space exceeds 10^7.
    """
    _dp_guard(inst)
    counts = inst.size_counts()
    by_class = {}
    for size in counts:
        if size > inst.k:
            by_class[size] = 0.0
            continue
        others = dict(counts)
        others[size] -= 1
        by_class[size] = expected_hitting_time(inst.k - size + 1, others) / inst.m
    logger.debug("group lottery dp: classes=%s", by_class)
    return UtilityVector(np.clip([by_class[s] for s in inst.group_sizes], 0.0, 1.0), EvaluationMethod.EXACT_DP)


def _is_group_request(mech: Mechanism) -> bool:
    return mech.profile == ActionProfile.group_request(mech.inst, mech.action_kind, mech.limit)


def exact_utilities(kind: MechanismKind, inst: Instance, profile: ActionProfile = None, limit: int = None) -> UtilityVector:
    """
    Picks the cheapest exact method that applies: the fair lottery's support, enumeration,
    the hitting-time DP for the Group Lottery under group request, then subset DP for the individual lotteries.
    :raises TooLargeError: If no exact method applies; callers fall back to Monte Carlo.
    """
    mech = make_mechanism(kind, inst, profile, limit)
    if kind == MechanismKind.FAIR_GROUP_LOTTERY:
        return exact_enumerate(kind, inst, mech.profile, limit)
    try:
        return exact_enumerate(kind, inst, mech.profile, limit)
    except TooLargeError:
        pass
    if kind == MechanismKind.GROUP_LOTTERY and _is_group_request(mech):
        return exact_gl_dp(inst)
    if kind in _INDIVIDUAL_KINDS:
        return exact_subset_dp(kind, inst, mech.profile, limit)
    raise TooLargeError(f"No exact method for {kind.value} on {inst!r}.")


@dataclass
class SimulationTotals:
    """
    Integer sums over replicas; sums are order-independent so any split over workers gives the same totals.
    """
    replicas: int
    m: int
    classes: tuple[int, ...]
    successes: np.ndarray = None
    agents: int = 0
    agents_squared: int = 0
    reach: np.ndarray = None
    class_squares: np.ndarray = None

    def __post_init__(self):
        if self.class_squares is None:
            self.class_squares = np.zeros(len(self.classes), dtype=np.int64)
        if self.successes is None:
            self.successes = np.zeros(self.m, dtype=np.int64)
        if self.reach is None:
            self.reach = np.zeros((len(self.classes), self.m), dtype=np.int64)

    def add(self, other: 'SimulationTotals'):
        self.replicas += other.replicas
        self.successes += other.successes
        self.agents += other.agents
        self.agents_squared += other.agents_squared
        self.reach += other.reach
        self.class_squares += other.class_squares


def _simulate_block(mech: Mechanism, master_seed: int, start: int, stop: int, track_envy: bool) -> SimulationTotals:
    inst = mech.inst
    classes = tuple(inst.size_classes())
    thresholds = np.array(classes, dtype=np.int64)[:, None]
    class_of = np.searchsorted(classes, inst.sizes)
    totals = SimulationTotals(stop - start, inst.m, classes)
    for replica in range(start, stop):
        tickets = mech.draw(derive_stream(master_seed, replica)).group_tickets(inst)
        won = tickets >= inst.sizes
        totals.successes += won
        class_wins = np.bincount(class_of[won], minlength=len(classes))
        totals.class_squares += class_wins * class_wins
        agents = int(inst.sizes[won].sum())
        totals.agents += agents
        totals.agents_squared += agents * agents
        if track_envy:
            totals.reach += tickets[None, :] >= thresholds
    logger.info("replicas %d..%d done", start, stop - 1)
    return totals


def _blocks(replicas: int, workers: int) -> list[tuple[int, int]]:
    count = min(replicas, max(1, workers) * 4)
    edges = np.linspace(0, replicas, count + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def simulate(kind: MechanismKind, inst: Instance, profile: ActionProfile, replicas: int, master_seed: int,
             workers: int = 1, limit: int = None, track_envy: bool = False) -> SimulationTotals:
    """
    Runs ``replicas`` independent outcomes; replica ``r`` draws from the stream derived from ``(master_seed, r)``.
    :param workers: Worker processes; does not change the result.
    :param track_envy: Also count, per size class and group, how often the group holds at least that many tickets.
    :return: The summed totals.
    """
    if replicas < 1:
        raise ValueError(f"Need at least one replica, got {replicas}.")
    mech = make_mechanism(kind, inst, profile, limit)
    blocks = _blocks(replicas, workers)
    totals = SimulationTotals(0, inst.m, tuple(inst.size_classes()))

    if workers <= 1:
        for start, stop in blocks:
            totals.add(_simulate_block(mech, master_seed, start, stop, track_envy))
        return totals

    context = multiprocessing.get_context("spawn")
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers, mp_context=context) as pool:
        futures = [pool.submit(_simulate_block, mech, master_seed, start, stop, track_envy) for start, stop in blocks]
        for future in futures:
            totals.add(future.result())
    return totals


def class_errors_from_totals(totals: SimulationTotals, inst: Instance) -> dict[int, float]:
    """
    Treats each replica's success share within a size class as one observation.
    """
    replicas = totals.replicas
    errors = {}
    for index, s in enumerate(totals.classes):
        count = int((inst.sizes == s).sum())
        mean = float(totals.successes[inst.sizes == s].sum()) / (replicas * count)
        if replicas > 1:
            second = float(totals.class_squares[index]) / (replicas * count * count)
            variance = max(second - mean * mean, 0.0) * replicas / (replicas - 1)
        else:
            variance = 0.0
        errors[s] = math.sqrt(variance / replicas)
    return errors


def utility_from_totals(totals: SimulationTotals, inst: Instance, master_seed: int) -> UtilityVector:
    replicas = totals.replicas
    values = totals.successes / replicas
    errors = np.sqrt(values * (1 - values) / replicas)
    mean = totals.agents / replicas
    if replicas > 1:
        variance = max(totals.agents_squared / replicas - mean * mean, 0.0) * replicas / (replicas - 1)
    else:
        variance = 0.0
    utilization_se = math.sqrt(variance / replicas) / inst.k
    return UtilityVector(values, EvaluationMethod.MONTE_CARLO, replicas, errors, master_seed, utilization_se,
                         class_errors_from_totals(totals, inst))


def monte_carlo(kind: MechanismKind, inst: Instance, profile: ActionProfile, replicas: int, master_seed: int,
                workers: int = 1, limit: int = None) -> UtilityVector:
    """
    Estimates success probabilities over ``replicas`` independent outcomes, with standard errors ``sqrt(p(1-p)/R)``.
    The result is bit-identical for any worker count.
    :param kind: The mechanism.
    :param inst: The instance.
    :param profile: The action profile, or None for group request.
    :param replicas: The number of replicas R.
    :param master_seed: The master seed.
    :param workers: Worker processes.
    :param limit: The request limit, for the limited Individual Lottery.
    :return: The estimated UtilityVector.
    """
    totals = simulate(kind, inst, profile, replicas, master_seed, workers, limit)
    return utility_from_totals(totals, inst, master_seed)


def utilization(u: UtilityVector, inst: Instance) -> float:
    return float(np.dot(inst.sizes, u.values) / inst.k)


def fairness_ratio(u: UtilityVector | Iterable[float]) -> float:
    """
    ``min u / max u``; an all-zero vector counts as fair (1), a zero next to a positive value as 0.
    """
    values = u.values if isinstance(u, UtilityVector) else np.asarray(list(u), dtype=float)
    if values.size == 0:
        raise ValueError("Fairness of an empty utility vector is undefined.")
    top = float(values.max())
    if top <= 0:
        return 1.0
    return float(values.min()) / top


@dataclass
class EnvyReport:
    """
    ``matrix[c, G']`` is the probability that group ``G'`` holds at least ``classes[c]`` tickets;
    every group of size ``classes[c]`` shares that row of the full group-by-group envy matrix.
    """
    classes: tuple[int, ...]
    matrix: np.ndarray
    own: np.ndarray
    margin: float
    margin_se: float = 0.0
    method: EvaluationMethod = EvaluationMethod.MONTE_CARLO

    def full_matrix(self, inst: Instance) -> np.ndarray:
        rows = {size: index for index, size in enumerate(self.classes)}
        return self.matrix[[rows[size] for size in inst.group_sizes]]


def _envy_margin(group_sizes: tuple[int, ...], classes: tuple[int, ...], matrix: np.ndarray, own: np.ndarray) -> tuple[float, int, int]:
    rows = {size: index for index, size in enumerate(classes)}
    best, best_g, best_other = -math.inf, 0, 0
    for g, size in enumerate(group_sizes):
        row = matrix[rows[size]]
        other = int(np.argmax(row))
        if row[other] - own[g] > best:
            best, best_g, best_other = float(row[other] - own[g]), g, other
    return best, best_g, best_other


def envy_from_totals(totals: SimulationTotals, inst: Instance) -> EnvyReport:
    replicas = totals.replicas
    matrix = totals.reach / replicas
    own = totals.successes / replicas
    margin, g, other = _envy_margin(inst.group_sizes, totals.classes, matrix, own)
    row = totals.classes.index(inst.group_sizes[g])
    p, q = matrix[row, other], own[g]
    margin_se = math.sqrt((p * (1 - p) + q * (1 - q)) / replicas)
    return EnvyReport(totals.classes, matrix, own, margin, margin_se)


def envy_matrix(kind: MechanismKind, inst: Instance, profile: ActionProfile, replicas: int, seed: int,
                workers: int = 1, limit: int = None) -> EnvyReport:
    """
    Estimates, from joint samples of tickets per group, how likely each group would be to succeed
    with another group's tickets.
    :return: The EnvyReport; its margin is the largest gain any group sees by swapping.
    """
    totals = simulate(kind, inst, profile, replicas, seed, workers, limit, track_envy=True)
    return envy_from_totals(totals, inst)


def envy_from_distribution(group_sizes: list[int], outcomes: dict[tuple[int, ...], float] | list) -> EnvyReport:
    """
    The exact envy report of an explicit joint law of tickets per group.
    :param group_sizes: The group sizes.
    :param outcomes: ``{tickets per group: probability}`` or a list of such pairs.
    :return: The exact EnvyReport.
    """
    items = outcomes.items() if isinstance(outcomes, dict) else outcomes
    sizes = np.asarray(group_sizes, dtype=np.int64)
    classes = tuple(sorted(set(group_sizes)))
    thresholds = np.array(classes, dtype=np.int64)[:, None]
    matrix = np.zeros((len(classes), sizes.size))
    own = np.zeros(sizes.size)
    for tickets, probability in items:
        tickets = np.asarray(tickets, dtype=np.int64)
        matrix += probability * (tickets[None, :] >= thresholds)
        own += probability * (tickets >= sizes)

    margin, _, _ = _envy_margin(tuple(int(s) for s in sizes), classes, matrix, own)
    return EnvyReport(classes, matrix, own, margin, 0.0, EvaluationMethod.EXACT_ENUM)


def exact_envy(kind: MechanismKind, inst: Instance, profile: ActionProfile = None, limit: int = None) -> EnvyReport:
    distribution, method = outcome_distribution(kind, inst, profile, limit)
    report = envy_from_distribution(list(inst.group_sizes), distribution)
    report.method = method
    return report


REPORT_COLUMNS = [
    "instance_id", "mechanism", "n", "k", "m", "size_class", "u_mean", "u_se", "method", "R", "seed",
    "utilization", "fairness_ratio", "envy_margin",
    "bound_eff", "bound_fair", "eff_check", "fair_check"
]


@dataclass
class OutcomeReport:
    """
    Everything one evaluation of one mechanism on one instance produced.
    Bounds are the efficiency and fairness guarantees to compare against, if the caller supplies them.
    """
    instance_id: str
    mechanism: MechanismKind
    inst: Instance
    utility: UtilityVector
    stats: InstanceStats
    envy: EnvyReport | None = None
    bound_eff: float | None = None
    bound_fair: float | None = None
    utilization: float = field(init=False)
    fairness: float = field(init=False)

    def __post_init__(self):
        self.utilization = utilization(self.utility, self.inst)
        if self.utility.method.is_exact:
            self.fairness = fairness_ratio(self.utility)
        else:
            self.fairness = fairness_ratio(self.utility.class_values(self.inst).values())

    def optimistic(self) -> tuple[float, float]:
        """
        Utilization and fairness shifted by the CI multiplier in the favourable direction; exact values are returned unchanged.
        """
        if self.utility.method.is_exact:
            return self.utilization, self.fairness
        means = self.utility.class_values(self.inst)
        errors = self.utility.class_standard_errors(self.inst)
        low = min(means[s] + CI_MULTIPLIER * errors[s] for s in means)
        high = max(means[s] - CI_MULTIPLIER * errors[s] for s in means)
        fairness = 1.0 if high <= 0 else min(low / high, 1.0)
        return self.utilization + CI_MULTIPLIER * self.utility.utilization_se, fairness

    def checks(self) -> tuple[bool | None, bool | None]:
        """
        :return: Whether utilization and fairness meet their bounds, or None where no bound was given.
        """
        eff, fair = self.optimistic()
        tolerance = 1e-12
        eff_ok = None if self.bound_eff is None else eff >= self.bound_eff - tolerance
        fair_ok = None if self.bound_fair is None else fair >= self.bound_fair - tolerance
        return eff_ok, fair_ok

    @property
    def passed(self) -> bool:
        return all(check is not False for check in self.checks())

    def rows(self) -> list[dict]:
        """
        One row per group size class, every float formatted with 10 significant digits.
        """
        fmt = lambda value: "" if value is None else format(value, FLOAT_FORMAT)
        verdict = lambda ok: "" if ok is None else ("PASS" if ok else "FAIL")
        means = self.utility.class_values(self.inst)
        errors = self.utility.class_standard_errors(self.inst)
        eff_ok, fair_ok = self.checks()
        rows = []
        for size in self.inst.size_classes():
            rows.append({
                "instance_id": self.instance_id,
                "mechanism": self.mechanism.value,
                "n": self.inst.n,
                "k": self.inst.k,
                "m": self.inst.m,
                "size_class": size,
                "u_mean": fmt(means[size]),
                "u_se": fmt(errors[size]),
                "method": self.utility.method.value,
                "R": "" if self.utility.replicas is None else self.utility.replicas,
                "seed": "" if self.utility.seed is None else self.utility.seed,
                "utilization": fmt(self.utilization),
                "fairness_ratio": fmt(self.fairness),
                "envy_margin": fmt(None if self.envy is None else self.envy.margin),
                "bound_eff": fmt(self.bound_eff),
                "bound_fair": fmt(self.bound_fair),
                "eff_check": verdict(eff_ok),
                "fair_check": verdict(fair_ok),
            })
        return rows

    def to_json(self) -> dict:
        eff_ok, fair_ok = self.checks()
        return {
            "instance_id": self.instance_id,
            "mechanism": self.mechanism.value,
            "instance": self.inst.to_json(),
            "stats": self.stats.to_json(),
            "utility": self.utility.to_json(),
            "utilization": self.utilization,
            "fairness_ratio": self.fairness,
            "envy_margin": None if self.envy is None else self.envy.margin,
            "bound_eff": self.bound_eff,
            "bound_fair": self.bound_fair,
            "eff_check": eff_ok,
            "fair_check": fair_ok,
        }


def write_csv(rows: list[dict], columns: list[str] = None) -> str:
    """
    Renders rows as CSV with one header row, fixed column order and ``\\n`` line endings.
    """
    columns = columns or REPORT_COLUMNS
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buffer.getvalue()
