import logging
from fractions import Fraction
from typing import Sequence

import numpy as np

from .enums import MechanismKind, ActionKind, OrderLaw, get_from_value
from .exceptions import (
    InsufficientTotalError, ActionOutOfRangeError, DecompositionFailedError, MalformedProfileJSONError
)
from .instance import Instance

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


def splitmix64(value: int) -> int:
    """
    The SplitMix64 finalizer: a bijective 64-bit integer mix.
    """
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def make_stream(seed: int) -> np.random.Generator:
    """
    Creates the seed-stream every sampling operation consumes: a numpy Generator over PCG64.
    :param seed: A 64-bit seed.
    :return: The Generator.
    """
    return np.random.Generator(np.random.PCG64(seed & _MASK64))


def derive_seed(master_seed: int, replica: int) -> int:
    """
    Derives the seed of replica ``replica`` as ``splitmix64(splitmix64(master_seed) ^ replica)``.
    """
    return splitmix64(splitmix64(master_seed & _MASK64) ^ (replica & _MASK64))


def derive_stream(master_seed: int, replica: int) -> np.random.Generator:
    return make_stream(derive_seed(master_seed, replica))


class ActionProfile:
    """
    One declared action per agent: a set of agent ids for ``GROUP_DECLARATION`` or a ticket count for ``TICKET_REQUEST``.
    """
    def __init__(self, kind: ActionKind, actions: list):
        """
        Creates a new ActionProfile.
        :param kind: The action set the actions come from.
        :param actions: The actions indexed by agent id.
        """
        self.kind = kind
        if kind == ActionKind.GROUP_DECLARATION:
            self.actions = [frozenset(int(j) for j in action) for action in actions]
        else:
            self.actions = [int(action) for action in actions]

    @classmethod
    def group_request(cls, inst: Instance, kind: ActionKind, limit: int = None) -> 'ActionProfile':
        """
        Builds the truthful profile: every agent declares its own group, or requests its group size
        capped at ``k`` (and at ``limit`` when a request limit applies).
        :param inst: The instance.
        :param kind: The action set.
        :param limit: The request limit, if any.
        :return: The profile.
        """
        if kind == ActionKind.GROUP_DECLARATION:
            groups = [frozenset(inst.members(g)) for g in range(inst.m)]
            return cls(kind, [groups[g] for g in inst.group_of])
        sizes = np.minimum(inst.sizes, inst.k if limit is None else min(limit, inst.k))
        return cls(kind, sizes[inst.group_of].tolist())

    @property
    def requests(self) -> np.ndarray:
        if self.kind != ActionKind.TICKET_REQUEST:
            raise ActionOutOfRangeError("Only ticket request profiles carry requests.")
        return np.array(self.actions, dtype=np.int64)

    def validate(self, inst: Instance, limit: int = None):
        """
        Checks the profile against the instance's admissible action set.
        :param inst: The instance.
        :param limit: The request limit, if any.
        :raises ActionOutOfRangeError: If an action is outside the action set.
        """
        if len(self.actions) != inst.n:
            raise ActionOutOfRangeError(f"Profile has {len(self.actions)} actions for {inst.n} agents.")
        if self.kind == ActionKind.GROUP_DECLARATION:
            for agent, action in enumerate(self.actions):
                if any(not 0 <= j < inst.n for j in action):
                    raise ActionOutOfRangeError(f"Agent {agent} declared an agent outside 0..{inst.n - 1}.")
            return

        cap = inst.k if limit is None else min(limit, inst.k)
        for agent, action in enumerate(self.actions):
            if not 1 <= action <= cap:
                raise ActionOutOfRangeError(f"Agent {agent} requested {action}, admissible range is 1..{cap}.")

    def with_group_actions(self, inst: Instance, group: int, actions: list) -> 'ActionProfile':
        """
        Returns a copy where the members of ``group`` play ``actions`` (in member order).
        """
        new_actions = list(self.actions)
        for member, action in zip(inst.members(group), actions):
            new_actions[member] = action
        return ActionProfile(self.kind, new_actions)

    def to_json(self) -> dict:
        if self.kind == ActionKind.GROUP_DECLARATION:
            actions = [sorted(action) for action in self.actions]
        else:
            actions = list(self.actions)
        return {"kind": self.kind.value, "actions": actions}

    @classmethod
    def from_json(cls, json: dict) -> 'ActionProfile':
        """
        Reconstructs the ActionProfile from the JSON.
        :param json: The JSON as a dictionary.
        :return: The ActionProfile object.
        :raises MalformedProfileJSONError: If the JSON is malformed or carries unknown keys.
        """
        if not isinstance(json, dict):
            raise MalformedProfileJSONError("Profile is not a dict.")
        if "kind" not in json:
            raise MalformedProfileJSONError("No 'kind' key present.")
        if "actions" not in json:
            raise MalformedProfileJSONError("No 'actions' key present.")
        for key in json:
            if key not in ("kind", "actions"):
                raise MalformedProfileJSONError(f"Unexpected key '{key}'.")

        kind = get_from_value(ActionKind, json["kind"])
        if kind is None:
            raise MalformedProfileJSONError("Unexpected value for 'kind'.")
        actions = json["actions"]
        if not isinstance(actions, list):
            raise MalformedProfileJSONError("Unexpected value for 'actions'.")
        for action in actions:
            if kind == ActionKind.GROUP_DECLARATION:
                ok = isinstance(action, list) and all(isinstance(j, int) and not isinstance(j, bool) for j in action)
            else:
                ok = isinstance(action, int) and not isinstance(action, bool)
            if not ok:
                raise MalformedProfileJSONError("Unexpected value for 'actions'.")

        return cls(kind, actions)

    def __eq__(self, other):
        return isinstance(other, ActionProfile) and self.kind == other.kind and self.actions == other.actions

    def __repr__(self):
        return f"ActionProfile({self.kind.value}, {len(self.actions)} agents)"


class Allocation:
    """
    Per-agent ticket counts of one sampled outcome.
    """
    def __init__(self, x: np.ndarray, k: int):
        self.x = np.asarray(x, dtype=np.int64)
        self.k = k

    @property
    def allocated(self) -> int:
        return int(self.x.sum())

    def group_tickets(self, inst: Instance) -> np.ndarray:
        return np.add.reduceat(self.x, inst.offsets)

    def successes(self, inst: Instance) -> np.ndarray:
        """
        :return: For every group, whether its members jointly hold at least ``|G|`` tickets.
        """
        return self.group_tickets(inst) >= inst.sizes

    def successful_agents(self, inst: Instance) -> int:
        return int(inst.sizes[self.successes(inst)].sum())

    def wasted(self, inst: Instance) -> int:
        """
        :return: ``k`` minus the tickets held by successful groups.
        """
        tickets = self.group_tickets(inst)
        return self.k - int(tickets[tickets >= inst.sizes].sum())

    def __repr__(self):
        return f"Allocation(allocated={self.allocated}, k={self.k})"


class DrawOrder:
    """
    A sampled sequence of agent or group ids and the law it was drawn from.
    For ``WEIGHTED_PERM`` the scores ``a_i * X_i`` are kept aligned with ``elements``.
    """
    def __init__(self, elements: np.ndarray, law: OrderLaw, scores: np.ndarray = None):
        self.elements = np.asarray(elements, dtype=np.int64)
        self.law = law
        self.scores = scores

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements.tolist())

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(self.elements.tolist())

    def __repr__(self):
        return f"DrawOrder({self.law.value}, {self.as_tuple()})"


def tau(c: int, sizes_in_order: Sequence[int]) -> int:
    """
    The hitting index: the smallest 1-based ``T`` whose prefix of sizes sums to at least ``c``.
    :param c: The budget to reach.
    :param sizes_in_order: The sizes in processing order.
    :return: The hitting index.
    :raises InsufficientTotalError: If all sizes together stay below ``c``.
    """
    cumulative = np.cumsum(np.asarray(sizes_in_order, dtype=np.int64))
    if cumulative.size == 0 or cumulative[-1] < c:
        total = 0 if cumulative.size == 0 else int(cumulative[-1])
        raise InsufficientTotalError(f"Sizes sum to {total}, below the budget {c}.")
    return int(np.searchsorted(cumulative, c, side="left")) + 1


def valid_groups(profile: ActionProfile) -> list[tuple[int, ...]]:
    """
    Finds the sets of agents on which every member declared exactly that set.
    :param profile: A group declaration profile.
    :return: The valid groups as sorted tuples of agent ids, in lexicographic order.
    """
    if profile.kind != ActionKind.GROUP_DECLARATION:
        raise ActionOutOfRangeError("Valid groups are only defined for group declarations.")
    found = set()
    for declared in set(profile.actions):
        if declared and all(0 <= j < len(profile.actions) and profile.actions[j] == declared for j in declared):
            found.add(tuple(sorted(declared)))
    return sorted(found)


def allocate_group_lottery(valid: Sequence[Sequence[int]], k: int, n: int, sizes: np.ndarray = None) -> Allocation:
    """
    Serves whole groups in order, one ticket per member, until the next group no longer fits.
    Every group after the first one that does not fit receives nothing.
    :param valid: The valid groups in processing order, each a sequence of agent ids.
    :param k: The number of tickets.
    :param n: The number of agents.
    :param sizes: The sizes of ``valid`` in the same order, if already known.
    :return: The Allocation.
    """
    x = np.zeros(n, dtype=np.int64)
    if len(valid) == 0:
        return Allocation(x, k)
    if sizes is None:
        sizes = np.fromiter((len(group) for group in valid), dtype=np.int64, count=len(valid))
    served = int(np.searchsorted(np.cumsum(sizes), k, side="right"))
    for group in valid[:served]:
        x[list(group)] += 1
    return Allocation(x, k)


def allocate_individual(order: Sequence[int], requests: np.ndarray, k: int) -> Allocation:
    """
    Serves agents in order, each receiving ``min(a, max(k - sum of earlier requests, 0))``.
    :param order: The agent ids in processing order.
    :param requests: The request of every agent, indexed by agent id.
    :param k: The number of tickets.
    :return: The Allocation.
    """
    order = np.asarray(order, dtype=np.int64)
    requests = np.asarray(requests, dtype=np.int64)
    a = requests[order]
    before = np.cumsum(a) - a
    x = np.zeros(requests.size, dtype=np.int64)
    x[order] = np.minimum(a, np.maximum(k - before, 0))
    return Allocation(x, k)


def sample_uniform_order(elements: Sequence[int], stream: np.random.Generator) -> DrawOrder:
    if len(elements) == 0:
        raise ValueError("Can not order an empty set.")
    return DrawOrder(stream.permutation(np.asarray(elements, dtype=np.int64)), OrderLaw.UNIFORM_PERM)


def insertion_order(elements: Sequence[int], subset: Sequence[int], stream: np.random.Generator) -> DrawOrder:
    """
    Builds a uniform order by composition: order ``subset`` uniformly, order the remaining elements uniformly,
    then place the subset's order on a uniformly chosen set of positions.
    :param elements: All elements.
    :param subset: The elements ordered first.
    :param stream: The seed-stream.
    :return: The uniform DrawOrder.
    """
    elements = np.asarray(elements, dtype=np.int64)
    inside = np.isin(elements, np.asarray(subset, dtype=np.int64))
    first = stream.permutation(elements[inside])
    rest = stream.permutation(elements[~inside])
    positions = np.sort(stream.choice(elements.size, size=first.size, replace=False))

    result = np.empty(elements.size, dtype=np.int64)
    mask = np.zeros(elements.size, dtype=bool)
    mask[positions] = True
    result[mask] = first
    result[~mask] = rest
    return DrawOrder(result, OrderLaw.UNIFORM_PERM)


def sample_weighted_order(requests: Sequence[int], stream: np.random.Generator, elements: Sequence[int] = None) -> DrawOrder:
    """
    Draws the order where the next agent is chosen with probability proportional to ``1 / a_i``
    among those left, by sorting ``a_i * X_i`` for i.i.d. unit exponentials ``X_i``.
    Ties break by position ascending.
    :param requests: The requests ``a_i``, aligned with ``elements``.
    :param stream: The seed-stream.
    :param elements: The ids to order; defaults to ``0..len(requests)-1``.
    :return: The DrawOrder with its scores.
    """
    a = np.asarray(requests, dtype=np.int64)
    ids = np.arange(a.size, dtype=np.int64) if elements is None else np.asarray(elements, dtype=np.int64)
    scores = a * stream.standard_exponential(a.size)
    order = np.argsort(scores, kind="stable")
    return DrawOrder(ids[order], OrderLaw.WEIGHTED_PERM, scores[order])


class FairLottery:
    """
    A lottery over feasible sets of groups giving every group the same success probability.
    Weights are exact Fractions; the empty set may carry weight.
    """
    def __init__(self, support: list[tuple[tuple[int, ...], Fraction]], m: int, u_star: Fraction):
        self.support = support
        self.m = m
        self.u_star = u_star
        self._probabilities = np.array([float(weight) for _, weight in support])
        self._probabilities /= self._probabilities.sum()

    def marginals(self) -> list[Fraction]:
        result = [Fraction(0)] * self.m
        for subset, weight in self.support:
            for group in subset:
                result[group] += weight
        return result

    def sample(self, stream: np.random.Generator) -> tuple[int, ...]:
        return self.support[int(stream.choice(len(self.support), p=self._probabilities))][0]

    def to_json(self) -> dict:
        return {
            "u_star": str(self.u_star),
            "support": [{"groups": list(subset), "weight": str(weight)} for subset, weight in self.support]
        }

    def __repr__(self):
        return f"FairLottery(u_star={self.u_star}, support={len(self.support)})"


def _decompose(sizes: Sequence[int], k: int, target: Fraction) -> list[tuple[tuple[int, ...], Fraction]]:
    m = len(sizes)
    residual = [target] * m
    remaining = Fraction(1)
    support = []

    while remaining > 0 and any(r > 0 for r in residual):
        ranked = sorted((g for g in range(m) if residual[g] > 0), key=lambda g: (-residual[g], g))
        chosen, capacity = [], k
        for g in ranked:
            if sizes[g] <= capacity:
                chosen.append(g)
                capacity -= sizes[g]
        if not chosen:
            raise DecompositionFailedError("Greedy packing found no feasible set.", residual)

        outside = [residual[g] for g in ranked if g not in chosen]
        weight = min(residual[g] for g in chosen)
        if outside:
            weight = min(weight, remaining - max(outside))
        if weight <= 0:
            raise DecompositionFailedError("Greedy packing stalled with a tight group left out.", residual)

        for g in chosen:
            residual[g] -= weight
        remaining -= weight
        support.append((tuple(sorted(chosen)), weight))
        logger.debug("fair lottery step: groups=%s weight=%s remaining=%s", sorted(chosen), weight, remaining)

    if any(r != 0 for r in residual):
        raise DecompositionFailedError("Lottery weight ran out before every group reached its target.", residual)
    if remaining > 0:
        support.append(((), remaining))
    return support


def build_fair_lottery(inst: Instance, sizes: Sequence[int] = None) -> FairLottery:
    """
    Decomposes the equal marginal ``u* = (k - s_max + 1) / n`` into a lottery over feasible group sets.

    The greedy keeps residual marginals, packs positive-residual groups first-fit by descending residual
    (ties by index), and gives the packed set the largest weight that keeps every residual nonnegative and
    no residual above the remaining weight.
    :param inst: The instance.
    :param sizes: Group sizes to decompose over instead of the instance's (used for declared groups).
    :return: The FairLottery.
    :raises DecompositionFailedError: If the greedy stalls, the support grows past ``m + 1`` or the marginals miss ``u*``.
    """
    sizes = list(inst.group_sizes if sizes is None else sizes)
    m = len(sizes)
    if sum(sizes) <= inst.k:
        return FairLottery([(tuple(range(m)), Fraction(1))], m, Fraction(1))

    u_star = Fraction(inst.k - max(sizes) + 1, sum(sizes))
    if u_star < 0:
        raise DecompositionFailedError(f"Benchmark utility {u_star} is negative.", [u_star] * m)
    if u_star == 0:
        return FairLottery([((), Fraction(1))], m, u_star)

    support = _decompose(sizes, inst.k, u_star)
    if len(support) > m + 1:
        raise DecompositionFailedError(f"Support of size {len(support)} exceeds m+1={m + 1}.")

    lottery = FairLottery(support, m, u_star)
    for group, marginal in enumerate(lottery.marginals()):
        if abs(float(marginal - u_star)) > 1e-9:
            raise DecompositionFailedError(f"Group {group} has marginal {marginal}, expected {u_star}.", lottery.marginals())
    logger.debug("fair lottery built: m=%d support=%d u_star=%s", m, len(support), u_star)
    return lottery


class Mechanism:
    """
    Base mechanism class. You shouldn't use this.
    """
    kind: MechanismKind = None
    action_kind: ActionKind = None

    def __init__(self, inst: Instance, profile: ActionProfile = None, limit: int = None):
        """
        Binds the mechanism to an instance and a profile.
        :param inst: The instance.
        :param profile: The action profile; defaults to the group request profile.
        :param limit: The request limit, for the limited Individual Lottery.
        :raises ActionOutOfRangeError: If the profile does not fit the mechanism's action set.
        """
        if profile is None:
            profile = ActionProfile.group_request(inst, self.action_kind, limit)
        if profile.kind != self.action_kind:
            raise ActionOutOfRangeError(f"{self.kind.value} takes {self.action_kind.value} actions, got {profile.kind.value}.")
        profile.validate(inst, limit)
        self.inst = inst
        self.profile = profile
        self.limit = limit

    def draw_order(self, stream: np.random.Generator) -> DrawOrder:
        pass

    def allocate(self, order: DrawOrder) -> Allocation:
        pass

    def draw(self, stream: np.random.Generator) -> Allocation:
        """
        Samples one outcome.
        :param stream: The seed-stream.
        :return: The sampled Allocation.
        """
        return self.allocate(self.draw_order(stream))

    def __repr__(self):
        return f"{type(self).__name__}({self.inst!r})"


class _DeclaredGroups(Mechanism):
    action_kind = ActionKind.GROUP_DECLARATION

    def __init__(self, inst: Instance, profile: ActionProfile = None, limit: int = None):
        super().__init__(inst, profile, limit)
        self.valid = valid_groups(self.profile)
        self.valid_sizes = np.array([len(group) for group in self.valid], dtype=np.int64)

    def allocate(self, order):
        # at most k+1 groups can be reached
        head = order.elements[:self.inst.k + 1]
        return allocate_group_lottery([self.valid[v] for v in head], self.inst.k, self.inst.n, self.valid_sizes[head])


class GroupLottery(_DeclaredGroups):
    """
    Valid groups in uniform random order; each is served whole while tickets last.
    """
    kind = MechanismKind.GROUP_LOTTERY

    def draw_order(self, stream):
        if not self.valid:
            return DrawOrder(np.empty(0, dtype=np.int64), OrderLaw.UNIFORM_PERM)
        return sample_uniform_order(np.arange(len(self.valid)), stream)


class GroupLotteryWithReplacement(_DeclaredGroups):
    """
    Valid groups drawn i.i.d. uniformly with replacement and served by the group lottery rule;
    a group drawn again receives its size again.
    """
    kind = MechanismKind.GROUP_LOTTERY_REPLACEMENT

    def draw_order(self, stream):
        if not self.valid:
            return DrawOrder(np.empty(0, dtype=np.int64), OrderLaw.WITH_REPLACEMENT)
        # k+1 draws of size >= 1 always pass k
        sequence = stream.integers(0, len(self.valid), size=self.inst.k + 1)
        stop = tau(self.inst.k + 1, self.valid_sizes[sequence])
        return DrawOrder(sequence[:stop], OrderLaw.WITH_REPLACEMENT)


class FairGroupLottery(_DeclaredGroups):
    """
    Samples one set from the fair lottery over valid groups and serves it.
    """
    kind = MechanismKind.FAIR_GROUP_LOTTERY

    def __init__(self, inst: Instance, profile: ActionProfile = None, limit: int = None):
        super().__init__(inst, profile, limit)
        if self.valid:
            self.lottery = build_fair_lottery(inst, self.valid_sizes.tolist())
        else:
            self.lottery = FairLottery([((), Fraction(1))], 0, Fraction(0))

    def draw_order(self, stream):
        return DrawOrder(np.array(self.lottery.sample(stream), dtype=np.int64), OrderLaw.UNIFORM_PERM)


class IndividualLottery(Mechanism):
    """
    Agents in uniform random order; each takes its request while tickets last.
    """
    kind = MechanismKind.INDIVIDUAL_LOTTERY
    action_kind = ActionKind.TICKET_REQUEST

    def __init__(self, inst: Instance, profile: ActionProfile = None, limit: int = None):
        super().__init__(inst, profile, limit)
        self.requests = self.profile.requests

    def draw_order(self, stream):
        return sample_uniform_order(np.arange(self.inst.n), stream)

    def allocate(self, order):
        return allocate_individual(order.elements, self.requests, self.inst.k)


class LimitedIndividualLottery(IndividualLottery):
    kind = MechanismKind.INDIVIDUAL_LOTTERY_LIMIT

    def __init__(self, inst: Instance, profile: ActionProfile = None, limit: int = None):
        if limit is None or limit < 1:
            raise ActionOutOfRangeError(f"The limited Individual Lottery needs a positive limit, got {limit!r}.")
        super().__init__(inst, profile, limit)


class WeightedIndividualLottery(IndividualLottery):
    """
    The Individual Lottery with the order biased towards small requests.
    """
    kind = MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY

    def draw_order(self, stream):
        return sample_weighted_order(self.requests, stream)


class_lookup = {
    MechanismKind.GROUP_LOTTERY: GroupLottery,
    MechanismKind.INDIVIDUAL_LOTTERY: IndividualLottery,
    MechanismKind.INDIVIDUAL_LOTTERY_LIMIT: LimitedIndividualLottery,
    MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY: WeightedIndividualLottery,
    MechanismKind.GROUP_LOTTERY_REPLACEMENT: GroupLotteryWithReplacement,
    MechanismKind.FAIR_GROUP_LOTTERY: FairGroupLottery,
}


def action_kind_of(kind: MechanismKind) -> ActionKind:
    return class_lookup[kind].action_kind


def make_mechanism(kind: MechanismKind, inst: Instance, profile: ActionProfile = None, limit: int = None) -> Mechanism:
    """
    Creates the mechanism of the given kind, bound to an instance and profile.
    """
    return class_lookup[kind](inst, profile, limit)


def run_mechanism(kind: MechanismKind, inst: Instance, profile: ActionProfile, stream: np.random.Generator, limit: int = None) -> Allocation:
    """
    Samples one outcome of a mechanism.
    :param kind: The mechanism.
    :param inst: The instance.
    :param profile: The action profile, or None for the group request profile.
    :param stream: The seed-stream.
    :param limit: The request limit, for the limited Individual Lottery.
    :return: The sampled Allocation.
    :raises ActionOutOfRangeError: If the profile does not fit the mechanism's action set.
    """
    return make_mechanism(kind, inst, profile, limit).draw(stream)


class CoupledTriple:
    """
    One master agent sequence and the three orders it induces.
    """
    def __init__(self, master: np.ndarray, sigma_gr: np.ndarray, sigma_iw: np.ndarray, sigma_gl: np.ndarray):
        self.master = master
        self.sigma_gr = sigma_gr
        self.sigma_iw = sigma_iw
        self.sigma_gl = sigma_gl

    def __repr__(self):
        return f"CoupledTriple(len={len(self.master)}, groups={len(self.sigma_gl)})"


def _first_occurrences(sequence: np.ndarray) -> np.ndarray:
    _, first = np.unique(sequence, return_index=True)
    return sequence[np.sort(first)]


def sample_coupled_triple(inst: Instance, stream: np.random.Generator) -> CoupledTriple:
    """
    Draws agents i.i.d. with probability proportional to ``1 / |G_i|`` (a uniform group, then a uniform member)
    until every agent has appeared.
    :param inst: The instance, under group request.
    :param stream: The seed-stream.
    :return: The master sequence with its group sequence, its agent order without repeats and its group order without repeats.
    """
    seen = np.zeros(inst.n, dtype=bool)
    chunks, missing = [], inst.n
    while missing > 0:
        size = max(2 * inst.n, 64)
        groups = stream.integers(0, inst.m, size=size)
        agents = inst.offsets[groups] + np.floor(stream.random(size) * inst.sizes[groups]).astype(np.int64)
        fresh = ~seen[agents]
        first_new = np.zeros(size, dtype=bool)
        _, index = np.unique(agents[fresh], return_index=True)
        first_new[np.flatnonzero(fresh)[index]] = True
        missing_after = missing - np.cumsum(first_new)
        if missing_after[-1] > 0:
            chunks.append(agents)
        else:
            end = int(np.argmax(missing_after == 0)) + 1
            chunks.append(agents[:end])
        seen[agents] = True
        missing = int(missing_after[-1]) if missing_after[-1] > 0 else 0

    master = np.concatenate(chunks)
    sigma_gr = inst.group_of[master]
    return CoupledTriple(master, sigma_gr, _first_occurrences(master), _first_occurrences(sigma_gr))


def coupled_successes(inst: Instance, triple: CoupledTriple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Runs the three group-request mechanisms on one coupled draw.
    :return: Per-group success flags under replacement, weighted individual and plain group lottery.
    """
    groups = [tuple(inst.members(g)) for g in range(inst.m)]
    gr = allocate_group_lottery([groups[g] for g in triple.sigma_gr], inst.k, inst.n).successes(inst)
    iw = allocate_individual(triple.sigma_iw, inst.sizes[inst.group_of], inst.k).successes(inst)
    gl = allocate_group_lottery([groups[g] for g in triple.sigma_gl], inst.k, inst.n).successes(inst)
    return gr, iw, gl
