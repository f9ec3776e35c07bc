import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.stats import poisson

from .enums import MechanismKind, ActionKind, EvaluationMethod
from .exceptions import DomainError, ParamViolationError, TooLargeError, BoundViolationError, InsufficientTotalError
from .instance import Instance, instance_stats, as_fraction
from .mechanisms import ActionProfile, action_kind_of, make_stream, tau
from .evaluation import exact_utilities, expected_hitting_times, CI_MULTIPLIER

logger = logging.getLogger(__name__)

BR_SIZE_LIMIT = 6


def g(x: float) -> float:
    """
    ``(1 - e^-x) / x``, with ``g(0) = 1``.
    """
    if x == 0:
        return 1.0
    return float(-np.expm1(-x) / x)


def _clamp(value: float | None) -> float | None:
    return None if value is None else min(max(value, 0.0), 1.0)


@dataclass
class BoundRecord:
    """
    Worst-case efficiency and fairness guarantees for an instance, computed from its own kappa and alpha.
    Raw values may leave [0, 1]; :meth:`clamped` gives the reported view.
    """
    kappa: float
    alpha: float
    gl_eff: float
    gl_fair: float
    iw_eff: float
    iw_fair: float
    glr_utility: float
    benchmark_eff: float
    benchmark_fair: float = 1.0
    ell: int | None = None
    il_limit_eff: float | None = None
    il_limit_fair: float | None = None

    _FIELDS = ("gl_eff", "gl_fair", "iw_eff", "iw_fair", "glr_utility", "benchmark_eff", "benchmark_fair",
               "il_limit_eff", "il_limit_fair")

    def clamped(self) -> dict[str, float | None]:
        return {name: _clamp(getattr(self, name)) for name in self._FIELDS}

    def for_mechanism(self, kind: MechanismKind) -> tuple[float | None, float | None]:
        """
        :return: The (efficiency, fairness) guarantees that apply to the mechanism under group request.
        """
        clamped = self.clamped()
        lookup = {
            MechanismKind.GROUP_LOTTERY: (clamped["gl_eff"], clamped["gl_fair"]),
            MechanismKind.WEIGHTED_INDIVIDUAL_LOTTERY: (clamped["iw_eff"], clamped["iw_fair"]),
            MechanismKind.GROUP_LOTTERY_REPLACEMENT: (clamped["iw_eff"], None),
            MechanismKind.FAIR_GROUP_LOTTERY: (clamped["benchmark_eff"], clamped["benchmark_fair"]),
            MechanismKind.INDIVIDUAL_LOTTERY_LIMIT: (clamped["il_limit_eff"], clamped["il_limit_fair"]),
        }
        return lookup.get(kind, (None, None))

    def to_json(self) -> dict:
        raw = {name: getattr(self, name) for name in self._FIELDS}
        return {"kappa": self.kappa, "alpha": self.alpha, "ell": self.ell, "raw": raw, "clamped": self.clamped()}


def bounds(inst: Instance, ell: int = None) -> BoundRecord:
    """
    Computes the guarantees of every mechanism at the instance's own kappa and alpha.
    :param inst: The instance.
    :param ell: The request limit; the limited Individual Lottery guarantee ``1/ell`` applies only if no group exceeds it.
    :return: The BoundRecord.
    """
    stats = instance_stats(inst)
    kappa, alpha = stats.kappa_hat, stats.alpha_hat
    shrink = g(alpha)
    record = BoundRecord(
        kappa=kappa,
        alpha=alpha,
        gl_eff=1 - kappa,
        gl_fair=1 - 2 * kappa,
        iw_eff=(1 - kappa) * shrink,
        iw_fair=(1 - 2 * kappa) * shrink,
        glr_utility=alpha * (1 - kappa) * shrink,
        benchmark_eff=1 - kappa,
        ell=ell
    )
    if ell is not None and inst.s_max <= ell:
        record.il_limit_eff = record.il_limit_fair = 1 / ell
    if stats.benchmark_u_star <= 0:
        logger.warning("benchmark utility is %g on %r; fair lottery bound is vacuous", stats.benchmark_u_star, inst)
    if record.gl_fair <= 0:
        logger.warning("fairness bound 1-2*kappa=%g on %r is vacuous", record.gl_fair, inst)
    return record


@dataclass
class HittingTimeRecord:
    sizes: tuple[int, ...]
    k: int
    e_tau: float
    lower: float
    upper: float
    method: EvaluationMethod
    standard_error: float = 0.0
    subadditivity_pairs: list[tuple[int, int, bool]] = field(default_factory=list)

    @property
    def within_bounds(self) -> bool:
        slack = 1e-9 + CI_MULTIPLIER * self.standard_error
        return self.lower - slack <= self.e_tau <= self.upper + slack

    @property
    def subadditive(self) -> bool:
        return all(ok for _, _, ok in self.subadditivity_pairs)

    @property
    def passed(self) -> bool:
        return self.within_bounds and self.subadditive


def all_pairs(total: int) -> list[tuple[int, int]]:
    return [(a, b) for a in range(1, total) for b in range(a, total - a + 1)]


def hitting_time_bounds(sizes: list[int], k: int) -> tuple[float, float]:
    """
    :return: ``(1 + (k - a)/mu, (k + a - 1)/mu)`` for mean size ``mu`` and largest size ``a``.
    """
    mu = sum(sizes) / len(sizes)
    largest = max(sizes)
    return 1 + (k - largest) / mu, (k + largest - 1) / mu


def size_counts_of(sizes: list[int]) -> dict[int, int]:
    counts = {}
    for s in sizes:
        counts[s] = counts.get(s, 0) + 1
    return counts


def hitting_time_check(sizes: list[int], k: int, method: EvaluationMethod = EvaluationMethod.EXACT_DP,
                       seed: int = None, replicas: int = 10000, pairs: list[tuple[int, int]] = None) -> HittingTimeRecord:
    """
    Compares ``E[tau(k)]`` for a uniform order over ``sizes`` with ``1 + (k - a)/mu <= E[tau] <= (k + a - 1)/mu``
    (``mu`` the mean size, ``a`` the largest) and checks ``E[tau(k')] + E[tau(k'')] >= E[tau(k' + k'')]`` on ``pairs``.
    Subadditivity is always checked on exact values.
    :param sizes: The sizes.
    :param k: The budget.
    :param method: ``EXACT_DP`` or ``MONTE_CARLO``.
    :param seed: The seed, required for Monte Carlo.
    :param replicas: Monte Carlo replicas.
    :param pairs: Budget pairs for the subadditivity check.
    :return: The HittingTimeRecord.
    :raises InsufficientTotalError: If ``k`` exceeds the sum of sizes.
    """
    sizes = [int(s) for s in sizes]
    total = sum(sizes)
    if k > total:
        raise InsufficientTotalError(f"Budget {k} exceeds the total size {total}.")
    profile = expected_hitting_times(size_counts_of(sizes))

    if method == EvaluationMethod.MONTE_CARLO:
        if seed is None:
            raise ParamViolationError("Monte Carlo hitting times need a seed.")
        stream = make_stream(seed)
        samples = np.array([tau(k, stream.permutation(sizes)) for _ in range(replicas)], dtype=float)
        e_tau = float(samples.mean())
        error = float(samples.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
    else:
        e_tau, error = float(profile[k]), 0.0

    checked = []
    for first, second in pairs or []:
        if first + second > total:
            raise InsufficientTotalError(f"Pair ({first}, {second}) exceeds the total size {total}.")
        checked.append((first, second, bool(profile[first] + profile[second] >= profile[first + second] - 1e-9)))

    lower, upper = hitting_time_bounds(sizes, k)
    return HittingTimeRecord(tuple(sizes), k, e_tau, lower, upper, method, error, checked)


@dataclass
class ThresholdContext:
    """
    A group of ``group_size`` members facing outsiders given as ``(request, score)`` pairs.
    ``T`` is filled in by :func:`threshold_T`.
    """
    k: int
    group_size: int
    outsiders: list[tuple[int, float]]
    T: float | None = None


def threshold_T(ctx: ThresholdContext) -> float:
    """
    The smallest score at which the outsiders ranked before it request more than ``k - |G|`` tickets.
    ``math.inf`` if they never do, ``0.0`` if ``k < |G|`` (no member can clear it).
    """
    budget = ctx.k - ctx.group_size
    if budget < 0:
        ctx.T = 0.0
        return ctx.T
    ranked = sorted(enumerate(ctx.outsiders), key=lambda item: (item[1][1], item[0]))
    cumulative = 0
    ctx.T = math.inf
    for _, (request, score) in ranked:
        cumulative += request
        if cumulative > budget:
            ctx.T = float(score)
            break
    return ctx.T


def group_succeeds(ctx: ThresholdContext, member_requests: list[int], member_scores: list[float]) -> bool:
    """
    The group succeeds iff members scoring below ``T`` request at least ``|G|`` tickets in total.
    """
    T = threshold_T(ctx) if ctx.T is None else ctx.T
    return sum(a for a, score in zip(member_requests, member_scores) if score < T) >= ctx.group_size


@dataclass(frozen=True)
class BrStrategy:
    """
    Requests of a group of size ``s`` where any ``r`` members request fewer than ``s`` tickets together
    but any ``r + 1`` request at least ``s``.
    """
    s: int
    r: int
    requests: tuple[int, ...]

    @property
    def reciprocal_sum(self) -> Fraction:
        return sum((Fraction(1, a) for a in self.requests), Fraction(0))


def br_class(requests: tuple[int, ...]) -> int | None:
    """
    :return: The class ``r`` of a request vector, or None if it lies in no class.
    """
    s = len(requests)
    ascending = sorted(requests)
    descending = ascending[::-1]
    for r in range(s):
        if sum(descending[:r]) < s <= sum(ascending[:r + 1]):
            return r
    return None


def enumerate_br(s: int, r: int) -> list[BrStrategy]:
    """
    Lists every request vector of class ``r`` for a group of size ``s``, requests in ``1..s``, sorted and deduplicated.
    :param s: The group size, at most 6.
    :param r: The class index in ``0..s-1``.
    :return: The strategies.
    :raises TooLargeError: If ``s`` exceeds 6.
    :raises BoundViolationError: If some strategy has ``sum 1/a > r + 1``.
    """
    if s > BR_SIZE_LIMIT:
        raise TooLargeError(f"Strategy enumeration needs s <= {BR_SIZE_LIMIT}, got {s}.")
    if not 0 <= r < s:
        raise ParamViolationError(f"Class index must lie in 0..{s - 1}, got {r}.")
    found = []
    for requests in itertools.combinations_with_replacement(range(1, s + 1), s):
        if br_class(requests) != r:
            continue
        strategy = BrStrategy(s, r, requests)
        if strategy.reciprocal_sum > r + 1:
            raise BoundViolationError(f"{requests} has reciprocal sum {strategy.reciprocal_sum} > {r + 1}.")
        found.append(strategy)
    return found


@dataclass
class ConjectureRecord:
    s: int
    strategy: tuple[int, ...]
    T: float
    p_success: float
    standard_error: float
    p_exact: float
    p_group_request: float
    replicas: int

    @property
    def beats_group_request(self) -> bool:
        return self.p_success - CI_MULTIPLIER * self.standard_error > self.p_group_request


def _exact_threshold_success(s: int, strategy: tuple[int, ...], T: float) -> float:
    clear = [-math.expm1(-T / a) for a in strategy]
    probability = 0.0
    for outcome in itertools.product((False, True), repeat=len(strategy)):
        if sum(a for a, hit in zip(strategy, outcome) if hit) < s:
            continue
        probability += math.prod(p if hit else 1 - p for p, hit in zip(clear, outcome))
    return probability


def conjecture_probe(s: int, strategy: tuple[int, ...] | list[int], T: float, replicas: int, seed: int) -> ConjectureRecord:
    """
    Estimates ``P(sum a_i 1(a_i X_i < T) >= s)`` over i.i.d. unit exponentials ``X_i`` and compares it with
    the group request value ``1 - e^-T``. The exact probability is reported alongside.
    :param s: The group size.
    :param strategy: The members' requests.
    :param T: The threshold, finite and nonnegative.
    :param replicas: Monte Carlo replicas.
    :param seed: The seed.
    :return: The ConjectureRecord.
    """
    strategy = tuple(int(a) for a in strategy)
    if len(strategy) != s:
        raise ParamViolationError(f"Strategy has {len(strategy)} requests for a group of {s}.")
    if not math.isfinite(T) or T < 0:
        raise DomainError(f"Threshold must be finite and nonnegative, got {T}.")
    if replicas < 1:
        raise ParamViolationError(f"Need at least one replica, got {replicas}.")

    a = np.array(strategy, dtype=float)
    scores = a * make_stream(seed).standard_exponential((replicas, s))
    hits = ((scores < T) * a).sum(axis=1) >= s
    p = float(hits.mean())
    return ConjectureRecord(
        s=s,
        strategy=strategy,
        T=T,
        p_success=p,
        standard_error=math.sqrt(p * (1 - p) / replicas),
        p_exact=_exact_threshold_success(s, strategy, T),
        p_group_request=-math.expm1(-T),
        replicas=replicas
    )


@dataclass
class PoissonTailRecord:
    lam: float
    x: float
    bound: float
    exact: float


def poisson_tail_bound(lam: float, x: float) -> PoissonTailRecord:
    """
    The bound ``1 - e^(-lam/x)`` on ``P(X >= x)`` for ``X ~ Poisson(lam)``, next to the exact tail.
    :raises DomainError: Unless ``x >= lam >= 0`` and ``x > 0``.
    """
    if lam < 0 or x <= 0 or x < lam:
        raise DomainError(f"Need x >= lambda >= 0 and x > 0, got lambda={lam}, x={x}.")
    exact = 0.0 if lam == 0 else float(poisson.sf(math.ceil(x) - 1, lam))
    return PoissonTailRecord(lam, x, -math.expm1(-lam / x), exact)


@dataclass
class SplExampleRecord:
    m: int
    u_group_request: Fraction
    u_all_twos: Fraction

    @property
    def deviation_gains(self) -> bool:
        return self.u_all_twos > self.u_group_request


def spl_example_closed_forms(m: int) -> SplExampleRecord:
    """
    Exact utilities of the size-4 group in the ``n = m + 3`` instance with ``n - 1`` tickets and truthful singletons,
    when its members request 4 each or 2 each.
    :param m: The number of groups, at least 4.
    :return: The two utilities as Fractions.
    """
    if m < 4:
        raise ParamViolationError(f"Need m >= 4, got {m}.")
    lost = Fraction(0)
    for t in range(1, m + 1):
        first = math.prod((Fraction(m - i, m + 2 - i) for i in range(1, t)), start=Fraction(1))
        rest = math.prod((Fraction(m - i) / (m - i + Fraction(3, 2)) for i in range(t, m)), start=Fraction(1))
        lost += first * Fraction(2, m + 2 - t) * rest
    return SplExampleRecord(m, 1 - Fraction(1, m), 1 - lost)


def spl_tight_closed_form(m: int, s: int, alpha) -> float:
    """
    Utilization of the weighted lottery on ``m`` groups of size ``s`` with ``alpha*m*s`` tickets under group request.
    :raises ParamViolationError: If ``alpha*m`` is not an integer.
    """
    alpha = as_fraction(alpha, "alpha")
    draws = alpha * m
    if draws.denominator != 1:
        raise ParamViolationError(f"alpha*m must be integral, got {draws}.")
    missed = math.prod(1 - 1 / (m - i / s) for i in range(int(draws)))
    return float(1 / alpha) * (1 - missed)


def gl_tight_closed_form(r: int, m: int) -> tuple[Fraction, Fraction]:
    """
    Group Lottery utilities of the single and of each couple on ``one single + (m-1) couples`` with ``2r - 1`` tickets.
    """
    return Fraction(r, m), Fraction(r - 1, m - 1)


def il_bad_proof_bounds(r: int, s: int, alpha) -> tuple[float, float]:
    """
    Ceilings on the Individual Lottery's utilization and fairness on one group of ``s`` among ``s(r-1)`` singletons.
    """
    draws = math.floor(as_fraction(alpha, "alpha") * r)
    return (r - 1) / s + 1 / draws, float(as_fraction(alpha, "alpha")) * r * r / s


def il_limit_bad_proof_bounds(ell: int, m: int, k: int) -> tuple[float, float]:
    """
    Ceilings on the limited Individual Lottery's utilization and fairness on one singleton among groups of ``ell + 1``.
    """
    n = 1 + (m - 1) * (ell + 1)
    pairs = math.comb(ell + 1, 2)
    return (2 + (k - 1) * (ell + 1) * ell) / (2 * n), k * (k - 1) / (math.ceil(k / ell) * (n - 1)) * pairs


def badnews_efficiency_ceiling(m: int, s: int, r: int, epsilon: float) -> float:
    """
    The best utilization an ``epsilon``-fair allocation can reach on one group of ``s - 1`` and ``m - 1`` groups of ``s``
    with ``rs - 1`` tickets.
    """
    k = r * s - 1
    return 1 - (1 - (r - 1) / (epsilon * (m - 1))) * (s - 1) / k


@dataclass
class BestResponseRecord:
    best_actions: list
    best_utility: float
    group_request_utility: float
    utilities: list[tuple[object, float]]


def _set_partitions(items: list[int]):
    if not items:
        yield []
        return
    head, rest = items[0], items[1:]
    for partition in _set_partitions(rest):
        for index in range(len(partition)):
            yield partition[:index] + [[head] + partition[index]] + partition[index + 1:]
        yield [[head]] + partition


def declaration_universe(inst: Instance, group: int) -> list[list[frozenset]]:
    """
    Every partition of the group into declared blocks, plus the whole group declaring one outsider as a member.
    Each entry lists the members' declarations in member order.
    """
    members = list(inst.members(group))
    universe = []
    for partition in _set_partitions(members):
        block_of = {agent: frozenset(block) for block in partition for agent in block}
        universe.append([block_of[agent] for agent in members])
    for outsider in range(inst.n):
        if outsider not in members:
            universe.append([frozenset(members + [outsider])] * len(members))
    return universe


def request_universe(inst: Instance, group: int, cap: int = None) -> list[list[int]]:
    """
    Request vectors in ``1..cap`` up to permutation; ``cap`` defaults to ``k``.
    """
    size = inst.group_sizes[group]
    cap = inst.k if cap is None else min(cap, inst.k)
    return [list(requests) for requests in itertools.combinations_with_replacement(range(1, cap + 1), size)]


def best_response_search(kind: MechanismKind, inst: Instance, target_group: int, opponents_profile: ActionProfile = None,
                         action_universe: list = None, limit: int = None) -> BestResponseRecord:
    """
    Maximizes the target group's exact utility over a finite set of joint actions, opponents fixed.
    :param kind: The mechanism.
    :param inst: The instance.
    :param target_group: The deviating group.
    :param opponents_profile: The profile opponents play; defaults to group request.
    :param action_universe: The candidate joint actions of the group in member order; curated defaults otherwise.
    :param limit: The request limit, for the limited Individual Lottery.
    :return: Every maximizer, the maximum, and the group request utility.
    :raises TooLargeError: If exact evaluation is out of reach.
    """
    action_kind = action_kind_of(kind)
    truthful = ActionProfile.group_request(inst, action_kind, limit)
    base = truthful if opponents_profile is None else opponents_profile
    if action_universe is None:
        if action_kind == ActionKind.GROUP_DECLARATION:
            action_universe = declaration_universe(inst, target_group)
        else:
            action_universe = request_universe(inst, target_group, limit)

    truthful_actions = [truthful.actions[agent] for agent in inst.members(target_group)]
    group_request_utility = float(exact_utilities(kind, inst, base.with_group_actions(inst, target_group, truthful_actions), limit).values[target_group])

    utilities = []
    for actions in action_universe:
        profile = base.with_group_actions(inst, target_group, actions)
        utilities.append((actions, float(exact_utilities(kind, inst, profile, limit).values[target_group])))
    best = max(u for _, u in utilities)
    best_actions = [actions for actions, u in utilities if u >= best - 1e-12]
    logger.debug("best response for group %d: %g over %d actions", target_group, best, len(utilities))
    return BestResponseRecord(best_actions, best, group_request_utility, utilities)
