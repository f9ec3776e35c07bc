import collections
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chisquare

from .enums import Suite, MechanismKind
from .exceptions import BoundViolationError, ParamViolationError
from .instance import Instance
from .mechanisms import (
    make_stream, derive_seed, sample_uniform_order, insertion_order, sample_weighted_order,
    sample_coupled_triple, coupled_successes, allocate_individual, build_fair_lottery
)
from .evaluation import exact_utilities, utilization, weighted_order_probability, expected_hitting_times, CI_MULTIPLIER
from .analysis import (
    ThresholdContext, group_succeeds, enumerate_br, conjecture_probe, hitting_time_bounds, size_counts_of,
    BR_SIZE_LIMIT
)

logger = logging.getLogger(__name__)

# fixed seeds used when none is given
DEFAULT_SEEDS = {
    Suite.DOMINANCE: 3,
    Suite.HITTING: 5,
    Suite.CONJECTURE: 7,
    Suite.DISTRIBUTION: 11,
    Suite.THRESHOLD: 13,
    Suite.FAIR: 17,
}

# default battery size: samples, cases or draws depending on the suite
DEFAULT_SIZES = {
    Suite.DOMINANCE: 10000,
    Suite.HITTING: 1000,
    Suite.BR: BR_SIZE_LIMIT,
    Suite.CONJECTURE: 100000,
    Suite.DISTRIBUTION: 60000,
    Suite.THRESHOLD: 10000,
    Suite.FAIR: 30,
}

CHI_SQUARE_LEVEL = 1e-3
CONJECTURE_GRID = (0.25, 0.5, 0.75, 1.0)
CONJECTURE_MAX_SIZE = 5


@dataclass
class SuiteResult:
    """
    Outcome of one validation battery.
    """
    suite: Suite
    seed: int | None
    size: int
    checks: int = 0
    failures: list[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.failures

    def check(self, ok: bool, message: str):
        self.checks += 1
        if not ok:
            self.failures.append(message)

    def to_json(self) -> dict:
        return {
            "suite": self.suite.value,
            "seed": self.seed,
            "size": self.size,
            "checks": self.checks,
            "failures": list(self.failures),
            "passed": self.passed,
            "details": self.details,
        }

    def __repr__(self):
        return f"SuiteResult({self.suite.value}, checks={self.checks}, failures={len(self.failures)})"


def _random_instance(seed: int, max_groups: int, max_size: int) -> Instance:
    # k uniform in [max(1, s_max - 1), n - 1] so every instance is valid and most bounds are not vacuous
    stream = make_stream(seed)
    while True:
        groups = int(stream.integers(2, max_groups + 1))
        sizes = stream.integers(1, max_size + 1, size=groups).tolist()
        n = sum(sizes)
        low = max(1, max(sizes) - 1)
        if low <= n - 1:
            return Instance(int(stream.integers(low, n)), list(sizes))


def verify_dominance(seed: int, samples: int, instances: int = 20) -> SuiteResult:
    """
    On random instances, the replacement, weighted and plain lotteries run on one coupled draw
    never let a group succeed under a weaker mechanism and fail under a stronger one.
    """
    result = SuiteResult(Suite.DOMINANCE, seed, samples)
    per_instance = max(1, samples // instances)
    violations = 0
    for index in range(instances):
        inst = _random_instance(derive_seed(seed, index), 8, 3)
        stream = make_stream(derive_seed(seed, instances + index))
        for sample in range(per_instance):
            gr, iw, gl = coupled_successes(inst, sample_coupled_triple(inst, stream))
            bad = np.flatnonzero((gr & ~iw) | (iw & ~gl))
            result.checks += 1
            if bad.size:
                violations += 1
                result.failures.append(f"{inst!r} sample {sample}: groups {bad.tolist()} break the ordering")
    result.details = {"instances": instances, "samples_per_instance": per_instance, "violations": violations}
    return result


def verify_hitting(seed: int, cases: int) -> SuiteResult:
    """
    For random size vectors with up to 12 elements of size at most 4, every budget ``k`` keeps ``E[tau(k)]``
    inside its interval, and every pair of budgets is subadditive.
    """
    result = SuiteResult(Suite.HITTING, seed, cases)
    stream = make_stream(seed)
    for _ in range(cases):
        sizes = stream.integers(1, 5, size=int(stream.integers(1, 13))).tolist()
        profile = expected_hitting_times(size_counts_of(sizes))
        total = len(profile) - 1
        for k in range(1, total + 1):
            lower, upper = hitting_time_bounds(sizes, k)
            result.check(lower - 1e-9 <= profile[k] <= upper + 1e-9,
                         f"sizes {sizes}, k={k}: E[tau]={profile[k]:.10g} outside [{lower:.10g}, {upper:.10g}]")
        for first in range(1, total):
            seconds = np.arange(first, total - first + 1)
            ok = profile[first] + profile[seconds] >= profile[first + seconds] - 1e-9
            result.check(bool(ok.all()), f"sizes {sizes}: subadditivity fails at k={first}")
    return result


def verify_br(seed: int | None, max_size: int) -> SuiteResult:
    """
    Every strategy of every class ``r < s`` for ``s <= max_size`` keeps ``sum 1/a <= r + 1``,
    and group request sits in class 0.
    """
    result = SuiteResult(Suite.BR, None, max_size)
    counts = {}
    for s in range(1, max_size + 1):
        for r in range(s):
            try:
                strategies = enumerate_br(s, r)
            except BoundViolationError as e:
                result.check(False, str(e))
                continue
            for strategy in strategies:
                result.check(strategy.reciprocal_sum <= r + 1, f"{strategy.requests}: reciprocal sum above {r + 1}")
            counts[f"{s}/{r}"] = len(strategies)
        result.check(any(x.requests == (s,) * s for x in enumerate_br(s, 0)), f"group request missing from class 0 at s={s}")
    result.details = {"strategies": counts}
    return result


def verify_conjecture(seed: int, replicas: int) -> SuiteResult:
    """
    For thresholds ``T <= 1`` no strategy of any class beats group request, both on the exact objective
    and on its Monte Carlo estimate within the CI multiplier.
    """
    result = SuiteResult(Suite.CONJECTURE, seed, replicas)
    worst = 0.0
    probe = 0
    for s in range(1, CONJECTURE_MAX_SIZE + 1):
        strategies = [x for r in range(s) for x in enumerate_br(s, r)]
        for T in CONJECTURE_GRID:
            for strategy in strategies:
                record = conjecture_probe(s, strategy.requests, T, replicas, derive_seed(seed, probe))
                probe += 1
                worst = max(worst, record.p_exact - record.p_group_request)
                result.check(record.p_exact <= record.p_group_request + 1e-12,
                             f"s={s}, T={T}, {strategy.requests}: exact {record.p_exact:.10g} > {record.p_group_request:.10g}")
                if strategy.requests == (s,) * s:
                    continue
                result.check(record.p_success <= record.p_group_request + CI_MULTIPLIER * record.standard_error,
                             f"s={s}, T={T}, {strategy.requests}: estimate {record.p_success:.10g} > {record.p_group_request:.10g}")
    result.details = {"probes": probe, "largest_exact_gap": worst}
    return result


def _chi_square(frequencies: collections.Counter, law: dict[tuple, float], draws: int) -> float:
    keys = list(law)
    observed = np.array([frequencies.get(key, 0) for key in keys], dtype=float)
    expected = np.array([law[key] for key in keys]) * draws
    expected *= observed.sum() / expected.sum()
    return float(chisquare(observed, expected).pvalue)


def verify_distribution(seed: int, draws: int) -> SuiteResult:
    """
    Chi-square tests of the sampled order laws: uniform, insertion, weighted (equal and unequal requests)
    and the two orders read off a coupled draw.
    """
    result = SuiteResult(Suite.DISTRIBUTION, seed, draws)
    elements = (0, 1, 2)
    uniform = {order: 1 / 6 for order in itertools.permutations(elements)}

    def sampled(sampler, label: int) -> collections.Counter:
        stream = make_stream(derive_seed(seed, label))
        return collections.Counter(sampler(stream) for _ in range(draws))

    requests = np.array([1.0, 2.0, 3.0])
    weighted = {order: weighted_order_probability(order, 1 / requests) for order in itertools.permutations(elements)}

    inst = Instance(3, [1, 1, 2])
    agent_requests = inst.sizes[inst.group_of].astype(float)
    iw_law = {order: weighted_order_probability(order, 1 / agent_requests) for order in itertools.permutations(range(inst.n))}
    gl_law = {order: 1 / 6 for order in itertools.permutations(range(inst.m))}

    tests = {
        "uniform": (lambda stream: sample_uniform_order(elements, stream).as_tuple(), uniform),
        "insertion": (lambda stream: insertion_order(elements, (0, 2), stream).as_tuple(), uniform),
        "insertion_full": (lambda stream: insertion_order(elements, elements, stream).as_tuple(), uniform),
        "weighted_equal": (lambda stream: sample_weighted_order([2, 2, 2], stream).as_tuple(), uniform),
        "weighted": (lambda stream: sample_weighted_order([1, 2, 3], stream).as_tuple(), weighted),
    }
    p_values = {}
    for label, (name, (sampler, law)) in enumerate(tests.items()):
        p_values[name] = _chi_square(sampled(sampler, label), law, draws)

    stream = make_stream(derive_seed(seed, len(tests)))
    iw_counts, gl_counts = collections.Counter(), collections.Counter()
    for _ in range(draws):
        triple = sample_coupled_triple(inst, stream)
        iw_counts[tuple(triple.sigma_iw.tolist())] += 1
        gl_counts[tuple(triple.sigma_gl.tolist())] += 1
    p_values["coupled_weighted"] = _chi_square(iw_counts, iw_law, draws)
    p_values["coupled_groups"] = _chi_square(gl_counts, gl_law, draws)

    for name, p in p_values.items():
        result.check(p > CHI_SQUARE_LEVEL, f"{name}: chi-square p={p:.3g}")
    result.details = {"p_values": p_values}
    return result


def verify_threshold(seed: int, cases: int) -> SuiteResult:
    """
    The threshold criterion agrees exactly with running the individual allocation on the same scores.
    """
    result = SuiteResult(Suite.THRESHOLD, seed, cases)
    stream = make_stream(seed)
    for case in range(cases):
        k = int(stream.integers(1, 13))
        group_size = int(stream.integers(1, 5))
        outsiders = int(stream.integers(0, 7))
        cap = min(4, k)
        requests = stream.integers(1, cap + 1, size=group_size + outsiders)
        scores = requests * stream.standard_exponential(requests.size)

        ctx = ThresholdContext(k, group_size, list(zip(requests[group_size:].tolist(), scores[group_size:].tolist())))
        predicted = group_succeeds(ctx, requests[:group_size].tolist(), scores[:group_size].tolist())

        order = np.argsort(scores, kind="stable")
        allocation = allocate_individual(order, requests, k)
        actual = int(allocation.x[:group_size].sum()) >= group_size
        result.check(predicted == actual, f"case {case}: threshold says {predicted}, allocation says {actual}")
    return result


def verify_fair(seed: int, cases: int) -> SuiteResult:
    """
    On random instances with at most 12 groups the fair lottery hits ``u*`` exactly for every group,
    uses only feasible subsets, and reaches utilization ``1 - (s_max - 1)/k``.
    """
    result = SuiteResult(Suite.FAIR, seed, cases)
    supports = []
    for case in range(cases):
        inst = _random_instance(derive_seed(seed, case), 12, 4)
        lottery = build_fair_lottery(inst)
        supports.append(len(lottery.support))
        result.check(all(marginal == inst.u_star for marginal in lottery.marginals()), f"{inst!r}: marginals differ from u*")
        result.check(all(sum(inst.group_sizes[g] for g in subset) <= inst.k for subset, _ in lottery.support),
                     f"{inst!r}: infeasible subset in support")
        result.check(len(lottery.support) <= inst.m + 1, f"{inst!r}: support of {len(lottery.support)} subsets")
        u = exact_utilities(MechanismKind.FAIR_GROUP_LOTTERY, inst)
        expected = 1 - (inst.s_max - 1) / inst.k
        result.check(math.isclose(utilization(u, inst), expected, abs_tol=1e-9),
                     f"{inst!r}: utilization {utilization(u, inst):.10g}, expected {expected:.10g}")
    result.details = {"largest_support": max(supports, default=0)}
    return result


suite_lookup = {
    Suite.DOMINANCE: verify_dominance,
    Suite.HITTING: verify_hitting,
    Suite.BR: verify_br,
    Suite.CONJECTURE: verify_conjecture,
    Suite.DISTRIBUTION: verify_distribution,
    Suite.THRESHOLD: verify_threshold,
    Suite.FAIR: verify_fair,
}


def run_suite(suite: Suite, seed: int = None, size: int = None) -> SuiteResult:
    """
    Runs one validation battery.
    :param suite: The suite.
    :param seed: The master seed; the suite's documented default when omitted.
    :param size: Samples, cases, replicas or draws depending on the suite.
    :return: The SuiteResult.
    """
    if size is None:
        size = DEFAULT_SIZES[suite]
    if size < 1:
        raise ParamViolationError(f"Suite size must be positive, got {size}.")
    if seed is None:
        seed = DEFAULT_SEEDS.get(suite)
    result = suite_lookup[suite](seed, size)
    logger.info("%s: %d checks, %d failures", suite.value, result.checks, len(result.failures))
    return result
