import math
import numbers
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .enums import ConstructionTag, get_from_value
from .exceptions import (
    EmptyGroupsError, NonPositiveError, DemandNotExceedingSupplyError, ParamViolationError,
    MalformedInstanceJSONError, MalformedConstructionJSONError
)


def as_fraction(value, name: str = "value") -> Fraction:
    """
    Reads a rational parameter given as an int, a float, a Fraction or a string such as ``"1/4"`` or ``"0.25"``.
    Floats are read through their shortest decimal representation, so ``0.3`` becomes exactly ``3/10``.
    :param value: The raw value.
    :param name: The parameter name, used in the error message.
    :return: The value as an exact Fraction.
    :raises ParamViolationError: If the value can not be read as a finite rational.
    """
    if isinstance(value, bool):
        raise ParamViolationError(f"Parameter '{name}' must be a number, got {value!r}.")
    try:
        if isinstance(value, Fraction):
            return value
        if isinstance(value, numbers.Integral):
            return Fraction(int(value))
        if isinstance(value, float):
            if not math.isfinite(value):
                raise ValueError
            return Fraction(repr(value))
        if isinstance(value, str):
            return Fraction(value.strip())
    except (ValueError, ZeroDivisionError):
        pass
    raise ParamViolationError(f"Parameter '{name}' must be a finite rational, got {value!r}.")


def _is_int(value) -> bool:
    return isinstance(value, numbers.Integral) and not isinstance(value, bool)


class Instance:
    """
    Marks an allocation instance: ``k`` identical tickets and a partition of ``n`` agents into groups.

    Agents carry flat ids ``0..n-1`` laid out group by group, so the members of group ``g`` are
    ``range(inst.offsets[g], inst.offsets[g] + inst.group_sizes[g])``.
    Use :func:`make_instance` or :meth:`from_json` to build one; the constructor validates the same way.
    """
    def __init__(self, k: int, group_sizes: list[int] | tuple[int, ...]):
        """
        Creates a new Instance.
        :param k: The number of tickets.
        :param group_sizes: The size of every group.
        :raises EmptyGroupsError: If there are no groups.
        :raises NonPositiveError: If ``k`` or any group size is not positive.
        :raises DemandNotExceedingSupplyError: If the number of agents does not exceed ``k``.
        """
        group_sizes = tuple(group_sizes)
        if len(group_sizes) == 0:
            raise EmptyGroupsError("An instance needs at least one group.")
        if not _is_int(k) or k <= 0:
            raise NonPositiveError(f"Ticket count must be a positive integer, got {k!r}.")
        for index, size in enumerate(group_sizes):
            if not _is_int(size) or size <= 0:
                raise NonPositiveError(f"Group {index} has non-positive size {size!r}.")

        n = sum(group_sizes)
        if n <= k:
            raise DemandNotExceedingSupplyError(f"Agent count n={n} must exceed ticket count k={k}.")

        self.k = int(k)
        self.group_sizes = tuple(int(size) for size in group_sizes)
        self.n = int(n)
        self.m = len(group_sizes)
        self.s_max = max(self.group_sizes)
        self.sizes = np.array(self.group_sizes, dtype=np.int64)
        self.offsets = np.concatenate(([0], np.cumsum(self.sizes)[:-1])).astype(np.int64)
        self.group_of = np.repeat(np.arange(self.m, dtype=np.int64), self.sizes)

    def members(self, group: int) -> range:
        """
        :param group: The group index.
        :return: The agent ids of the group.
        """
        start = int(self.offsets[group])
        return range(start, start + self.group_sizes[group])

    def agent_id(self, group: int, member: int) -> int:
        if not 0 <= member < self.group_sizes[group]:
            raise IndexError(f"Group {group} has no member {member}.")
        return int(self.offsets[group]) + member

    def agent_label(self, agent: int) -> tuple[int, int]:
        """
        Converts a flat agent id back into its ``(group index, member index)`` pair.
        """
        group = int(self.group_of[agent])
        return group, agent - int(self.offsets[group])

    def size_classes(self) -> list[int]:
        return sorted(set(self.group_sizes))

    def size_counts(self) -> dict[int, int]:
        counts = {}
        for size in self.group_sizes:
            counts[size] = counts.get(size, 0) + 1
        return dict(sorted(counts.items()))

    @property
    def u_star(self) -> Fraction:
        """
        The benchmark utility ``(k - s_max + 1) / n`` a fair lottery can give every agent.
        """
        return Fraction(self.k - self.s_max + 1, self.n)

    def to_json(self) -> dict:
        """
        Serializes the Instance into JSON.
        :return: The serialized JSON.
        """
        return {"k": self.k, "group_sizes": list(self.group_sizes)}

    @classmethod
    def from_json(cls, json: dict) -> 'Instance':
        """
        Reconstructs the Instance from the JSON.
        :param json: The JSON as a dictionary.
        :return: The Instance object.
        :raises MalformedInstanceJSONError: If the JSON is malformed or carries unknown keys.
        """
        if not isinstance(json, dict):
            raise MalformedInstanceJSONError("Instance is not a dict.")
        if "k" not in json:
            raise MalformedInstanceJSONError("No 'k' key present.")
        if "group_sizes" not in json:
            raise MalformedInstanceJSONError("No 'group_sizes' key present.")
        for key in json:
            if key not in ("k", "group_sizes"):
                raise MalformedInstanceJSONError(f"Unexpected key '{key}'.")

        if not _is_int(json["k"]):
            raise MalformedInstanceJSONError("Unexpected value for 'k'.")
        if not isinstance(json["group_sizes"], list) or not all(_is_int(s) for s in json["group_sizes"]):
            raise MalformedInstanceJSONError("Unexpected value for 'group_sizes'.")

        return cls(json["k"], json["group_sizes"])

    def __eq__(self, other):
        return isinstance(other, Instance) and self.k == other.k and self.group_sizes == other.group_sizes

    def __hash__(self):
        return hash((self.k, self.group_sizes))

    def __repr__(self):
        return f"Instance(k={self.k}, n={self.n}, m={self.m}, s_max={self.s_max})"


def make_instance(k: int, group_sizes: list[int]) -> Instance:
    """
    Builds a validated Instance.
    :param k: The number of tickets.
    :param group_sizes: The size of every group.
    :return: The Instance.
    """
    return Instance(k, group_sizes)


class FamilyParams:
    """
    The family of instances whose largest group wastes at most a ``kappa`` share of the tickets
    and whose supply covers at most an ``alpha`` share of the agents.
    """
    def __init__(self, kappa, alpha):
        self.kappa = as_fraction(kappa, "kappa")
        self.alpha = as_fraction(alpha, "alpha")
        if not 0 < self.kappa < 1:
            raise ParamViolationError(f"kappa must lie in (0, 1), got {self.kappa}.")
        if not 0 < self.alpha < 1:
            raise ParamViolationError(f"alpha must lie in (0, 1), got {self.alpha}.")

    def contains(self, inst: Instance) -> bool:
        return Fraction(inst.s_max - 1, inst.k) <= self.kappa and Fraction(inst.k, inst.n) <= self.alpha

    def __repr__(self):
        return f"FamilyParams(kappa={self.kappa}, alpha={self.alpha})"


@dataclass(frozen=True)
class InstanceStats:
    kappa_hat: float
    alpha_hat: float
    s_max: int
    benchmark_u_star: float
    n: int
    m: int
    k: int
    in_family: bool | None = None

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "n": self.n,
            "m": self.m,
            "s_max": self.s_max,
            "kappa_hat": self.kappa_hat,
            "alpha_hat": self.alpha_hat,
            "benchmark_u_star": self.benchmark_u_star,
            "in_family": self.in_family
        }


def instance_stats(inst: Instance, family: FamilyParams = None) -> InstanceStats:
    """
    Computes the family parameters the instance actually attains.
    :param inst: The instance.
    :param family: If given, ``in_family`` reports whether the instance belongs to it.
    :return: The statistics record.
    """
    return InstanceStats(
        kappa_hat=(inst.s_max - 1) / inst.k,
        alpha_hat=inst.k / inst.n,
        s_max=inst.s_max,
        benchmark_u_star=float(inst.u_star),
        n=inst.n,
        m=inst.m,
        k=inst.k,
        in_family=None if family is None else family.contains(inst)
    )


class NamedConstruction:
    """
    A named adversarial or real-world-shaped instance family together with its parameters.
    """
    def __init__(self, tag: ConstructionTag, params: dict = None):
        self.tag = tag
        self.params = dict(params or {})

    def to_json(self) -> dict:
        params = {}
        for key, value in self.params.items():
            params[key] = str(value) if isinstance(value, Fraction) else value
        return {"tag": self.tag.value, "params": params}

    @classmethod
    def from_json(cls, json: dict) -> 'NamedConstruction':
        """
        Reconstructs the NamedConstruction from the JSON.
        :param json: The JSON as a dictionary.
        :return: The NamedConstruction object.
        :raises MalformedConstructionJSONError: If the JSON is malformed or carries unknown keys.
        """
        if not isinstance(json, dict):
            raise MalformedConstructionJSONError("Construction is not a dict.")
        if "tag" not in json:
            raise MalformedConstructionJSONError("No 'tag' key present.")
        if "params" not in json:
            raise MalformedConstructionJSONError("No 'params' key present.")
        for key in json:
            if key not in ("tag", "params"):
                raise MalformedConstructionJSONError(f"Unexpected key '{key}'.")

        tag = get_from_value(ConstructionTag, json["tag"])
        if tag is None:
            raise MalformedConstructionJSONError("Unexpected value for 'tag'.")
        if not isinstance(json["params"], dict):
            raise MalformedConstructionJSONError("Unexpected value for 'params'.")
        allowed = _PARAM_NAMES[tag]
        for key in json["params"]:
            if key not in allowed:
                raise MalformedConstructionJSONError(f"Unexpected key 'params.{key}'.")

        return cls(tag, json["params"])

    def __repr__(self):
        args = ", ".join(f"{key}={value}" for key, value in self.params.items())
        return f"NamedConstruction({self.tag.value}, {args})"


_PARAM_NAMES = {
    ConstructionTag.GL_TIGHT: ("r", "m"),
    ConstructionTag.IL_BAD: ("r", "s", "alpha", "kappa"),
    ConstructionTag.IL_LIMIT_BAD: ("ell", "m", "k"),
    ConstructionTag.SPL_EXAMPLE: ("n",),
    ConstructionTag.SPL_TIGHT: ("m", "s", "alpha"),
    ConstructionTag.HAMILTON_LIKE: ("n", "k", "couples"),
    ConstructionTag.BIG_SUR_LIKE: ("n", "k", "s_max"),
    ConstructionTag.BADNEWS: ("m", "s", "r"),
}


def _require_int(params: dict, name: str, minimum: int, default: int = None) -> int:
    value = params.get(name, default)
    if value is None:
        raise ParamViolationError(f"Missing parameter '{name}'.")
    if not _is_int(value):
        raise ParamViolationError(f"Parameter '{name}' must be an integer, got {value!r}.")
    if value < minimum:
        raise ParamViolationError(f"Parameter '{name}' must be at least {minimum}, got {value}.")
    return int(value)


def _require_unit(params: dict, name: str) -> Fraction:
    if name not in params:
        raise ParamViolationError(f"Missing parameter '{name}'.")
    value = as_fraction(params[name], name)
    if not 0 < value < 1:
        raise ParamViolationError(f"Parameter '{name}' must lie in (0, 1), got {value}.")
    return value


def _gl_tight(params: dict) -> Instance:
    r = _require_int(params, "r", 1)
    m = _require_int(params, "m", 2)
    if m <= r:
        raise ParamViolationError(f"gl_tight needs m > r, got r={r}, m={m}.")
    return Instance(2 * r - 1, [1] + [2] * (m - 1))


def _il_bad(params: dict) -> Instance:
    r = _require_int(params, "r", 1)
    s = _require_int(params, "s", 1)
    alpha = _require_unit(params, "alpha")
    draws = math.floor(alpha * r)
    if draws < 1:
        raise ParamViolationError(f"il_bad needs floor(alpha*r) >= 1, got alpha={alpha}, r={r}.")
    if params.get("kappa") is not None:
        kappa = _require_unit(params, "kappa")
        if r < (kappa + 1) / (alpha * kappa):
            raise ParamViolationError(f"il_bad needs r >= (kappa+1)/(alpha*kappa) = {float((kappa + 1) / (alpha * kappa)):g}, got r={r}.")
    return Instance(draws * s, [s] + [1] * (s * (r - 1)))


def _il_limit_bad(params: dict) -> Instance:
    ell = _require_int(params, "ell", 1)
    m = _require_int(params, "m", 2)
    k = _require_int(params, "k", 1)
    return Instance(k, [1] + [ell + 1] * (m - 1))


def _spl_example(params: dict) -> Instance:
    n = _require_int(params, "n", 5)
    return Instance(n - 1, [4] + [1] * (n - 4))


def _spl_tight(params: dict) -> Instance:
    m = _require_int(params, "m", 1)
    s = _require_int(params, "s", 1)
    alpha = _require_unit(params, "alpha")
    draws = alpha * m
    if draws.denominator != 1:
        raise ParamViolationError(f"spl_tight needs alpha*m integral, got alpha*m = {draws}.")
    return Instance(int(draws) * s, [s] * m)


def _hamilton_like(params: dict) -> Instance:
    n = _require_int(params, "n", 2)
    k = _require_int(params, "k", 1, default=21)
    couples = _require_int(params, "couples", 0, default=n // 4)
    if 2 * couples > n:
        raise ParamViolationError(f"hamilton_like needs 2*couples <= n, got couples={couples}, n={n}.")
    return Instance(k, [2] * couples + [1] * (n - 2 * couples))


def _big_sur_like(params: dict) -> Instance:
    n = _require_int(params, "n", 2, default=1296)
    k = _require_int(params, "k", 1, default=702)
    s_max = _require_int(params, "s_max", 1, default=15)
    if s_max > n:
        raise ParamViolationError(f"big_sur_like needs s_max <= n, got s_max={s_max}, n={n}.")
    rest = n - s_max
    return Instance(k, [s_max] + [2] * (rest // 2) + [1] * (rest % 2))


def _badnews(params: dict) -> Instance:
    m = _require_int(params, "m", 2)
    s = _require_int(params, "s", 2)
    r = _require_int(params, "r", 1)
    if m <= r:
        raise ParamViolationError(f"badnews needs m > r, got m={m}, r={r}.")
    return Instance(r * s - 1, [s - 1] + [s] * (m - 1))


_BUILDERS = {
    ConstructionTag.GL_TIGHT: _gl_tight,
    ConstructionTag.IL_BAD: _il_bad,
    ConstructionTag.IL_LIMIT_BAD: _il_limit_bad,
    ConstructionTag.SPL_EXAMPLE: _spl_example,
    ConstructionTag.SPL_TIGHT: _spl_tight,
    ConstructionTag.HAMILTON_LIKE: _hamilton_like,
    ConstructionTag.BIG_SUR_LIKE: _big_sur_like,
    ConstructionTag.BADNEWS: _badnews,
}


def generate_named(spec: NamedConstruction) -> Instance:
    """
    Builds the instance a named construction describes.
    :param spec: The construction and its parameters.
    :return: The Instance.
    :raises ParamViolationError: If a side condition of the construction is violated.
    """
    for key in spec.params:
        if key not in _PARAM_NAMES[spec.tag]:
            raise ParamViolationError(f"Unknown parameter '{key}' for {spec.tag.value}.")
    return _BUILDERS[spec.tag](spec.params)


@dataclass(frozen=True)
class SizeLaw:
    """
    Categorical law over group sizes ``min_size..max_size``; uniform when no weights are given.
    """
    min_size: int
    max_size: int
    weights: tuple[float, ...] | None = None

    def probabilities(self) -> np.ndarray:
        if not _is_int(self.min_size) or self.min_size < 1:
            raise NonPositiveError(f"Minimum group size must be at least 1, got {self.min_size!r}.")
        if not _is_int(self.max_size) or self.max_size < self.min_size:
            raise ParamViolationError(f"Maximum group size {self.max_size!r} is below the minimum {self.min_size}.")
        count = self.max_size - self.min_size + 1
        if self.weights is None:
            return np.full(count, 1.0 / count)
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (count,):
            raise ParamViolationError(f"Expected {count} size weights, got {weights.size}.")
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ParamViolationError("Size weights must be nonnegative and not all zero.")
        return weights / weights.sum()


@dataclass(frozen=True)
class KRule:
    """
    Chooses the ticket count: a fixed ``k`` or ``floor(alpha * n)``.
    """
    fixed: int | None = None
    alpha: Fraction | float | str | None = field(default=None)

    def resolve(self, n: int) -> int:
        if (self.fixed is None) == (self.alpha is None):
            raise ParamViolationError("A k rule needs exactly one of 'fixed' or 'alpha'.")
        if self.fixed is not None:
            return self.fixed
        return math.floor(as_fraction(self.alpha, "alpha") * n)


def generate_random(n_groups: int, size_law: SizeLaw, k_rule: KRule, seed: int) -> Instance:
    """
    Draws group sizes i.i.d. from the size law. The result is a pure function of the arguments.
    :param n_groups: The number of groups.
    :param size_law: The categorical law of group sizes.
    :param k_rule: How the ticket count is chosen.
    :param seed: The 64-bit seed.
    :return: The Instance.
    :raises DemandNotExceedingSupplyError: If the draw yields ``n <= k``.
    """
    if not _is_int(n_groups) or n_groups < 1:
        raise EmptyGroupsError(f"Need at least one group, got {n_groups!r}.")
    probabilities = size_law.probabilities()
    rng = np.random.default_rng(seed)
    sizes = size_law.min_size + rng.choice(probabilities.size, size=n_groups, p=probabilities)
    sizes = [int(size) for size in sizes]
    return Instance(k_rule.resolve(sum(sizes)), sizes)
