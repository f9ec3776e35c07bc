import argparse
import itertools
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .enums import MechanismKind, ConstructionTag, Suite, OutputFormat, get_from_value
from .exceptions import LotteryError, ParamViolationError, TooLargeError
from .instance import (
    Instance, NamedConstruction, SizeLaw, KRule, generate_named, generate_random, instance_stats
)
from .mechanisms import ActionProfile, action_kind_of, derive_seed
from .evaluation import (
    OutcomeReport, exact_utilities, exact_envy, monte_carlo, envy_matrix, write_csv, REPORT_COLUMNS, FLOAT_FORMAT
)
from .analysis import bounds
from .verify import run_suite

logger = logging.getLogger(__name__)

SWEEP_LIMIT = 64

NAMED_PARAMS = {
    "r": int, "s": int, "m": int, "n": int, "k": int, "ell": int, "couples": int, "s_max": int,
    "alpha": str, "kappa": str,
}

BOUND_COLUMNS = [
    "instance_id", "n", "k", "m", "kappa", "alpha", "ell", "gl_eff", "gl_fair", "iw_eff", "iw_fair", "glr_utility",
    "benchmark_eff", "benchmark_fair", "il_limit_eff", "il_limit_fair"
]

SUITE_COLUMNS = ["suite", "seed", "size", "checks", "failures", "passed"]


@dataclass(frozen=True)
class RandomSpec:
    n_groups: int
    size_law: SizeLaw
    k_rule: KRule
    seed: int


@dataclass(frozen=True)
class RunConfig:
    """
    Everything one invocation needs, read from the command line once.
    The instance source is a file path, a NamedConstruction or a RandomSpec.
    """
    command: str
    instance_source: str | NamedConstruction | RandomSpec | None = None
    mechanisms: tuple[MechanismKind, ...] = ()
    limit: int | None = None
    replicas: int | None = None
    seed: int | None = None
    out: str | None = None
    workers: int = 1
    format: OutputFormat = OutputFormat.CSV
    method: str = "auto"
    profile_path: str | None = None
    envy: bool = False
    suites: tuple[Suite, ...] = ()
    size: int | None = None
    grid: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> 'RunConfig':
        """
        Builds the RunConfig from parsed arguments.
        :raises ParamViolationError: If flags conflict or a value is unknown.
        """
        output_format = get_from_value(OutputFormat, args.format)
        if output_format is None:
            raise ParamViolationError(f"Unknown format '{args.format}'.")
        if args.workers < 1:
            raise ParamViolationError(f"Worker count must be positive, got {args.workers}.")

        mechanisms = ()
        if getattr(args, "mech", None):
            mechanisms = tuple(_parse_mechanism(name) for name in args.mech.split(","))

        suites = ()
        if args.command == "verify":
            suites = tuple(Suite) if args.suite == "all" else (get_from_value(Suite, args.suite),)

        grid = {}
        for entry in getattr(args, "grid", None) or []:
            name, _, values = entry.partition("=")
            if name not in NAMED_PARAMS or not values:
                raise ParamViolationError(f"Malformed grid entry '{entry}', expected name=v1,v2,...")
            grid[name] = [_parse_param(name, value) for value in values.split(",")]

        source = None
        if args.command in ("gen", "eval", "bounds", "sweep"):
            source = _instance_source(args)

        return cls(
            command=args.command,
            instance_source=source,
            mechanisms=mechanisms,
            limit=getattr(args, "limit", None),
            replicas=getattr(args, "replicas", None),
            seed=args.seed,
            out=args.out,
            workers=args.workers,
            format=output_format,
            method=getattr(args, "method", "auto"),
            profile_path=getattr(args, "profile", None),
            envy=getattr(args, "envy", False),
            suites=suites,
            size=getattr(args, "size", None),
            grid=grid
        )


def _parse_mechanism(name: str) -> MechanismKind:
    kind = get_from_value(MechanismKind, name.strip())
    if kind is None:
        raise ParamViolationError(f"Unknown mechanism '{name}'.")
    return kind


def _parse_param(name: str, raw: str):
    if NAMED_PARAMS[name] is int:
        try:
            return int(raw)
        except ValueError:
            raise ParamViolationError(f"Parameter '{name}' must be an integer, got '{raw}'.")
    return raw


def _named_params(args: argparse.Namespace) -> dict:
    return {name: getattr(args, name) for name in NAMED_PARAMS if getattr(args, name, None) is not None}


def _instance_source(args: argparse.Namespace) -> str | NamedConstruction | RandomSpec:
    chosen = [bool(getattr(args, "instance", None)), bool(args.named), bool(args.random)]
    if sum(chosen) != 1:
        raise ParamViolationError("Give exactly one of --instance, --named or --random.")
    if getattr(args, "instance", None):
        return args.instance
    if args.named:
        tag = get_from_value(ConstructionTag, args.named)
        if tag is None:
            raise ParamViolationError(f"Unknown construction '{args.named}'.")
        return NamedConstruction(tag, _named_params(args))

    if args.seed is None:
        raise ParamViolationError("Random instances need --seed.")
    if args.groups is None:
        raise ParamViolationError("Random instances need --groups.")
    low, _, high = args.sizes.partition(":")
    try:
        low, high = int(low), int(high or low)
    except ValueError:
        raise ParamViolationError(f"Malformed --sizes '{args.sizes}', expected min:max.")
    try:
        weights = None if args.weights is None else tuple(float(w) for w in args.weights.split(","))
    except ValueError:
        raise ParamViolationError(f"Malformed --weights '{args.weights}'.")
    if (args.k is None) == (args.alpha is None):
        raise ParamViolationError("Random instances need exactly one of --k or --alpha.")
    k_rule = KRule(fixed=args.k) if args.k is not None else KRule(alpha=args.alpha)
    return RandomSpec(args.groups, SizeLaw(low, high, weights), k_rule, args.seed)


def load_instance(source: str | NamedConstruction | RandomSpec) -> tuple[str, Instance]:
    """
    Resolves an instance source.
    :return: An identifier for reports and the Instance.
    """
    if isinstance(source, NamedConstruction):
        params = ",".join(f"{key}={value}" for key, value in source.params.items())
        return f"{source.tag.value}[{params}]", generate_named(source)
    if isinstance(source, RandomSpec):
        return f"random[{source.seed}]", generate_random(source.n_groups, source.size_law, source.k_rule, source.seed)
    path = Path(source)
    with path.open() as file:
        return path.stem, Instance.from_json(json.load(file))


def _emit(text: str, config: RunConfig):
    if config.out is None:
        sys.stdout.write(text)
        return
    with open(config.out, "w", newline="") as file:
        file.write(text)
    logger.info("wrote %s", config.out)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _load_profile(path: str) -> ActionProfile:
    with open(path) as file:
        return ActionProfile.from_json(json.load(file))


def evaluate(instance_id: str, inst: Instance, kind: MechanismKind, config: RunConfig, seed: int = None,
             profile: ActionProfile = None) -> OutcomeReport:
    """
    Evaluates one mechanism on one instance: exactly when possible (unless Monte Carlo is forced),
    by Monte Carlo otherwise. Bounds are attached only under group request.
    :raises ParamViolationError: If Monte Carlo is needed but replicas or seed are missing.
    """
    seed = config.seed if seed is None else seed
    limit = config.limit
    if profile is not None and profile.kind != action_kind_of(kind):
        raise ParamViolationError(f"A {profile.kind.value} profile does not fit {kind.value}.")

    utility = None
    if config.method != "mc":
        try:
            utility = exact_utilities(kind, inst, profile, limit)
        except TooLargeError as e:
            if config.method == "exact":
                raise
            logger.info("%s on %s: %s, falling back to Monte Carlo", kind.value, instance_id, e)
    if utility is None:
        if config.replicas is None or seed is None:
            raise ParamViolationError(f"Monte Carlo for {kind.value} on {instance_id} needs --replicas and --seed.")
        utility = monte_carlo(kind, inst, profile, config.replicas, seed, config.workers, limit)

    envy = None
    if config.envy:
        if utility.method.is_exact:
            try:
                envy = exact_envy(kind, inst, profile, limit)
            except TooLargeError:
                envy = None
        if envy is None and config.replicas is not None and seed is not None:
            envy = envy_matrix(kind, inst, profile, config.replicas, seed, config.workers, limit)

    bound_eff = bound_fair = None
    if profile is None:
        bound_eff, bound_fair = bounds(inst, limit).for_mechanism(kind)
    return OutcomeReport(instance_id, kind, inst, utility, instance_stats(inst), envy, bound_eff, bound_fair)


def _render_reports(reports: list[OutcomeReport], config: RunConfig) -> str:
    if config.format == OutputFormat.JSON:
        return _dump_json([report.to_json() for report in reports])
    return write_csv([row for report in reports for row in report.rows()], REPORT_COLUMNS)


def cmd_gen(config: RunConfig) -> int:
    instance_id, inst = load_instance(config.instance_source)
    stats = instance_stats(inst).to_json()
    if config.out is None:
        sys.stdout.write(_dump_json(inst.to_json()))
        sys.stderr.write(_dump_json(stats))
    else:
        _emit(_dump_json(inst.to_json()), config)
        sys.stdout.write(_dump_json(stats))
    logger.info("generated %s: %r", instance_id, inst)
    return 0


def cmd_eval(config: RunConfig) -> int:
    if not config.mechanisms:
        raise ParamViolationError("eval needs --mech.")
    instance_id, inst = load_instance(config.instance_source)
    profile = None if config.profile_path is None else _load_profile(config.profile_path)
    reports = [evaluate(instance_id, inst, kind, config, profile=profile) for kind in config.mechanisms]
    _emit(_render_reports(reports, config), config)
    return 0 if all(report.passed for report in reports) else 1


def sweep_points(config: RunConfig) -> list[NamedConstruction]:
    """
    Expands the grid into one construction per point, in row-major order of the grid entries.
    :raises ParamViolationError: If the grid has more than 64 points or the source is not a construction.
    """
    if not isinstance(config.instance_source, NamedConstruction):
        raise ParamViolationError("sweep needs --named.")
    names = list(config.grid)
    count = 1
    for values in config.grid.values():
        count *= len(values)
    if count > SWEEP_LIMIT:
        raise ParamViolationError(f"Sweep grid has {count} points, the cap is {SWEEP_LIMIT}.")
    base = config.instance_source
    points = []
    for values in itertools.product(*(config.grid[name] for name in names)):
        params = dict(base.params)
        params.update(zip(names, values))
        points.append(NamedConstruction(base.tag, params))
    return points


def cmd_sweep(config: RunConfig) -> int:
    if not config.mechanisms:
        raise ParamViolationError("sweep needs --mech.")
    reports = []
    for index, point in enumerate(sweep_points(config)):
        instance_id, inst = load_instance(point)
        seed = None if config.seed is None else derive_seed(config.seed, index)
        for kind in config.mechanisms:
            reports.append(evaluate(instance_id, inst, kind, config, seed=seed))
    _emit(_render_reports(reports, config), config)
    return 0 if all(report.passed for report in reports) else 1


def cmd_bounds(config: RunConfig) -> int:
    instance_id, inst = load_instance(config.instance_source)
    record = bounds(inst, config.limit)
    if config.format == OutputFormat.JSON:
        _emit(_dump_json({"instance_id": instance_id, "stats": instance_stats(inst).to_json(), "bounds": record.to_json()}), config)
        return 0
    row = {"instance_id": instance_id, "n": inst.n, "k": inst.k, "m": inst.m, "ell": "" if record.ell is None else record.ell}
    row["kappa"] = format(record.kappa, FLOAT_FORMAT)
    row["alpha"] = format(record.alpha, FLOAT_FORMAT)
    for name, value in record.clamped().items():
        row[name] = "" if value is None else format(value, FLOAT_FORMAT)
    _emit(write_csv([row], BOUND_COLUMNS), config)
    return 0


def cmd_verify(config: RunConfig) -> int:
    results = [run_suite(suite, config.seed, config.size) for suite in config.suites]
    for result in results:
        for failure in result.failures[:20]:
            logger.error("%s: %s", result.suite.value, failure)
    if config.format == OutputFormat.JSON:
        _emit(_dump_json([result.to_json() for result in results]), config)
    else:
        rows = [{
            "suite": result.suite.value,
            "seed": "" if result.seed is None else result.seed,
            "size": result.size,
            "checks": result.checks,
            "failures": len(result.failures),
            "passed": "PASS" if result.passed else "FAIL",
        } for result in results]
        _emit(write_csv(rows, SUITE_COLUMNS), config)
    return 0 if all(result.passed for result in results) else 1


command_lookup = {
    "gen": cmd_gen,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "bounds": cmd_bounds,
    "verify": cmd_verify,
}


def _add_source_arguments(parser: argparse.ArgumentParser, with_file: bool = True):
    if with_file:
        parser.add_argument("-i", "--instance", type=str, help="Instance JSON file")
    parser.add_argument("--named", type=str, choices=[tag.value for tag in ConstructionTag])
    parser.add_argument("--random", action="store_true", help="Draw a random instance (needs --seed)")
    parser.add_argument("--groups", type=int, help="Number of groups of a random instance")
    parser.add_argument("--sizes", type=str, default="1:1", help="Group size range min:max of a random instance")
    parser.add_argument("--weights", type=str, help="Comma separated size weights of a random instance")
    for name, kind in NAMED_PARAMS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Master seed, required for anything stochastic")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-o", "--out", type=str, default=None)
    common.add_argument("--format", choices=[f.value for f in OutputFormat], default=OutputFormat.CSV.value)
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="lottery", description="Group lottery mechanisms: generate, evaluate, verify")
    sub = parser.add_subparsers(dest="command", required=True)

    pg = sub.add_parser("gen", parents=[common], help="Write an instance file")
    _add_source_arguments(pg, with_file=False)

    for name, help_text in (("eval", "Evaluate mechanisms on one instance"), ("sweep", "Evaluate over a parameter grid")):
        pe = sub.add_parser(name, parents=[common], help=help_text)
        _add_source_arguments(pe, with_file=name == "eval")
        pe.add_argument("--mech", type=str, default="gl", help="Comma separated mechanisms")
        pe.add_argument("--replicas", type=int)
        pe.add_argument("--limit", type=int, help="Request limit of il_limit")
        pe.add_argument("--method", choices=["auto", "exact", "mc"], default="auto")
        pe.add_argument("--envy", action="store_true")
        if name == "eval":
            pe.add_argument("--profile", type=str, help="Action profile JSON file")
        else:
            pe.add_argument("--grid", action="append", help="name=v1,v2,... (repeatable)")

    pb = sub.add_parser("bounds", parents=[common], help="Report worst-case guarantees")
    _add_source_arguments(pb)
    pb.add_argument("--limit", type=int)

    pv = sub.add_parser("verify", parents=[common], help="Run a validation suite")
    pv.add_argument("suite", choices=[suite.value for suite in Suite] + ["all"])
    pv.add_argument("--samples", "--cases", "--replicas", "--draws", dest="size", type=int)
    return parser


def main(argv: list[str] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = RunConfig.from_args(args)
        return command_lookup[config.command](config)
    except LotteryError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 2
    except (OSError, json.JSONDecodeError) as e:
        logger.error("%s", e)
        return 2
