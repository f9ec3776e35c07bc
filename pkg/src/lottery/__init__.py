from .instance import Instance, FamilyParams, InstanceStats, NamedConstruction, SizeLaw, KRule, make_instance, instance_stats, generate_named, generate_random
from .mechanisms import ActionProfile, Allocation, DrawOrder, FairLottery, CoupledTriple, make_mechanism, run_mechanism, build_fair_lottery, tau
from .evaluation import UtilityVector, EnvyReport, OutcomeReport, exact_utilities, monte_carlo, utilization, fairness_ratio
from .analysis import BoundRecord, ThresholdContext, BrStrategy, bounds
from .enums import MechanismKind, ActionKind, OrderLaw, EvaluationMethod, ConstructionTag, Suite, OutputFormat
from . import analysis
from . import verify
from . import exceptions
