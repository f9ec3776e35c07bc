from enum import Enum
try:
    from enum import EnumType
except ImportError:  # Python < 3.11
    from enum import EnumMeta as EnumType

def get_from_value(enum: EnumType, value):
    for member in enum:
        if member.value == value:
            return member

class MechanismKind(Enum):
    GROUP_LOTTERY = "gl"
    INDIVIDUAL_LOTTERY = "il"
    INDIVIDUAL_LOTTERY_LIMIT = "il_limit"
    WEIGHTED_INDIVIDUAL_LOTTERY = "iw"
    GROUP_LOTTERY_REPLACEMENT = "glr"
    FAIR_GROUP_LOTTERY = "fair_gl"

class ActionKind(Enum):
    GROUP_DECLARATION = "group_declaration"
    TICKET_REQUEST = "ticket_request"

class OrderLaw(Enum):
    UNIFORM_PERM = "uniform_perm"
    WEIGHTED_PERM = "weighted_perm"
    WITH_REPLACEMENT = "with_replacement"

class EvaluationMethod(Enum):
    EXACT_ENUM = "exact_enum"
    EXACT_DP = "exact_dp"
    EXACT_SUBSET_DP = "exact_subset_dp"
    EXACT_LOTTERY = "exact_lottery"
    MONTE_CARLO = "monte_carlo"

    @property
    def is_exact(self) -> bool:
        return self is not EvaluationMethod.MONTE_CARLO

class ConstructionTag(Enum):
    GL_TIGHT = "gl_tight"
    IL_BAD = "il_bad"
    IL_LIMIT_BAD = "il_limit_bad"
    SPL_EXAMPLE = "spl_example"
    SPL_TIGHT = "spl_tight"
    HAMILTON_LIKE = "hamilton_like"
    BIG_SUR_LIKE = "big_sur_like"
    BADNEWS = "badnews"

class Suite(Enum):
    DOMINANCE = "dominance"
    HITTING = "hitting"
    BR = "br"
    CONJECTURE = "conjecture"
    DISTRIBUTION = "distribution"
    THRESHOLD = "threshold"
    FAIR = "fair"

class OutputFormat(Enum):
    CSV = "csv"
    JSON = "json"
