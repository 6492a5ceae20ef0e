import enum


class PrintColour(enum.Enum):
    RED = "\033[91m"
    GREEN = "\033[92m"
    YELLOW = "\033[93m"
    BLUE = "\033[94m"
    PURPLE = "\033[95m"
    CYAN = "\033[96m"
    RESET = "\033[0m"

    def __str__(self) -> str:
        return self.value


class DyadState(enum.IntEnum):
    """Observation state of a single dyad."""

    OBSERVED_ABSENT = 0
    OBSERVED_PRESENT = 1
    MISSING = 2


class InformationMode(enum.Enum):
    OBSERVED = "observed"
    FISHER = "fisher"

    def __str__(self) -> str:
        return self.value

    @staticmethod
    def options() -> list[str]:
        return [v.value for v in InformationMode.__members__.values()]


class VarianceEstimator(enum.Enum):
    DIRECT = "direct"
    DIRECT_ADJUSTED = "direct-adjusted"
    TOTAL_VARIANCE = "total-variance"

    def __str__(self) -> str:
        return self.value

    @staticmethod
    def options() -> list[str]:
        return [v.value for v in VarianceEstimator.__members__.values()]


class TargetScope(enum.Enum):
    PER_NETWORK = "per-network"
    CUMULATIVE = "cumulative"

    def __str__(self) -> str:
        return self.value


class Identifiability(enum.Enum):
    IDENTIFIABLE = "identifiable"
    COMPLETE_DATA_SINGULAR = "complete-data singular"
    MISSINGNESS_INDUCED = "missingness-induced"

    def __str__(self) -> str:
        return self.value


class ExitCode(enum.IntEnum):
    SUCCESS = 0
    UNEXPECTED = 1
    USAGE = 2
    CONFIGURATION = 3
    SCHEMA = 4
    STRUCTURAL = 5
    NONIDENTIFIABLE = 6
    INFINITE_MLE = 7
    NONCONVERGENCE = 8
    SINGULAR_DESIGN = 9
    UNSUPPORTED_STATISTIC = 10
    ENUMERATION_CAP = 11
    ESTIMATOR = 12


ENV_PREFIX = "NETENSEMBLE_"

# Networks and enumeration
DEFAULT_MAX_NODES = 64
DEFAULT_ENUM_CAP = 20

# MCMC
DEFAULT_MCMC_SAMPLE_SIZE = 1024
DEFAULT_BURNIN_FACTOR = 10
DEFAULT_INTERVAL_FACTOR = 1

# Estimation
DEFAULT_MAX_ITERATIONS = 50
DEFAULT_TOLERANCE = 1e-8
DEFAULT_MC_TOLERANCE_SE = 4.0
DEFAULT_MAX_STEP = 1.0
DEFAULT_MAX_HALVINGS = 10
DEFAULT_PATH_STEPS = 16
DEFAULT_FISHER_OUTER = 100
DEFAULT_FISHER_INNER = 20

# Diagnostics
DEFAULT_R1 = 500
DEFAULT_R2 = 50
DEFAULT_SCORE_DRAWS = 1000
DEFAULT_SINGULAR_TOL = 1e-8
DEGENERATE_VARIANCE_TOL = 1e-12

# Significance stars, most stringent first
SIGNIFICANCE_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))

INTERCEPT = "1"
