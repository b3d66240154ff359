"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class SimbaError(Exception):
    exit_code = 1
    code = "error"


class ConfigError(SimbaError, ValueError):
    """Malformed configuration or parameter values."""
    exit_code = 2
    code = "config"


class ParameterError(ConfigError):
    code = "parameter"


class NegativeRateError(ParameterError):
    code = "negative_rate"


class ProbabilityRangeError(ParameterError):
    code = "probability_range"


class PartitionError(ConfigError):
    code = "partition"


class PartitionCoverError(PartitionError):
    code = "partition_cover"


class PartitionOverlapError(PartitionError):
    code = "partition_overlap"


class DataError(SimbaError, ValueError):
    """Observation/trajectory data that does not conform to the model."""
    exit_code = 3
    code = "data"


class NumericalError(SimbaError, ArithmeticError):
    """-inf likelihoods, weight collapse, failed optimisation."""
    exit_code = 4
    code = "numerical"


class UndefinedConditionalError(NumericalError):
    pass


class DegenerateKernelError(NumericalError):
    pass


class OptimizationError(NumericalError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class OutbreakError(NumericalError):
    pass


class UnsupportedModelError(ConfigError):
    pass


class CapacityError(SimbaError):
    """A size guard (joint state space, block size) was exceeded."""
    exit_code = 5
    code = "capacity"
