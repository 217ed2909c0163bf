"""Exception hierarchy shared by every subpackage.

The CLI maps these onto process exit codes, so each class carries the
code it should produce when it escapes a command.
"""


class AdacredError(Exception):
    exit_code = 1


class ParameterError(AdacredError, ValueError):
    """Out-of-range scalar argument (temperature, discount, density...)."""

    exit_code = 2


class DimensionError(AdacredError, ValueError):
    """Shapes that cannot be combined."""

    exit_code = 2


class ContractError(AdacredError, RuntimeError):
    """A caller broke a documented precondition."""


class RangeError(AdacredError, IndexError):
    exit_code = 2


class SpecError(AdacredError, ValueError):
    """An environment specification could not be constructed."""

    exit_code = 2


class StateError(AdacredError, ValueError):
    pass


class PolicyError(AdacredError, ValueError):
    pass


class SamplingError(AdacredError, ValueError):
    pass


class FormatError(AdacredError):
    """A binary container failed validation; ``offset`` is the byte position."""

    exit_code = 4

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class NumericalError(AdacredError, ArithmeticError):
    """NaN/Inf reached a place where it must not propagate."""

    exit_code = 5


class CapacityError(AdacredError):
    """Exact enumeration would exceed the configured state budget."""

    exit_code = 2


class StatisticalPowerError(AdacredError):
    """Too few samples for the requested conditional-independence tests."""

    exit_code = 4


class DependencyError(AdacredError):
    """A required upstream artifact (checkpoint, dataset) is missing."""

    exit_code = 3


class ConfigError(AdacredError, ValueError):
    exit_code = 2
