"""Exception hierarchy. The CLI maps each family onto an exit code."""


class SpikeGraphError(Exception):
    exit_code = 1


class ConfigError(SpikeGraphError, ValueError):
    exit_code = 2


class DimensionError(SpikeGraphError, ValueError):
    exit_code = 2


class ContractError(SpikeGraphError, ValueError):
    """A precondition of an operation was violated by the caller."""

    exit_code = 2


class DataError(SpikeGraphError, ValueError):
    exit_code = 3


class NumericalError(SpikeGraphError, ArithmeticError):
    exit_code = 4
