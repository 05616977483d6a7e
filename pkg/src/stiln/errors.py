"""Exception types shared across the package."""


class StilnError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(StilnError):
    """Operands have incompatible or unsupported shapes."""


class ContractError(StilnError):
    """An API was used outside its supported protocol.

    Examples: running backward twice through the same tape, stepping an
    optimizer over a parameter that never received a gradient buffer,
    normalizing a training batch of size one.
    """


class ConfigError(StilnError):
    """A configuration value is out of range or inconsistent."""


class NumericError(StilnError):
    """A numeric routine left its supported regime (singular solve, NaN)."""


class TrainingDivergedError(StilnError):
    """Loss became non-finite during optimization."""
