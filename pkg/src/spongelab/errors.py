"""Exception hierarchy shared by every spongelab module."""


class SpongeLabError(Exception):
    """Base class for all library errors."""


class ValidationError(SpongeLabError, ValueError):
    """Bad input: wrong shape, out-of-range value, malformed file content."""


class DimensionError(ValidationError):
    """Operand shapes do not line up."""


class ContractError(SpongeLabError, RuntimeError):
    """An API precondition on graph structure was violated."""


class NumericalError(SpongeLabError, ArithmeticError):
    """A NaN or infinity appeared in a computed value."""


class ConfigurationError(ValidationError):
    """A configuration cannot be realized (e.g. blob centers cannot be placed)."""


class GridCellError(SpongeLabError):
    """A grid cell failed; ``key`` identifies the cell."""

    def __init__(self, key, cause):
        super().__init__(f"grid cell {key} failed: {cause}")
        self.key = key
        self.cause = cause
