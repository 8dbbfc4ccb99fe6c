"""Exception taxonomy shared across the package.

Exit-code mapping for the CLI: ConfigError/DataError -> 2,
CompatibilityError -> 3, NumericError/TrainingError -> 4.
"""


class CovadaptError(Exception):
    """Base class for all package errors."""


class DimensionError(CovadaptError, ValueError):
    """Operands have incompatible shapes or empty extents."""


class ContractError(CovadaptError, ValueError):
    """An API precondition was violated by the caller."""


class DataError(CovadaptError, ValueError):
    """A dataset or record violates its declared schema."""


class ConfigError(CovadaptError, ValueError):
    """A configuration value is invalid or a config file is malformed."""


class NumericError(CovadaptError, ArithmeticError):
    """A computation produced non-finite values."""


class TrainingError(CovadaptError, RuntimeError):
    """Training diverged or could not proceed."""


class CompatibilityError(CovadaptError, ValueError):
    """Artifacts do not belong together (e.g. adapter vs. backbone hash)."""
