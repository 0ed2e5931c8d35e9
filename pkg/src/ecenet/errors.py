"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, shape/data/config
problems exit 2, numerical failures exit 3.
"""


class EcenetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(EcenetError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(EcenetError):
    """A call violated an operation's preconditions (non-shape)."""


class ConfigError(EcenetError):
    """A configuration value or file is invalid."""


class DataError(EcenetError):
    """Input data (labels, files, fixtures) is malformed."""


class NumericalError(EcenetError):
    """A numerical check failed or a computation produced non-finite values."""


class TrainingDiverged(NumericalError):
    """Training hit a non-finite loss; message names the first bad tensor."""
