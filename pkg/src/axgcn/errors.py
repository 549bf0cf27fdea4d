"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage/config errors -> 1,
data errors -> 2, numerical errors -> 3.
"""


class AxgcnError(Exception):
    """Base class for all package errors."""


class UsageError(AxgcnError):
    """Invalid command-line usage or configuration value."""


class ParameterError(UsageError):
    """A model or algorithm parameter is outside its valid range."""


class ConfigurationError(UsageError):
    """Mutually inconsistent configuration (e.g. residual channel mismatch)."""


class DimensionError(AxgcnError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class DataError(AxgcnError):
    """Input data is malformed or unsuitable."""


class FormatError(DataError):
    """A session or model file does not follow its format."""


class ImputationError(DataError):
    """A joint has no valid observation anywhere in the sequence."""


class TopologyError(DataError):
    """A joint subgraph is disconnected."""


class VersionError(FormatError):
    """Model file header or version tag does not match."""


class NumericalError(AxgcnError, ArithmeticError):
    """Non-finite values or singular operations."""


class SingularityError(NumericalError):
    """Division by a (near-)zero divisor."""
