"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: validation-class errors exit 1,
file/format errors exit 2, numeric failures exit 3.
"""


class GameOnError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(GameOnError):
    """Tensor or feature shapes do not line up."""


class StructuralError(GameOnError):
    """A graph violates a structural requirement (empty graph, node with
    no incoming edges, ...)."""


class ContractError(GameOnError):
    """An API precondition was violated by the caller."""


class ValidationError(GameOnError):
    """User-supplied data or configuration failed validation."""


class FormatError(GameOnError):
    """A binary or text file does not parse as the expected format."""


class ResolutionError(GameOnError):
    """A manifest references files that cannot be found."""


class NumericError(GameOnError):
    """A non-finite value appeared where a finite one is required."""
