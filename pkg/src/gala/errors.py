"""Exception hierarchy shared by every module."""


class GalaError(Exception):
    """Base class for all library errors."""


class FormatError(GalaError):
    """A file is missing or cannot be parsed."""


class IntegrityError(GalaError):
    """File contents parse but are mutually inconsistent."""


class DegenerateInputError(GalaError, ValueError):
    """Input is too small for the requested quantity to be defined."""


class ContractError(GalaError, ValueError):
    """A documented precondition was violated."""


class ArgumentError(ContractError):
    """An argument is outside its allowed range."""


class ShapeError(ContractError):
    """Tensor or matrix widths do not line up."""


class ModelError(GalaError):
    """A model is unusable: bad checkpoint, shape mismatch, non-finite weights."""


class SourceAccessError(GalaError):
    """Source-domain data was touched after adaptation started."""
