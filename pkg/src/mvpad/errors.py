"""Exception hierarchy shared across the package.

Every error that the command line surfaces carries a distinct exit code so
that callers can tell failure classes apart without parsing messages.
Exit codes 0-2 are left to the interpreter and argparse.
"""


class MvpadError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class InvalidArgumentError(MvpadError):
    """An argument value is outside its documented domain."""

    exit_code = 3


class HeaderFormatError(MvpadError):
    """A serialized header line is malformed or has the wrong magic."""

    exit_code = 4


class PayloadSizeError(MvpadError):
    """A serialized payload does not match the size announced in its header."""

    exit_code = 5


class UnknownDtypeError(MvpadError):
    """A serialized header names a dtype code this package does not define."""

    exit_code = 6


class DimensionMismatchError(MvpadError):
    """Two arrays that must share a shape (or grid geometry) do not."""

    exit_code = 7


class EmptyMaskError(MvpadError):
    """A mask or region that must contain foreground is empty."""

    exit_code = 8


class ComponentSplitError(MvpadError):
    """A binary mask cannot be split into the two requested components."""

    exit_code = 9


class ExtractorMismatchError(MvpadError):
    """Feature grids or banks built under different extractor configs were mixed."""

    exit_code = 10


class InsufficientDataError(MvpadError):
    """Not enough cases (or classes) to carry out the requested computation."""

    exit_code = 11


class AnomalyFitError(MvpadError):
    """A requested synthetic anomaly cannot be placed inside a lung."""

    exit_code = 12


class OverlapError(MvpadError):
    """Two volumes that must occupy disjoint regions overlap."""

    exit_code = 13
