"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: InputError -> 2, ValidationError -> 3,
NumericalError -> 4. Usage errors are handled by the argument parser itself.
"""


class HarkError(Exception):
    """Base class for all toolkit errors."""


class InputError(HarkError):
    """A file is missing, truncated, or not in the expected format."""


class ValidationError(HarkError):
    """Inputs parse but violate a documented invariant."""


class NumericalError(HarkError):
    """A computation produced non-finite values or an undefined result."""


class UndefinedMetricError(NumericalError):
    """A metric is undefined for the given inputs (e.g. zero variance)."""
