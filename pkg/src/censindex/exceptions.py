"""Exception hierarchy.

Every error carries a stable ``exit_code`` so the command line layer can map
failures onto its exit-status contract without inspecting messages.
"""


class CensIndexError(Exception):
    """Base class for all package errors."""

    exit_code = 4


class InvalidInputError(CensIndexError, ValueError):
    """Malformed data, configuration or argument."""

    exit_code = 2


class NumericalError(CensIndexError, ArithmeticError):
    """A numerical quantity could not be computed."""

    exit_code = 3


class SingularWeightError(NumericalError):
    """An inverse-censoring weight ``1 / (1 - G(z-))`` is infinite."""


class DegenerateWindowError(NumericalError):
    """No uncensored observation falls in the truncation window."""


class DegenerateObjectiveError(NumericalError):
    """Every likelihood term was excluded by trimming."""


class InsufficientDataError(NumericalError):
    """Too few contributing observations for the requested quantity."""


class SelectionError(NumericalError):
    """Bandwidth or truncation selection failed for every candidate."""

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = dict(failures or {})


class FitError(NumericalError):
    """Estimation pipeline failure, annotated with the pipeline stage."""

    def __init__(self, message, stage=None, trace=None):
        if stage is not None:
            message = f"[{stage}] {message}"
        super().__init__(message)
        self.stage = stage
        self.trace = list(trace or [])


class CalibrationError(NumericalError):
    """Censoring-rate calibration could not bracket the target."""


class HarnessError(NumericalError):
    """Too many Monte Carlo replications failed."""
