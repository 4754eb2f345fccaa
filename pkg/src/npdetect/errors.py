"""Exception hierarchy shared by every stage of the pipeline."""


class NpDetectError(Exception):
    """Base class for all package errors."""


class ValidationError(NpDetectError, ValueError):
    """Bad input data or configuration (CLI exit code 2)."""


class SolverError(NpDetectError, RuntimeError):
    """An optimizer failed to converge or diverged (CLI exit code 3).

    Attributes
    ----------
    violation : float or None
        Final KKT violation for the SVM solver, if known.
    """

    def __init__(self, message, violation=None):
        super().__init__(message)
        self.violation = violation


class TrainingError(SolverError):
    """VAE training produced a non-finite objective."""

    def __init__(self, message, epoch=None, batch=None, term=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.term = term
