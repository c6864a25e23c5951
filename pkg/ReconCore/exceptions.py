"""
Domain errors of the reconstruction toolkit.

Plain precondition violations raise ``ValueError``; the classes below mark
failures the command line maps to distinct exit codes.
"""

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class ReconError(Exception):
    """Base class for toolkit failures."""
    exit_code = 1


class DataError(ReconError):
    """Missing, unreadable or invalid on-disk data (manifests, arrays, checkpoints)."""
    exit_code = EXIT_DATA


class NumericalError(ReconError):
    """A computation produced a result that cannot be used."""
    exit_code = EXIT_NUMERICAL


class NonConvergenceError(NumericalError):
    """
    An iterative method hit its iteration cap.

    Attributes:
        last_estimate (float): The estimate after the final iteration.
    """

    def __init__(self, message, last_estimate):
        super().__init__(message)
        self.last_estimate = last_estimate


class NonFiniteError(NumericalError):
    """
    NaN or infinity in a named quantity (a gradient tensor, an iterate).

    Attributes:
        name (str): What went non-finite.
    """

    def __init__(self, message, name):
        super().__init__(message)
        self.name = name


class DivergenceError(NumericalError):
    """
    Training loss became non-finite.

    Attributes:
        stage (int): The series stage being trained.
        checkpoint (Path or None): Checkpoint of the last good epoch.
    """

    def __init__(self, message, stage, checkpoint=None):
        super().__init__(message)
        self.stage = stage
        self.checkpoint = checkpoint
