"""Exception types shared across the package.

Every error raised by library code derives from :class:`OncoClipError` so
callers (and the CLI) can map failures to exit codes without matching on
message strings.
"""


class OncoClipError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(OncoClipError, ValueError):
    """A precondition on an argument was violated."""


class NoForegroundError(OncoClipError):
    """A segmentation mask contains no foreground voxels.

    Callers are expected to fall back to a manually supplied ROI point.
    """


class DataError(OncoClipError):
    """Input data is structurally invalid (missing phases, bad files, ...)."""


class StateError(OncoClipError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class TrainingError(OncoClipError):
    """Training failed mid-run (NaN gradients, divergence)."""


class ConvergenceError(OncoClipError):
    """An iterative fit did not converge (monotone likelihood, separation)."""


class UndefinedMetricError(OncoClipError):
    """A metric is undefined on the given inputs (single-class labels, no
    comparable pairs, no events)."""


class EvaluationError(OncoClipError):
    """A metric could not be evaluated at the requested time point
    (censoring survival estimate hits zero, time outside follow-up)."""
