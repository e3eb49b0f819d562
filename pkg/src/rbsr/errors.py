"""Exception types shared across the package."""


class RBSRError(Exception):
    """Base class for every error raised by this package."""


class InvalidShape(RBSRError, ValueError):
    pass


class InvalidInput(RBSRError, ValueError):
    pass


class InvalidBurstLength(InvalidInput):
    pass


class InvalidCameraParams(RBSRError, ValueError):
    pass


class ConfigError(RBSRError, ValueError):
    """Unknown key, bad value, or a checkpoint/config mismatch."""


class FixedLengthError(InvalidInput):
    """The concat fusion variant was given a burst of the wrong length."""


class IngestError(RBSRError):
    """One or more input images could not be read.

    Attributes:
        offenders: paths that failed to load.
    """

    def __init__(self, offenders):
        self.offenders = [str(p) for p in offenders]
        super().__init__("unreadable input images: " + ", ".join(self.offenders))


class DivergenceError(RBSRError, FloatingPointError):
    """Training produced a non-finite loss.

    Attributes:
        payload: diagnostic values at the failing step (iteration, lr, loss, ...).
    """

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = dict(payload or {})
