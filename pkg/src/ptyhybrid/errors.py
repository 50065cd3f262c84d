"""Exception hierarchy shared by every module."""


class PtyError(Exception):
    """Base class for all package errors."""


class ValidationError(PtyError, ValueError):
    pass


class BoundsError(ValidationError, IndexError):
    """A probe footprint falls outside the object grid."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConfigurationError(PtyError, ValueError):
    pass


class AlignmentError(ValidationError):
    pass


class NumericalFailure(PtyError, ArithmeticError):
    """Non-finite values or a failed consistency check.

    ``stage`` and ``iteration`` are filled in by the solvers when known.
    """

    def __init__(self, message, stage=None, iteration=None):
        super().__init__(message)
        self.stage = stage
        self.iteration = iteration

    def __str__(self):
        msg = super().__str__()
        where = []
        if self.stage is not None:
            where.append(f"stage={self.stage}")
        if self.iteration is not None:
            where.append(f"iteration={self.iteration}")
        return f"{msg} ({', '.join(where)})" if where else msg


class BundleError(PtyError, OSError):
    pass


class CorruptionError(BundleError):
    pass


class UnsupportedVersionError(BundleError):
    pass


class EngineError(PtyError, RuntimeError):
    pass


class DeadlockTimeout(EngineError):
    pass


class ProtocolError(EngineError):
    pass
