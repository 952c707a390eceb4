"""Exception hierarchy shared by every module."""


class NphcError(Exception):
    """Base class for all errors raised by this package."""


class SingularMatrix(NphcError):
    pass


class NonStationary(NphcError):
    pass


class EventCapExceeded(NphcError):
    """Raised when a simulation hits ``max_events``.

    The partial (truncated) stream is attached as ``self.stream``.
    """

    def __init__(self, message, stream=None):
        super().__init__(message)
        self.stream = stream


class WindowTooLarge(NphcError):
    pass


class NoDecayDetected(NphcError):
    pass


class MismatchedShapes(NphcError):
    pass


class DegenerateCumulants(NphcError):
    pass


class DegenerateLambda(NphcError):
    pass


class SingularRHat(NphcError):
    pass


class ParseError(NphcError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.path = path


class NonmonotonicAfterRepair(NphcError):
    pass


class EmptySlot(NphcError):
    pass
