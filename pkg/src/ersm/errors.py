"""Exception types raised across the package."""


class ErsmError(Exception):
    """Base class for all package errors."""


class ParseError(ErsmError, ValueError):
    """Malformed input text. ``lineno`` is 1-based when known."""

    def __init__(self, message, lineno=None, source=None):
        self.lineno = lineno
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}"
        if lineno is not None:
            where += f":{lineno}" if where else f"line {lineno}"
        super().__init__(f"{where}: {message}" if where else message)


class OutOfRange(ErsmError, ValueError):
    pass


class EmptySeries(ErsmError, ValueError):
    pass


class InvalidArgument(ErsmError, ValueError):
    pass


class InvalidCutoff(InvalidArgument):
    pass


class TooShort(ErsmError, ValueError):
    pass


class InvalidShift(ErsmError, ValueError):
    pass


class DegenerateSignal(ErsmError, ValueError):
    pass


class NoOverlap(ErsmError, ValueError):
    pass


class DegenerateFit(ErsmError, ValueError):
    pass


class NoValidationData(ErsmError, ValueError):
    pass


class TrainingDiverged(ErsmError, RuntimeError):
    pass


class SpanTooShort(ErsmError, ValueError):
    pass


class Misaligned(ErsmError, ValueError):
    pass
