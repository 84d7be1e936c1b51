"""Exception hierarchy shared by all thermvis modules."""


class ThermVisError(Exception):
    """Base class for every error raised by thermvis on bad data."""


class DegenerateConfiguration(ThermVisError, ValueError):
    pass


class SchemaMismatch(ThermVisError, ValueError):
    pass


class EmptyInput(ThermVisError, ValueError):
    pass


class TemplateOutOfBounds(ThermVisError, ValueError):
    pass


class BoxOutsideImage(ThermVisError, ValueError):
    pass


class LengthMismatch(ThermVisError, ValueError):
    pass


class InsufficientSamples(ThermVisError, ValueError):
    pass


class ZeroInterOcular(ThermVisError, ValueError):
    pass


class AllFramesDegenerate(ThermVisError, ValueError):
    pass


class EmptyTrack(ThermVisError, ValueError):
    pass


class InvalidEpsilon(ThermVisError, ValueError):
    pass


class InvalidLabel(ThermVisError, ValueError):
    pass


class DegenerateClassCount(ThermVisError, ValueError):
    pass


class ZeroVector(ThermVisError, ValueError):
    pass


class ShapeMismatch(ThermVisError, ValueError):
    pass


class DimMismatch(ThermVisError, ValueError):
    pass


class EmptyBatch(ThermVisError, ValueError):
    pass


class EmptyClass(ThermVisError, ValueError):
    pass


class NoGenuinePairs(ThermVisError, ValueError):
    pass


class EmptySelection(ThermVisError, ValueError):
    pass


class InvalidConfig(ThermVisError, ValueError):
    pass


class InvariantViolation(ThermVisError, ValueError):
    pass


class MagicMismatch(ThermVisError, ValueError):
    pass


class TruncatedFile(ThermVisError, ValueError):
    pass


class ParseError(ThermVisError, ValueError):
    """Malformed text input; carries the file and 1-based line number."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
