"""Exception types raised across the package."""


class PressimError(Exception):
    """Base class for all package errors."""


class InvalidSubject(PressimError, ValueError):
    pass


class InvalidSpec(PressimError, ValueError):
    pass


class DimensionMismatch(PressimError, ValueError):
    pass


class ShapeMismatch(PressimError, ValueError):
    pass


class LengthMismatch(PressimError, ValueError):
    pass


# -- simulation --------------------------------------------------------------

class NoContact(PressimError):
    """The body cannot reach any sensor cell within the search depth."""


class NonConvergence(PressimError, ArithmeticError):
    def __init__(self, message, frame=None):
        super().__init__(message if frame is None else f"frame {frame}: {message}")
        self.frame = frame


# -- training ----------------------------------------------------------------

class EmptyDataset(PressimError, ValueError):
    pass


class DivergenceDetected(PressimError, ArithmeticError):
    def __init__(self, epoch, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")
        self.epoch = epoch


# -- files and data ----------------------------------------------------------

class FormatError(PressimError, ValueError):
    pass


class KindMismatch(FormatError):
    pass


class IoFailure(PressimError, OSError):
    pass


class EmptyStream(PressimError, ValueError):
    pass


class NoOverlap(PressimError, ValueError):
    pass


class TooShort(PressimError, ValueError):
    pass


class BadRatios(PressimError, ValueError):
    pass


class AllFramesEmpty(PressimError, ValueError):
    pass


# -- configuration -----------------------------------------------------------

class ConfigError(PressimError, ValueError):
    pass


class UnknownKey(ConfigError):
    pass


class ConfigTypeError(ConfigError, TypeError):
    pass
