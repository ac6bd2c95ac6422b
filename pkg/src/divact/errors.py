"""Exception types raised across the package."""


class DivactError(Exception):
    pass


class ShapeError(DivactError, ValueError):
    pass


class ParameterError(DivactError, ValueError):
    pass


class FormatError(DivactError, ValueError):
    """Malformed serialized payload (DIVT file, compressed cache, checkpoint)."""


class EncodingError(DivactError, ValueError):
    pass


class StateError(DivactError, RuntimeError):
    pass


class ParseError(DivactError, ValueError):
    """Bad delimited-text input; message carries the row/column location."""


class UnsupportedActivationError(DivactError, ValueError):
    pass


class DivergenceError(DivactError, RuntimeError):
    pass
