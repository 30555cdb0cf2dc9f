"""Exception types raised across wino3d."""


class Wino3dError(Exception):
    """Base class for all library errors."""


class TensorIOError(Wino3dError, OSError):
    """Reading or writing a file failed at the OS level."""


class FormatError(Wino3dError, ValueError):
    """A tensor or model file is malformed."""


class ShapeError(Wino3dError, ValueError):
    pass


class UnsupportedSpec(Wino3dError, ValueError):
    pass


class CacheError(Wino3dError, RuntimeError):
    """Backward was called with a cache that does not match the layer state."""


class EmptyMask(Wino3dError, ValueError):
    pass


class RankError(Wino3dError, ValueError):
    pass


class NumericError(Wino3dError, ArithmeticError):
    pass


class DegenerateError(Wino3dError, ValueError):
    pass


class DataError(Wino3dError, ValueError):
    pass


class ConfigError(Wino3dError, ValueError):
    pass


class ValidationError(Wino3dError, RuntimeError):
    """An output failed its equivalence check against the reference path."""
