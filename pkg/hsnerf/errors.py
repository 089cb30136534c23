__all__ = [
    "HsNerfError",
    "ConfigError",
    "DataError",
    "CubeFormatError",
    "PoseFormatError",
    "UnsupportedWavelengthError",
    "NumericalError",
    "ShapeError",
    "exit_code",
]


class HsNerfError(Exception):
    """Base of all errors raised on purpose by hsnerf."""

    exit_code: int = 1


class ConfigError(HsNerfError, ValueError):
    """Incoherent or unknown configuration."""

    exit_code = 2


class UnsupportedWavelengthError(ConfigError):
    """A discrete spectral head was queried off its channel grid."""


class DataError(HsNerfError, ValueError):
    """Unreadable, inconsistent or missing input data."""

    exit_code = 3


class CubeFormatError(DataError):
    pass


class PoseFormatError(DataError):
    pass


class NumericalError(HsNerfError, ArithmeticError):
    """Non-finite losses, gradients or parameters."""

    exit_code = 4


class ShapeError(HsNerfError, ValueError):
    def __init__(self, op: str, *shapes: tuple):
        self.op = op
        self.shapes = shapes
        joined = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


def exit_code(error: BaseException) -> int:
    if isinstance(error, HsNerfError):
        return error.exit_code
    return 1
