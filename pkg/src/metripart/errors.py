"""Exception types raised across the package."""


class MetripartError(Exception):
    """Base class for all errors raised by this package."""


class CutoffTooLarge(MetripartError):
    pass


class CoincidentParticles(MetripartError):
    pass


class ShapeMismatch(MetripartError):
    pass


class NonpositiveVolume(MetripartError):
    pass


class MissingReference(MetripartError):
    pass


class DegenerateHeatCapacity(MetripartError):
    pass


class TrajectoryBlowup(MetripartError):
    pass


class SingularCovariance(MetripartError):
    pass


class NonFiniteLoss(MetripartError):
    pass


class InsufficientSnapshots(MetripartError):
    pass


class MissingUnwrapData(MetripartError):
    pass


class ZeroReference(MetripartError):
    pass


class ParseError(MetripartError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InconsistentFrame(MetripartError):
    pass


class ConfigError(MetripartError):
    pass


class RankDeficientNeighborhood(MetripartError):
    pass
