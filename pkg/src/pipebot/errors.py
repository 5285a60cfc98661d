"""Exception hierarchy shared by all pipebot modules."""


class PipebotError(Exception):
    pass


# geometry / scenario
class GeometryError(PipebotError, ValueError):
    pass


class OverlapError(GeometryError):
    pass


class RangeError(PipebotError, ValueError):
    pass


class RotationRangeError(RangeError):
    pass


# sensing / dsp
class SamplingError(PipebotError, ValueError):
    pass


class BlockAlignmentError(PipebotError, ValueError):
    pass


class ParameterError(PipebotError, ValueError):
    pass


class AlignmentError(PipebotError, ValueError):
    pass


# perception
class InsufficientDataError(PipebotError, ValueError):
    pass


class NoHoleError(PipebotError):
    pass


class PoorFitError(PipebotError):
    pass


class NoDetectionError(PipebotError):
    pass


# motion
class KinematicError(PipebotError):
    pass


class UnreachableError(KinematicError):
    pass


class TravelLimitError(KinematicError):
    pass


class SpindleLimitError(PipebotError, ValueError):
    pass


class ForceLimitError(PipebotError):
    pass


class TorqueLimitError(PipebotError):
    pass


class JamAbortError(PipebotError):
    pass


# mission / io
class MissionAbort(PipebotError):
    pass


class PhaseError(PipebotError):
    pass


class RelocationError(PipebotError):
    pass


class FormatError(PipebotError):
    pass


class ParseError(PipebotError):
    pass


class UsageError(PipebotError):
    pass


class NotFoundError(PipebotError):
    pass
