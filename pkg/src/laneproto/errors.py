"""Exception hierarchy shared by all laneproto modules."""


class LaneProtoError(Exception):
    """Base class for every error raised by this package."""


# trajectory plumbing
class EmptyTrajectory(LaneProtoError):
    pass


class NonMonotoneTime(LaneProtoError):
    pass


class SpanTooSmall(LaneProtoError):
    pass


class BadFilterCoefficient(LaneProtoError):
    pass


class GridMismatch(LaneProtoError):
    pass


# frenet
class MarkingRangeExceeded(LaneProtoError):
    pass


# labeling
class TrackTooShort(LaneProtoError):
    pass


class DegenerateManeuver(LaneProtoError):
    pass


# clustering
class EmptyTrainingSet(LaneProtoError):
    pass


# matching
class ZeroOverlap(LaneProtoError):
    pass


class NoMatch(LaneProtoError):
    pass


# classification
class ClassAbsent(LaneProtoError):
    pass


class DegenerateFeatures(LaneProtoError):
    pass


class BoostingStalled(LaneProtoError):
    pass


class CalibrationFailed(LaneProtoError):
    pass


# splines
class DomainError(LaneProtoError):
    pass


class DegreeError(LaneProtoError):
    pass


class KnotMultiplicityError(LaneProtoError):
    pass


class SolverError(LaneProtoError):
    pass


# evaluation / generation
class StratificationError(LaneProtoError):
    pass


class BadSpec(LaneProtoError):
    pass


class ConfigError(LaneProtoError):
    pass
