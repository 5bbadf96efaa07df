"""Exception hierarchy shared by all modules."""


class MappingError(Exception):
    """Base class for every error raised by this package."""


# geometry
class NonPositiveDepth(MappingError):
    pass


class GeometryRejection(MappingError):
    """An epipolar search cannot be set up for this keypoint."""


class OutsideFrame(GeometryRejection):
    pass


class TooShort(GeometryRejection):
    pass


class NearEpipole(GeometryRejection):
    pass


class TriangulationError(MappingError):
    pass


class BehindCamera(TriangulationError):
    pass


class DivergentRays(TriangulationError):
    pass


# images / keyframe
class BorderPixel(MappingError):
    pass


class OutOfBounds(MappingError):
    pass


class BadMagic(MappingError):
    pass


class SizeMismatch(MappingError):
    pass


class DimensionMismatch(MappingError):
    pass


# filtering
class NonPositiveVariance(MappingError):
    pass


# performance model
class IncompleteTrace(MappingError):
    pass


class Infeasible(MappingError):
    pass


# dataset / config
class DatasetError(MappingError):
    pass


class MissingCalib(DatasetError):
    pass


class UnsortedTrajectory(DatasetError):
    pass


class NoPoseWithinWindow(DatasetError):
    pass


class ConfigError(MappingError):
    pass
