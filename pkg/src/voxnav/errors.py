"""Exception types shared across voxnav modules."""


class VoxnavError(Exception):
    """Base class for all voxnav-specific errors."""


class OutOfBoundsError(VoxnavError, ValueError):
    """A world point or grid index falls outside the grid."""


class UndefinedRatioError(VoxnavError, ValueError):
    """knownRatio is undefined because the target map has no known cells."""


class GenerationError(VoxnavError, RuntimeError):
    """A randomized generation step exhausted its retry budget."""


class SceneGenerationError(GenerationError):
    pass


class PathSamplingError(GenerationError):
    pass


class OcclusionGenerationError(GenerationError):
    pass


class PlanFailedError(VoxnavError, RuntimeError):
    """No path to the requested goal exists under the current collision view."""


class InvalidStartError(PlanFailedError):
    """The start position is in collision under the current collision view."""


class ConfigError(VoxnavError, ValueError):
    """A run configuration failed schema validation."""
