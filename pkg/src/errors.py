"""Exception hierarchy shared by the planning stack."""


class PlanningError(Exception):
    """Root of every error raised by this package."""


class DimensionError(PlanningError):
    """Vector or matrix has the wrong shape."""


class IKError(PlanningError):
    """Inverse kinematics failed."""


class MaxIterationsError(IKError):
    """Inverse kinematics did not converge within the iteration limit."""


class OutOfReachError(IKError):
    """Target lies outside the reachable workspace."""


class PhaseRangeError(PlanningError):
    """Spline phase outside [0, 1] or invalid duration."""


class EmptySupportSetError(PlanningError):
    """Collision proxy queried before it was trained."""


class SamplerExhaustedError(PlanningError):
    """Active-learning sampler could not produce enough samples."""


class CameraInsideSphereError(PlanningError):
    """Camera origin lies inside a robot collision sphere."""


class NoValidPosesError(PlanningError):
    """No candidate camera pose survived validation."""


class FormatError(PlanningError):
    """A data file could not be parsed."""


class ConfigError(PlanningError):
    """Invalid configuration."""
