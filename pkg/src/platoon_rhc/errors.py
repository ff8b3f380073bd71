"""Exception types raised across the package."""


class PlatoonError(Exception):
    """Base class for all errors raised by platoon_rhc."""


class OrderingViolation(PlatoonError):
    """A nominal leader sits behind its follower."""


class InvalidEvent(PlatoonError):
    """A lane-change event references the PV, the CAV, or an unknown id."""


class DegenerateGamma(PlatoonError):
    """The headway coefficient is too close to zero to recover CTH-RV parameters."""


class NumericalBreakdown(PlatoonError):
    """The RLS innovation denominator became non-positive."""


class SingularGram(PlatoonError):
    """The weighted Gram matrix of the regressors is rank deficient."""


class InfeasibleHard(PlatoonError):
    """The hard rows of a QP admit no solution."""


class CollisionDetected(PlatoonError):
    """A consecutive pair reached a negative headway during simulation."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class ConfigError(PlatoonError):
    """A scenario or CLI configuration is invalid."""
