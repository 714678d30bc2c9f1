"""Exception types shared across the package."""


class SingularEvaluation(ValueError):
    """A singular kernel was asked for its value at zero separation."""


class NonIntegrable(ValueError):
    """An antiderivative was requested for a kernel that diverges at the origin."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class NonFiniteState(RuntimeError):
    """A vector-field evaluation produced NaN or infinity."""


class InsufficientData(ValueError):
    """A fit or detector was given fewer samples than it needs."""


class ConfigError(ValueError):
    """A run configuration is invalid or requests an unsupported combination."""


class StepFloorHit(RuntimeError):
    """Adaptive stepping hit the minimum step size without meeting tolerance.

    Carries the partial trajectory, the time of failure, and the closest
    agent pair at that time, so callers can surface a diagnostic.
    """

    def __init__(self, message, time=None, pair=None, trajectory=None):
        super().__init__(message)
        self.time = time
        self.pair = pair
        self.trajectory = trajectory
