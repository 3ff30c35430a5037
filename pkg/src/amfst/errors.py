"""Exception types shared across the tracking engine."""


class InvalidInputError(ValueError):
    """Caller supplied data that violates an operation's preconditions."""


class ContractViolation(RuntimeError):
    """Objects from incompatible sources were combined, or steps arrived out of order."""


class UndefinedMetricError(ValueError):
    """A metric was requested over an empty evaluation set."""


class ConfigRejected(ValueError):
    """A scene configuration degenerates or sends a point out of the image."""

    def __init__(self, message: str, frame: int | None = None, point: int | None = None):
        super().__init__(message)
        self.frame = frame
        self.point = point
