"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`SplatSimError`
and carries the CLI exit code it maps to.
"""


class SplatSimError(Exception):
    exit_code = 1


class ValidationError(SplatSimError, ValueError):
    """Input record violates a documented invariant."""

    exit_code = 2

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class PlyParseError(ValidationError):
    pass


class PerceptionError(SplatSimError):
    """A property-perception stage failed."""

    exit_code = 3

    def __init__(self, message, stage=None):
        if stage is not None:
            message = f"[{stage}] {message}"
        super().__init__(message)
        self.stage = stage


class SimulationError(SplatSimError):
    exit_code = 4

    def __init__(self, message, particle=None):
        super().__init__(message)
        self.particle = particle


class BindingError(SimulationError):
    pass


class SceneIOError(SplatSimError, OSError):
    exit_code = 5
