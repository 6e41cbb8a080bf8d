class TkctsError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(TkctsError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class StructuralError(TkctsError):
    """The search tree would be left inconsistent."""


class PreconditionError(TkctsError):
    """An operation was invoked on a node in the wrong state."""


class ParseError(TkctsError):
    """A model response did not follow the required output format."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class TransportError(TkctsError):
    """The chat provider failed in a way retries could not fix."""

    def __init__(self, message: str, status: int | None = None, body: str = ""):
        super().__init__(message)
        self.status = status
        self.body = body


class FixtureError(TkctsError):
    """A scripted transcript ran out or did not match the request."""


class DivergenceError(TkctsError):
    """Replay produced an event that differs from the recorded trace."""

    def __init__(self, seq: int, message: str):
        super().__init__(f"replay diverged at seq {seq}: {message}")
        self.seq = seq


class TemplateError(TkctsError):
    """A prompt template is missing or refers to an unknown placeholder."""
