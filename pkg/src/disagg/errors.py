"""Exception types shared across the toolkit."""


class DisaggError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DisaggError, ValueError):
    pass


class UnstableQueueError(DisaggError, ValueError):
    """Utilization at or above one; the queue has no steady state."""


class FitError(DisaggError):
    pass


class ParseError(DisaggError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptySourceError(DisaggError, ValueError):
    pass


class PlacementError(DisaggError):
    pass


class CapacityError(DisaggError):
    """A single request can never fit the KV budget of its instance."""

    def __init__(self, message, request_id=None):
        self.request_id = request_id
        super().__init__(message)
