"""Exception types shared across the package."""


class TestbedError(Exception):
    """Base class for all errors raised by this package."""


class FramingError(TestbedError, ValueError):
    """Payload length disagrees with what the header or format declares."""


class SchemaError(TestbedError, ValueError):
    """Header contents are inconsistent with the payload or the caller's config."""


class ParseError(TestbedError, ValueError):
    """A text file could not be parsed; the message names row and column."""


class ProtocolError(TestbedError, ValueError):
    """Wire data does not start with a known magic."""


class InsufficientDataError(TestbedError, ValueError):
    """Not enough rows for the requested operation."""


class EstimationError(TestbedError, ValueError):
    """A quantity cannot be estimated from the available pilots."""


class ConfigMismatchError(TestbedError, ValueError):
    """Session or model configuration disagrees with incoming data."""


class DivergenceError(TestbedError, RuntimeError):
    """Training produced a non-finite value.

    ``checkpoint`` holds the last parameters for which every value was finite.
    """

    def __init__(self, message, checkpoint=None, history=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.history = history if history is not None else []


class InvalidPayloadError(ProtocolError):
    """A well-framed message carries values outside its invariants (e.g. NaN)."""
