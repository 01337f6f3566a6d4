"""Error types raised by the tracing library."""

from typing import Optional


class TracerError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(TracerError, ValueError):
    """An argument is outside its documented domain."""


class EmptyInputError(TracerError, ValueError):
    """An operation received no foreground data to work on."""


class InvalidSeedError(TracerError, ValueError):
    """A seed vector cannot define a start point and direction."""


class InvalidTargetError(TracerError, ValueError):
    """A trace target lies too far from the tree."""


class ConfigurationError(TracerError, ValueError):
    """A component was configured inconsistently."""


class GenerationError(TracerError):
    """A synthetic scene could not be generated from its spec."""


class EmbedderUnavailableError(TracerError):
    """The external embedder could not be reached or failed."""


class ProtocolError(TracerError):
    """An embedder reply did not follow the wire format."""


class ParseError(TracerError, ValueError):
    """An input file is malformed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegeneratePatchError(TracerError):
    """The first traced patch offered no boundary endpoint to grow from.

    The origin-only tree is attached so callers can continue with it.
    """

    def __init__(self, message: str, tree=None):
        self.tree = tree
        super().__init__(message)
