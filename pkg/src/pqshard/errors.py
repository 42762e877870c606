"""Exception hierarchy shared across the engine.

The CLI maps these onto process exit codes: configuration/training problems
exit 2, file and data-integrity problems exit 3, remote/protocol problems
exit 4.
"""


class SearchEngineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SearchEngineError):
    """Invalid parameters: bad dimensions, counts, probabilities, configs."""


class TrainingError(SearchEngineError):
    """Quantizer training cannot proceed (e.g. fewer points than centroids)."""


class IngestionError(SearchEngineError):
    """Invalid data fed into an index build (e.g. duplicate vector ids)."""


class RejectionError(SearchEngineError):
    """An input element was rejected (e.g. non-finite distance)."""


class CorruptionError(SearchEngineError):
    """Stored or received data violates an integrity invariant."""


class FileFormatError(CorruptionError):
    """A binary artifact file does not match its declared format."""


class ProtocolError(SearchEngineError):
    """A wire-level request or response is invalid.

    ``code`` is the numeric error code carried in error frames (see
    :mod:`pqshard.wire`).
    """

    def __init__(self, message: str, code: int = 0):
        super().__init__(message)
        self.code = code


class NodeUnavailableError(ProtocolError):
    """A memory node did not answer within the configured timeout."""

    def __init__(self, message: str, nodes: tuple[str, ...] = ()):
        from .wire import ERR_NODE_UNAVAILABLE

        super().__init__(message, code=ERR_NODE_UNAVAILABLE)
        self.nodes = nodes
