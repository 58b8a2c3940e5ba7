"""Exception hierarchy shared by all risekit modules.

The CLI maps these onto exit codes: configuration problems exit 2,
transport/protocol problems exit 3, data problems exit 4.
"""


class RiseKitError(Exception):
    """Base class for all errors raised by risekit."""


class InvalidDimensionError(RiseKitError):
    """Tensor shapes are inconsistent or degenerate (zero-sized)."""


class InvalidArgumentError(RiseKitError):
    """A parameter is outside its documented domain."""


class InvalidConfigError(RiseKitError):
    """A configuration object violates its invariants."""


class InvalidInputError(RiseKitError):
    """Structured input (curve points, box lists) is malformed."""


class EnumerationBoundError(RiseKitError):
    """Exact enumeration was requested for a grid too large to enumerate."""


class ImageIOError(RiseKitError):
    """Image file could not be read or written; message carries the path."""


class DataError(RiseKitError):
    """A scorer or file produced non-finite or otherwise unusable values."""


class ProbeError(RiseKitError):
    """A scorer call failed mid-run.

    ``index`` identifies the failing probe batch (saliency estimation)
    or curve step (metrics).
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class TransportError(RiseKitError):
    """The remote or subprocess scorer could not be reached or died."""


class ProtocolError(RiseKitError):
    """The scorer answered, but not in the agreed wire format."""


class RemoteError(RiseKitError):
    """The scorer answered with an error status; message excerpts the body."""
