"""Exception types shared across the package."""


class SquashError(Exception):
    """Base class for all library errors."""


class ValidationError(SquashError):
    """Input data violates a documented precondition or invariant."""


class ConfigurationError(SquashError):
    """Inconsistent configuration: mismatched widths, missing weights, bad flags."""


class EmptySelectionError(SquashError):
    """An anchor window selected no frames from a traversal."""


class EmptyBuildError(SquashError):
    """No traversal covers the requested anchor location."""


class GridTooLargeError(SquashError):
    """Occupied bounding box exceeds a size cap (dense conversion or key packing)."""


class StoreError(SquashError):
    """Base class for persistence failures."""


class MagicMismatchError(StoreError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(StoreError):
    """File uses an unsupported format version."""


class TruncatedFileError(StoreError):
    """File is shorter than its header or declared payload requires."""


class ChecksumError(StoreError):
    """Body checksum does not match the stored CRC32."""


class RecordNotFoundError(StoreError):
    """A retrieval was attempted against an empty store."""
