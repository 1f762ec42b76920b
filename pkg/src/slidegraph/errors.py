"""Exception hierarchy.

The CLI maps these onto exit codes: ``DataError`` -> 2,
``InvariantViolation`` -> 3, usage problems -> 1.
"""


class SlideGraphError(Exception):
    """Base class for every error raised by this package."""


class DataError(SlideGraphError):
    """Bad input data or an unusable work directory."""


class EmptyGraphError(DataError):
    def __init__(self, msg: str = "empty graph"):
        super().__init__(msg)


class ParseError(DataError):
    def __init__(self, path, lineno: int, reason: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {reason}")


class VertexRangeError(DataError):
    def __init__(self, vid: int, num_vertices: int):
        super().__init__(f"vertex id out of range: {vid} >= {num_vertices}")


class UnownedDestinationError(DataError):
    def __init__(self, dst: int):
        super().__init__(f"unowned destination: {dst}")


class MetadataNotFoundError(DataError, FileNotFoundError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"metadata not found: {self.path}")


class FormatError(DataError):
    """A binary file failed validation."""

    def __init__(self, path, reason: str):
        self.path = str(path) if path is not None else "<buffer>"
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class TruncatedFileError(FormatError):
    def __init__(self, path):
        super().__init__(path, "unexpected end of file")


class BadMagicError(FormatError):
    def __init__(self, path, found: bytes, expected: bytes):
        super().__init__(path, f"bad magic {found!r}, expected {expected!r}")


class UnsupportedVersionError(FormatError):
    def __init__(self, path, version: int):
        self.version = version
        super().__init__(path, f"unsupported version {version}")


class ChecksumError(FormatError):
    def __init__(self, path, stored: int, computed: int):
        super().__init__(path, f"checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")


class CorruptShardError(FormatError):
    """Checksum passed but the CSR arrays break an invariant."""


class InvariantViolation(SlideGraphError):
    """An internal contract was broken; indicates a bug, not bad input."""


class EngineError(SlideGraphError):
    """A run aborted; wraps the underlying cause with shard context."""
