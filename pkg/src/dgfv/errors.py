"""Exception types shared across the library."""


class DgfvError(Exception):
    """Base class for all library errors."""


class MeshFormatError(DgfvError):
    """Raised on malformed mesh files; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SubdivisionError(DgfvError):
    """Invalid or inadmissible cell subdivision."""


class ConfigError(DgfvError):
    """Invalid run configuration."""


class SolverAbort(DgfvError):
    """Time integration aborted (non-finite state or wave speed)."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}
