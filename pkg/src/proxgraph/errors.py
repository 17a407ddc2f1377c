"""Exception types shared across the package, mapped to CLI exit codes."""


class ProxgraphError(Exception):
    """Base class; exit_code is what the CLI returns when this escapes."""

    exit_code = 1


class ParameterError(ProxgraphError):
    """An argument, flag, or configuration value is invalid."""

    exit_code = 2


class StorageError(ProxgraphError):
    """A file is missing, unreadable, truncated, or not writable."""

    exit_code = 3


class DataError(ProxgraphError):
    """Content was read successfully but violates a data invariant."""

    exit_code = 4


class FormatError(DataError):
    """A binary container is malformed (bad or inconsistent record headers)."""
