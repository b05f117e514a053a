"""Exception types shared across the package."""


class MkdError(Exception):
    """Base class for package errors."""

    exit_code = 1


class UsageError(MkdError):
    """Bad command-line usage or configuration."""

    exit_code = 1


class DataError(MkdError):
    """Invalid or inconsistent input data (files, manifests, hashes)."""

    exit_code = 2


class NumericalError(MkdError):
    """A numerical routine failed (eigensolver, non-finite intermediate)."""

    exit_code = 3
