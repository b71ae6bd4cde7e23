"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
BackendError -> 3.
"""


class IclForgeError(Exception):
    """Base class for all package errors."""


class UsageError(IclForgeError):
    """Bad command-line invocation or inconsistent configuration."""


class DataError(IclForgeError):
    """Malformed or inconsistent input data."""


class BackendError(IclForgeError):
    """Failure while talking to a language-model backend."""


class TransportError(BackendError):
    """Network-level failure; safe to retry."""


class ProtocolError(BackendError):
    """The backend answered, but the response violates the wire contract."""


class TooManyAnswers(DataError):
    """Answer set too large for reordering (20 or more answers)."""


class NoComparablePairs(DataError):
    """No prediction contributed a consecutive answer pair to the adherence metric."""
