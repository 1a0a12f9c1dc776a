"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ForkdiffError(Exception):
    exit_code = 4


class ConfigError(ForkdiffError):
    """Invalid or out-of-range configuration."""

    exit_code = 1


class DependencyError(ForkdiffError):
    """A pipeline stage was requested before the artifacts it needs exist."""

    exit_code = 2


class TransportError(ForkdiffError):
    """HTTP/API failure that persisted after all retries."""

    exit_code = 3


class DataError(ForkdiffError, ValueError):
    exit_code = 4


class EmptyInputError(DataError):
    pass


class PreconditionError(DataError):
    pass


class UndefinedShareError(DataError):
    pass
