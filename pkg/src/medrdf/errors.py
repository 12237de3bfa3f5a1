"""Exception hierarchy shared by the library, the service and the CLI."""


class MedRDFError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class InvalidInputError(MedRDFError, ValueError):
    """Bad shapes, out-of-range labels, violated preconditions."""

    exit_code = 2


class ConfigError(InvalidInputError):
    """A configuration value violates its documented invariant."""

    exit_code = 2


class ParseError(MedRDFError, ValueError):
    """A data or checkpoint file could not be decoded."""

    exit_code = 3

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class CapabilityError(MedRDFError):
    """The model lacks an operation the caller asked for (e.g. gradients)."""

    exit_code = 4
