"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ArgumentError -> 2, FormatError and
DegenerateInputError -> 3, NumericalError -> 4.
"""


class HydrosegError(Exception):
    pass


class ArgumentError(HydrosegError, ValueError):
    pass


class FormatError(HydrosegError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DegenerateInputError(HydrosegError, ValueError):
    pass


class ResourceError(HydrosegError):
    pass


class NumericalError(HydrosegError, FloatingPointError):
    pass


def with_context(exc: Exception, context: str) -> Exception:
    """Prefix an exception's message in place, keeping its class (and so its exit code)."""
    first = exc.args[0] if exc.args else ""
    exc.args = (f"{context}: {first}",) + tuple(exc.args[1:])
    return exc
