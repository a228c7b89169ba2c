"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: input problems exit 2,
scorer/gateway problems exit 3, anything else exit 1.
"""


class DivtraceError(Exception):
    """Base class for all toolkit errors."""


class InputError(DivtraceError):
    """Malformed or inconsistent input data (files, records, parameters)."""


class IngestError(InputError):
    """A generations/labels/verdicts stream violated its schema."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class MetricUndefinedError(InputError):
    """A metric was requested on inputs where it has no defined value."""


class ParseError(InputError):
    """Source code could not be parsed into a syntax tree."""


class ScorerError(DivtraceError):
    """An embedding/NLI scorer could not produce a usable response."""


class ScorerUnavailableError(ScorerError):
    """Transient scorer failure (connection refused, timeout, 5xx); the
    client retries these before giving up."""


class ScorerProtocolError(ScorerError):
    """The scorer responded, but the payload violated the wire contract."""
