"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: input/validation problems exit with 2,
runtime failures (e.g. training divergence) with 3.
"""


class CiterecError(Exception):
    """Base class for all package errors."""


class ValidationError(CiterecError):
    """Input violates a documented contract (bad config, duplicate ids, ...)."""


class ParseError(ValidationError):
    """A record could not be parsed; message carries file path and line number."""


class FormatError(ValidationError):
    """A binary artifact is malformed (bad magic, truncated payload, ...)."""


class NotFoundError(CiterecError):
    """A referenced key (doc id, query id, vector key) does not exist."""


class DivergenceError(CiterecError):
    """Training or a forward pass produced non-finite values."""
