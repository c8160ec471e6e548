"""Exception hierarchy shared across the package."""


class NCMError(Exception):
    """Base class for all package errors."""


class InvalidInputError(NCMError, ValueError):
    """An argument violates an operation's precondition."""


class InvalidWeightsError(InvalidInputError):
    """Score-combination weights violate the pairwise simplex constraints."""


class EmptyResultError(NCMError):
    """Beam search finished without any complete hypothesis."""


class InvalidConfigError(NCMError, ValueError):
    """A configuration is malformed or inconsistent."""


class ExtractionError(NCMError):
    """A record lacks data needed by an enabled feature family."""


class ModelSpecMismatchError(NCMError):
    """A record or feature vector does not fit the model's input layout."""


class NumericFailureError(NCMError, FloatingPointError):
    """A non-finite value appeared during gradient computation."""


class InvalidDatasetError(NCMError, ValueError):
    """A training set cannot be used (e.g. only one class present)."""


class DecodeLogError(NCMError, ValueError):
    """A decode-log line could not be parsed."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
