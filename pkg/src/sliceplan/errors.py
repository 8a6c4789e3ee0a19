"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration: unknown family/keys, out-of-range settings."""


class ParseError(ValueError):
    """Malformed input file; carries the offending row when known."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class UnsupportedInstanceError(ValueError):
    """Instance outside a solver's contract (e.g. non-uniform weights)."""


class UndefinedCorrelationError(ValueError):
    """Pearson correlation requested on a zero-variance sequence."""


class InfeasibleRegimeError(ValueError):
    """Parameter regime where a bound's formula is undefined."""
