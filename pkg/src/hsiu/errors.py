"""Package-wide exception types, mapped to CLI exit codes in `hsiu.cli`."""


class InvalidInputError(ValueError):
    """Malformed or inconsistent input (dimension mismatch, bad values, bad files)."""


class SamplingError(RuntimeError):
    """A sampling routine failed to produce a valid draw."""


class ChainDivergenceError(RuntimeError):
    """Non-finite values appeared in the chain state."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
