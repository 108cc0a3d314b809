"""Exception types raised across the package."""


class CEVAEError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CEVAEError, ValueError):
    pass


class InputShapeError(CEVAEError, ValueError):
    pass


class NumericError(CEVAEError, ArithmeticError):
    pass


class ContractError(CEVAEError, ValueError):
    """A caller broke a documented precondition (stale state, negative norms, ...)."""


class FormatError(CEVAEError, ValueError):
    """Malformed latent file. ``offset`` is the byte position of the first bad field."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ManifestError(CEVAEError, ValueError):
    def __init__(self, message, offenders=()):
        self.offenders = list(offenders)
        if self.offenders:
            message = f"{message}: {', '.join(map(str, self.offenders))}"
        super().__init__(message)


class SampleError(CEVAEError, IOError):
    """An image that cannot be read or decoded; ``sample_id`` names the pair."""

    def __init__(self, message, sample_id=None):
        super().__init__(message)
        self.sample_id = sample_id


class CheckpointError(CEVAEError, ValueError):
    pass


class NonFiniteLossError(NumericError):
    """Raised by the trainer; ``terms`` holds the per-term values at the failing step."""

    def __init__(self, step, terms):
        self.step = step
        self.terms = dict(terms)
        dump = ", ".join(f"{k}={v!r}" for k, v in self.terms.items())
        super().__init__(f"non-finite loss at step {step}: {dump}")
