"""
Exception types raised by cdpreid. Each one derives from the builtin type a
caller would otherwise expect, so ``except ValueError`` keeps working.
"""


class InvalidInputError(ValueError):
    """An image or array does not satisfy the contract of the operation."""


class ManifestError(ValueError):
    """A dataset manifest could not be parsed or failed validation."""


class CheckpointError(RuntimeError):
    """A checkpoint file is corrupt, truncated or of an unsupported version."""


class StaleTraceError(RuntimeError):
    """A forward trace does not match the model it is being differentiated against."""


class NonFiniteError(FloatingPointError):
    """A loss, gradient or parameter became NaN or infinite."""
