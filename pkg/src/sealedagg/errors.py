"""Exception types shared across the package."""


class SealedAggError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(SealedAggError):
    """A caller-supplied value violates a documented precondition."""


class DecodeError(SealedAggError):
    """Bytes or text failed to parse as the expected message or format."""


class DecryptionError(SealedAggError):
    """Symmetric decryption failed.

    Deliberately carries no detail: wrong key, corrupted ciphertext and bad
    padding are indistinguishable to the caller.
    """


class OpenError(SealedAggError):
    """A sealed payload failed to open (wrong key or tampered bytes)."""


class SizeError(SealedAggError):
    """A payload or request body exceeds the configured limit."""


class ArithmeticOverflow(SealedAggError):
    """An aggregate left its documented numeric range."""


class DegenerateInput(SealedAggError):
    """The input admits no well-defined result (e.g. a vertical-line fit)."""


class TransportError(SealedAggError):
    """A request could not be delivered or the peer returned a server error."""


class IntegrityError(SealedAggError):
    """A received artifact failed verification against what was expected."""


class SealedErrorReport(SealedAggError):
    """The enclave sealed an error report instead of an aggregate.

    Attributes:
        code: short machine-readable reason, e.g. "degenerate-input".
    """

    def __init__(self, code: str):
        super().__init__(f"aggregation failed inside the enclave: {code}")
        self.code = code
