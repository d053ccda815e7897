"""Exception hierarchy shared by every module."""


class EmrShareError(Exception):
    """Base class for all library errors."""


class ParameterError(EmrShareError, ValueError):
    pass


class IndexRangeError(EmrShareError, IndexError):
    pass


class ArityError(EmrShareError, ValueError):
    pass


class ExtractionPolicyError(EmrShareError):
    """The chosen extraction set does not contain every mandatory index."""


class DecodeError(EmrShareError, ValueError):
    """A binary record is malformed or has trailing bytes."""


class DecryptionError(EmrShareError):
    """Authenticated decryption failed (wrong key or tampered ciphertext)."""


class NotFoundError(EmrShareError, KeyError):
    pass


class AccessDenied(EmrShareError):
    pass


class TxRejected(EmrShareError):
    """A transaction failed admission; ``reason`` is machine readable."""

    def __init__(self, reason, detail=""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class QuorumNotMet(EmrShareError):
    pass


class ValidationFailed(EmrShareError):
    def __init__(self, reason):
        super().__init__(reason)
        self.reason = reason


class ConfigurationError(EmrShareError):
    pass


class SchedulingError(EmrShareError):
    pass


class RoutingError(EmrShareError):
    pass


class AuthorizationError(EmrShareError):
    pass


class NotReleasedError(EmrShareError):
    pass
