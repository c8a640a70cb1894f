"""Exception hierarchy shared by every layer of the loop."""


class TeeControlError(Exception):
    """Base class for all package errors."""


class ValidationError(TeeControlError, ValueError):
    """Non-finite or mis-shaped numeric input."""


class SingularityError(ValidationError):
    """Linearization requested at a point where the Jacobian does not exist."""


class ConfigError(TeeControlError, ValueError):
    """Config file is missing keys, has wrong shapes or inconsistent values."""


class ChannelError(TeeControlError):
    """Base class for rejections raised while opening a wire frame."""


class MalformedFrame(ChannelError):
    pass


class AuthenticationFailure(ChannelError):
    """Tag did not verify: the bytes were modified or forged."""


class ReplayDetected(ChannelError):
    """Genuine frame whose sequence number is not above the receive watermark."""


class UnknownSession(ChannelError):
    pass


class SessionRenewalRequired(ChannelError):
    """Send sequence space exhausted; a new handshake is needed."""


class HandshakeError(TeeControlError):
    """Handshake aborted (transcript mismatch, bad key confirmation)."""


class AttestationRejected(HandshakeError):
    def __init__(self, reasons):
        self.reasons = tuple(reasons)
        super().__init__("quote rejected: " + ", ".join(r.value for r in self.reasons))


class RollbackDetected(TeeControlError):
    """Sealed blob is authentic but bound to a stale monotonic counter."""


class EnclaveError(TeeControlError):
    """Enclave creation or E-Call failure not caused by the channel."""


class IsolationError(EnclaveError):
    """Attempt to read protected state from a non-debug enclave."""
