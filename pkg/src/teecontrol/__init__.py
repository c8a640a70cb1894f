"""Cloud-hosted observer + LQ control of a quadruple-tank plant behind a simulated TEE."""

from .errors import (
    AttestationRejected,
    AuthenticationFailure,
    ChannelError,
    MalformedFrame,
    ReplayDetected,
    RollbackDetected,
    UnknownSession,
)

__version__ = "0.1.0"
