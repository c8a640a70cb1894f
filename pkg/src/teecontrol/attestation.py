"""Simulated platform root of trust, code measurement and quotes."""

from __future__ import annotations

import hashlib
import json
import secrets
import struct
import threading
from dataclasses import dataclass
from enum import Enum

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import EnclaveError, ValidationError

IMAGE_MAGIC = b"TCLI"
IMAGE_VERSION = 0x01
QUOTE_LEN = 32 + 32 + 64


@dataclass(frozen=True)
class EnclaveImage:
    """Canonical bytes of the controller config that the enclave runs.

    Layout: magic "TCLI" (4) || version (1) || body_len (4, BE) || body, where
    body is UTF-8 JSON with sorted keys, no whitespace and repr-exact floats.
    """

    code_bytes: bytes

    @classmethod
    def from_config(cls, config: dict) -> "EnclaveImage":
        body = json.dumps(config, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
        return cls(IMAGE_MAGIC + bytes([IMAGE_VERSION]) + struct.pack(">I", len(body)) + body)

    def parse(self) -> dict:
        raw = self.code_bytes
        if len(raw) < 9 or raw[:4] != IMAGE_MAGIC:
            raise EnclaveError("image does not start with TCLI magic")
        if raw[4] != IMAGE_VERSION:
            raise EnclaveError(f"unsupported image version {raw[4]}")
        (n,) = struct.unpack(">I", raw[5:9])
        if len(raw) != 9 + n:
            raise EnclaveError("image length field disagrees with image size")
        try:
            doc = json.loads(raw[9:].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise EnclaveError(f"image body is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise EnclaveError("image body must be a JSON object")
        return doc


def measure_image(image: EnclaveImage) -> bytes:
    return hashlib.sha256(image.code_bytes).digest()


def report_data_for(challenge: bytes, dh_share: bytes) -> bytes:
    return hashlib.sha256(challenge + dh_share).digest()


@dataclass(frozen=True)
class Quote:
    measurement: bytes
    report_data: bytes
    platform_signature: bytes

    @property
    def signed_bytes(self) -> bytes:
        return self.measurement + self.report_data

    def to_bytes(self) -> bytes:
        return self.measurement + self.report_data + self.platform_signature

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Quote":
        if len(raw) != QUOTE_LEN:
            raise ValidationError(f"quote must be {QUOTE_LEN} bytes, got {len(raw)}")
        return cls(raw[:32], raw[32:64], raw[64:])


class RejectReason(Enum):
    SIGNATURE_INVALID = "signature invalid"
    MEASUREMENT_MISMATCH = "measurement mismatch"
    REPORT_DATA_MISMATCH = "report_data mismatch"


@dataclass(frozen=True)
class QuoteVerdict:
    reasons: tuple[RejectReason, ...]

    @property
    def accepted(self) -> bool:
        return not self.reasons

    def __bool__(self):
        return self.accepted


def verify_quote(quote: Quote, expected_measurement: bytes, challenge: bytes, dh_share: bytes,
                 platform_pubkey: bytes) -> QuoteVerdict:
    """Check all three conjuncts and report every one that fails."""
    reasons = []
    try:
        Ed25519PublicKey.from_public_bytes(platform_pubkey).verify(quote.platform_signature, quote.signed_bytes)
    except (InvalidSignature, ValueError):
        reasons.append(RejectReason.SIGNATURE_INVALID)
    if quote.measurement != expected_measurement:
        reasons.append(RejectReason.MEASUREMENT_MISMATCH)
    if quote.report_data != report_data_for(challenge, dh_share):
        reasons.append(RejectReason.REPORT_DATA_MISMATCH)
    return QuoteVerdict(tuple(reasons))


class Platform:
    """Stand-in for the TEE hardware: attestation key, sealing root and counters.

    The public verification key is handed to verifiers out of band.
    """

    def __init__(self, signing_seed: bytes | None = None, sealing_secret: bytes | None = None):
        seed = signing_seed if signing_seed is not None else secrets.token_bytes(32)
        self._signing_key = Ed25519PrivateKey.from_private_bytes(seed)
        self._sealing_secret = sealing_secret if sealing_secret is not None else secrets.token_bytes(32)
        self._counters: dict[bytes, int] = {}
        self._lock = threading.Lock()

    @property
    def verification_key(self) -> bytes:
        return self._signing_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    def sign_report(self, measurement: bytes, report_data: bytes) -> Quote:
        return Quote(measurement, report_data, self._signing_key.sign(measurement + report_data))

    def sealing_root(self, measurement: bytes) -> bytes:
        # only the enclave layer calls this; the root never leaves the platform otherwise
        return hashlib.sha256(b"TCLP seal root" + self._sealing_secret + measurement).digest()

    def read_counter(self, measurement: bytes) -> int:
        with self._lock:
            return self._counters.get(measurement, 0)

    def increment_counter(self, measurement: bytes) -> int:
        with self._lock:
            value = self._counters.get(measurement, 0) + 1
            self._counters[measurement] = value
            return value
