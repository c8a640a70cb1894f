"""Authenticated wire protocol between the plant and the enclave.

Frame layout (all integers big-endian)::

    magic "TCLP"   4
    version        1   (0x01)
    msg_type       1   (0x01 sensor, 0x02 control, 0x10-0x13 handshake)
    session_id     8
    direction      1   (0x00 plant->enclave, 0x01 enclave->plant)
    seq            8
    payload_len    4
    ciphertext     payload_len
    tag            16

The 27 header bytes are the AES-GCM associated data. The 96-bit nonce is
send_salt (4 bytes) || seq (8 bytes).
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import (
    AuthenticationFailure,
    MalformedFrame,
    ReplayDetected,
    SessionRenewalRequired,
    ValidationError,
)

MAGIC = b"TCLP"
VERSION = 0x01
HEADER = struct.Struct(">4sBBQBQI")
HEADER_LEN = HEADER.size
TAG_LEN = 16
KEY_LEN = 16
SALT_LEN = 4
MAX_SEQ = 2**64 - 1
MAX_PAYLOAD = 1 << 16


class MsgType(IntEnum):
    SENSOR = 0x01
    CONTROL = 0x02
    HS_CHALLENGE = 0x10
    HS_QUOTE = 0x11
    HS_KEY_CONFIRM = 0x12
    HS_ACCEPT = 0x13


class Direction(IntEnum):
    PLANT_TO_ENCLAVE = 0x00
    ENCLAVE_TO_PLANT = 0x01

    @property
    def reverse(self) -> "Direction":
        return Direction(1 - self.value)


# Handshake frames 0x10/0x11 travel before any key exists. Their tag field
# carries a truncated SHA-256 checksum; authenticity comes from the quote.
UNKEYED_TYPES = frozenset({MsgType.HS_CHALLENGE, MsgType.HS_QUOTE})
SIGNAL_TYPES = frozenset({MsgType.SENSOR, MsgType.CONTROL})


class PayloadKind(IntEnum):
    SENSOR = 0x01
    CONTROL = 0x02


@dataclass(frozen=True)
class SignalPayload:
    kind: PayloadKind
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", PayloadKind(self.kind))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) != 2:
            raise ValidationError(f"{self.kind.name.lower()} payload carries 2 values, got {len(self.values)}")


def encode_payload(payload: SignalPayload) -> bytes:
    """kind (1B) || count (1B) || count x float64 little-endian."""
    n = len(payload.values)
    if n > 255:
        raise ValidationError("payload value count does not fit in one byte")
    return struct.pack(f"<BB{n}d", payload.kind, n, *payload.values)


def decode_payload(data: bytes) -> SignalPayload:
    if len(data) < 2:
        raise MalformedFrame("payload shorter than its 2-byte preamble")
    kind, n = data[0], data[1]
    if len(data) != 2 + 8 * n:
        raise MalformedFrame(f"payload length {len(data)} does not match count {n}")
    try:
        kind = PayloadKind(kind)
    except ValueError as exc:
        raise MalformedFrame(f"unknown payload kind 0x{kind:02x}") from exc
    values = struct.unpack(f"<{n}d", data[2:])
    if not all(math.isfinite(v) for v in values):
        raise MalformedFrame("payload carries non-finite values")
    try:
        return SignalPayload(kind, values)
    except ValidationError as exc:
        raise MalformedFrame(str(exc)) from exc


@dataclass(frozen=True)
class SecureMessage:
    msg_type: MsgType
    session_id: int
    direction: Direction
    seq: int
    ciphertext: bytes
    tag: bytes

    @property
    def header(self) -> bytes:
        return pack_header(self.msg_type, self.session_id, self.direction, self.seq, len(self.ciphertext))

    def to_bytes(self) -> bytes:
        return self.header + self.ciphertext + self.tag

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SecureMessage":
        raw = bytes(raw)
        if len(raw) < HEADER_LEN + TAG_LEN:
            raise MalformedFrame(f"frame of {len(raw)} bytes is shorter than header + tag")
        magic, version, mtype, sid, direction, seq, plen = HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise MalformedFrame("bad magic")
        if version != VERSION:
            raise MalformedFrame(f"unsupported version {version}")
        try:
            mtype = MsgType(mtype)
        except ValueError as exc:
            raise MalformedFrame(f"unknown msg_type 0x{mtype:02x}") from exc
        try:
            direction = Direction(direction)
        except ValueError as exc:
            raise MalformedFrame(f"unknown direction 0x{direction:02x}") from exc
        if plen > MAX_PAYLOAD or len(raw) != HEADER_LEN + plen + TAG_LEN:
            raise MalformedFrame(f"payload_len {plen} disagrees with frame size {len(raw)}")
        body = raw[HEADER_LEN:HEADER_LEN + plen]
        return cls(mtype, sid, direction, seq, body, raw[HEADER_LEN + plen:])


def pack_header(msg_type, session_id: int, direction, seq: int, payload_len: int) -> bytes:
    return HEADER.pack(MAGIC, VERSION, int(msg_type), session_id, int(direction), seq, payload_len)


def gcm_encrypt(key: bytes, nonce: bytes, plaintext: bytes, aad: bytes) -> tuple[bytes, bytes]:
    """AES-GCM primitive: returns (ciphertext, 16-byte tag)."""
    out = AESGCM(key).encrypt(nonce, plaintext, aad or None)
    return out[:-TAG_LEN], out[-TAG_LEN:]


def gcm_decrypt(key: bytes, nonce: bytes, ciphertext: bytes, tag: bytes, aad: bytes) -> bytes:
    try:
        return AESGCM(key).decrypt(nonce, ciphertext + tag, aad or None)
    except InvalidTag as exc:
        raise AuthenticationFailure("tag mismatch") from exc


@dataclass
class SessionContext:
    """One endpoint's view of an established session.

    Single writer: one thread seals (owns ``send_seq``) and one opens (owns
    ``recv_high_watermark``). The key is excluded from ``repr``.
    """

    session_id: int
    key: bytes = field(repr=False)
    send_salt: bytes
    recv_salt: bytes
    send_direction: Direction
    send_seq: int = 1
    recv_high_watermark: int = 0
    _aead: AESGCM = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.key) != KEY_LEN:
            raise ValidationError("session key must be 16 bytes")
        if len(self.send_salt) != SALT_LEN or len(self.recv_salt) != SALT_LEN:
            raise ValidationError("salts must be 4 bytes")
        self.send_direction = Direction(self.send_direction)
        self._aead = AESGCM(self.key)

    @property
    def recv_direction(self) -> Direction:
        return self.send_direction.reverse

    def __getstate__(self):
        raise TypeError("SessionContext holds key material and cannot be serialized")


def seal_message(ctx: SessionContext, msg_type, payload_bytes: bytes) -> SecureMessage:
    """Encrypt ``payload_bytes`` under the next send sequence number."""
    if ctx.send_seq >= MAX_SEQ:
        raise SessionRenewalRequired("send sequence exhausted")
    msg_type = MsgType(msg_type)
    seq = ctx.send_seq
    header = pack_header(msg_type, ctx.session_id, ctx.send_direction, seq, len(payload_bytes))
    nonce = ctx.send_salt + seq.to_bytes(8, "big")
    out = ctx._aead.encrypt(nonce, payload_bytes, header)
    ctx.send_seq = seq + 1
    return SecureMessage(msg_type, ctx.session_id, ctx.send_direction, seq, out[:-TAG_LEN], out[-TAG_LEN:])


def open_bytes(ctx: SessionContext, msg: SecureMessage) -> bytes:
    """Verify and decrypt one frame, enforcing strict monotone sequence acceptance.

    The tag is checked before the session id and sequence number; both are
    covered by the associated data, so a modified header fails authentication.
    """
    if isinstance(msg, (bytes, bytearray, memoryview)):
        msg = SecureMessage.from_bytes(msg)
    if msg.msg_type in UNKEYED_TYPES:
        raise MalformedFrame(f"{msg.msg_type.name} is not a keyed frame")
    if msg.direction != ctx.recv_direction:
        raise MalformedFrame("frame travels in the wrong direction for this endpoint")
    if len(msg.tag) != TAG_LEN:
        raise MalformedFrame("tag must be 16 bytes")
    nonce = ctx.recv_salt + msg.seq.to_bytes(8, "big")
    try:
        plaintext = ctx._aead.decrypt(nonce, msg.ciphertext + msg.tag, msg.header)
    except InvalidTag as exc:
        raise AuthenticationFailure(f"tag mismatch on seq {msg.seq}") from exc
    if msg.session_id != ctx.session_id:
        # unreachable without the key: session_id is authenticated
        raise AuthenticationFailure("session id mismatch")
    if msg.seq <= ctx.recv_high_watermark:
        raise ReplayDetected(f"seq {msg.seq} <= watermark {ctx.recv_high_watermark}")
    ctx.recv_high_watermark = msg.seq
    return plaintext


def open_message(ctx: SessionContext, msg: SecureMessage) -> SignalPayload:
    if isinstance(msg, (bytes, bytearray, memoryview)):
        msg = SecureMessage.from_bytes(msg)
    if msg.msg_type not in SIGNAL_TYPES:
        raise MalformedFrame(f"{msg.msg_type.name} does not carry a signal payload")
    payload = decode_payload(open_bytes(ctx, msg))
    if payload.kind != msg.msg_type:
        raise MalformedFrame("payload kind disagrees with msg_type")
    return payload


def seal_signal(ctx: SessionContext, kind: PayloadKind, values) -> bytes:
    payload = SignalPayload(kind, tuple(values))
    return seal_message(ctx, MsgType(int(kind)), encode_payload(payload)).to_bytes()


def unkeyed_frame(msg_type, session_id: int, direction, body: bytes) -> bytes:
    header = pack_header(msg_type, session_id, direction, 0, len(body))
    return header + body + hashlib.sha256(header + body).digest()[:TAG_LEN]


def parse_unkeyed(raw: bytes, expected_type) -> SecureMessage:
    msg = SecureMessage.from_bytes(raw)
    if msg.msg_type != expected_type:
        raise MalformedFrame(f"expected {MsgType(expected_type).name}, got {msg.msg_type.name}")
    if hashlib.sha256(msg.header + msg.ciphertext).digest()[:TAG_LEN] != msg.tag:
        raise MalformedFrame("handshake checksum mismatch")
    return msg
