"""Attested key agreement that opens a channel session.

Message flow (frame types from :mod:`teecontrol.channel`)::

    plant   -> enclave  HS_CHALLENGE   challenge (32) || plant P-256 share (65)
    enclave -> plant    HS_QUOTE       enclave nonce (32) || enclave share (65) || quote (128)
    plant   -> enclave  HS_KEY_CONFIRM sealed transcript digest
    enclave -> plant    HS_ACCEPT      sealed transcript digest

The quote's report_data is SHA-256(challenge || enclave share), so the
ephemeral key the plant agrees with is the one generated inside the
measured enclave.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
from dataclasses import dataclass

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .attestation import QUOTE_LEN, Quote, verify_quote
from .channel import (
    KEY_LEN,
    SALT_LEN,
    Direction,
    MsgType,
    SecureMessage,
    SessionContext,
    open_bytes,
    parse_unkeyed,
    seal_message,
    unkeyed_frame,
)
from .errors import AttestationRejected, ChannelError, HandshakeError, MalformedFrame

CHALLENGE_LEN = 32
NONCE_LEN = 32
SHARE_LEN = 65
CURVE = ec.SECP256R1()


def new_dh_key() -> ec.EllipticCurvePrivateKey:
    return ec.generate_private_key(CURVE)


def public_share(key: ec.EllipticCurvePrivateKey) -> bytes:
    return key.public_key().public_bytes(Encoding.X962, PublicFormat.UncompressedPoint)


@dataclass(frozen=True)
class HandshakeTranscript:
    session_id: int
    challenge: bytes
    plant_share: bytes
    enclave_nonce: bytes
    enclave_share: bytes

    def digest(self) -> bytes:
        return hashlib.sha256(
            b"TCLP handshake v1"
            + self.session_id.to_bytes(8, "big")
            + self.challenge
            + self.plant_share
            + self.enclave_nonce
            + self.enclave_share
        ).digest()


def establish_session(role: str, transcript: HandshakeTranscript, private_key) -> SessionContext:
    """Derive the session key and per-direction salts with HKDF-SHA256 over ECDH.

    Both roles get the same key; the plant's send salt is the enclave's
    receive salt and vice versa.
    """
    if role not in ("plant", "enclave"):
        raise ValueError("role must be 'plant' or 'enclave'")
    own, peer = (transcript.plant_share, transcript.enclave_share) if role == "plant" else (
        transcript.enclave_share, transcript.plant_share)
    if public_share(private_key) != own:
        raise HandshakeError("transcript does not carry this endpoint's key share")
    try:
        peer_key = ec.EllipticCurvePublicKey.from_encoded_point(CURVE, peer)
    except ValueError as exc:
        raise HandshakeError("peer key share is not a valid P-256 point") from exc
    shared = private_key.exchange(ec.ECDH(), peer_key)
    okm = HKDF(
        algorithm=hashes.SHA256(),
        length=KEY_LEN + 2 * SALT_LEN,
        salt=transcript.challenge + transcript.enclave_nonce,
        info=b"TCLP v1 session keys" + transcript.digest(),
    ).derive(shared)
    key = okm[:KEY_LEN]
    plant_salt = okm[KEY_LEN:KEY_LEN + SALT_LEN]
    enclave_salt = okm[KEY_LEN + SALT_LEN:]
    if role == "plant":
        return SessionContext(transcript.session_id, key, plant_salt, enclave_salt, Direction.PLANT_TO_ENCLAVE)
    return SessionContext(transcript.session_id, key, enclave_salt, plant_salt, Direction.ENCLAVE_TO_PLANT)


def challenge_body(challenge: bytes, plant_share: bytes) -> bytes:
    return challenge + plant_share


def parse_challenge(raw: bytes) -> tuple[int, bytes, bytes]:
    msg = parse_unkeyed(raw, MsgType.HS_CHALLENGE)
    if msg.direction != Direction.PLANT_TO_ENCLAVE or len(msg.ciphertext) != CHALLENGE_LEN + SHARE_LEN:
        raise MalformedFrame("challenge frame has the wrong shape")
    return msg.session_id, msg.ciphertext[:CHALLENGE_LEN], msg.ciphertext[CHALLENGE_LEN:]


def quote_frame(session_id: int, enclave_nonce: bytes, enclave_share: bytes, quote: Quote) -> bytes:
    return unkeyed_frame(MsgType.HS_QUOTE, session_id, Direction.ENCLAVE_TO_PLANT,
                         enclave_nonce + enclave_share + quote.to_bytes())


def parse_quote_frame(raw: bytes) -> tuple[int, bytes, bytes, Quote]:
    msg = parse_unkeyed(raw, MsgType.HS_QUOTE)
    body = msg.ciphertext
    if msg.direction != Direction.ENCLAVE_TO_PLANT or len(body) != NONCE_LEN + SHARE_LEN + QUOTE_LEN:
        raise MalformedFrame("quote frame has the wrong shape")
    return (msg.session_id, body[:NONCE_LEN], body[NONCE_LEN:NONCE_LEN + SHARE_LEN],
            Quote.from_bytes(body[NONCE_LEN + SHARE_LEN:]))


def open_confirmation(ctx: SessionContext, raw: bytes, expected_type: MsgType, transcript: HandshakeTranscript):
    msg = SecureMessage.from_bytes(raw)
    if msg.msg_type != expected_type:
        raise HandshakeError(f"expected {expected_type.name}, got {msg.msg_type.name}")
    try:
        digest = open_bytes(ctx, msg)
    except ChannelError as exc:
        raise HandshakeError(f"key confirmation failed: {exc}") from exc
    if not hmac.compare_digest(digest, transcript.digest()):
        raise HandshakeError("transcript mismatch")


class PlantHandshake:
    """Plant-side driver: challenge, verify the quote, confirm the key."""

    def __init__(self, expected_measurement: bytes, platform_pubkey: bytes, session_id: int | None = None,
                 challenge: bytes | None = None):
        self.expected_measurement = expected_measurement
        self.platform_pubkey = platform_pubkey
        self.session_id = session_id if session_id is not None else secrets.randbits(64)
        self.challenge = challenge if challenge is not None else secrets.token_bytes(CHALLENGE_LEN)
        self._key = new_dh_key()
        self.plant_share = public_share(self._key)
        self.transcript: HandshakeTranscript | None = None
        self.verdict = None
        self._ctx: SessionContext | None = None

    def challenge_frame(self) -> bytes:
        return unkeyed_frame(MsgType.HS_CHALLENGE, self.session_id, Direction.PLANT_TO_ENCLAVE,
                             challenge_body(self.challenge, self.plant_share))

    def handle_quote(self, raw: bytes) -> bytes:
        sid, nonce, share, quote = parse_quote_frame(raw)
        if sid != self.session_id:
            raise HandshakeError("quote answers a different session")
        self.verdict = verify_quote(quote, self.expected_measurement, self.challenge, share, self.platform_pubkey)
        if not self.verdict.accepted:
            raise AttestationRejected(self.verdict.reasons)
        self.transcript = HandshakeTranscript(self.session_id, self.challenge, self.plant_share, nonce, share)
        self._ctx = establish_session("plant", self.transcript, self._key)
        return seal_message(self._ctx, MsgType.HS_KEY_CONFIRM, self.transcript.digest()).to_bytes()

    def handle_accept(self, raw: bytes) -> SessionContext:
        if self._ctx is None:
            raise HandshakeError("accept received before the quote was verified")
        open_confirmation(self._ctx, raw, MsgType.HS_ACCEPT, self.transcript)
        return self._ctx
