import pytest

from teecontrol.attestation import Platform, RejectReason
from teecontrol.channel import KEY_LEN, SALT_LEN, PayloadKind, open_message, seal_signal
from teecontrol.enclave import CrossingCost, build_image, create_enclave
from teecontrol.errors import AttestationRejected, HandshakeError, MalformedFrame
from teecontrol.handshake import (
    HandshakeTranscript,
    PlantHandshake,
    establish_session,
    new_dh_key,
    public_share,
)


def transcript(challenge=b"c" * 32, nonce=b"n" * 32):
    plant_key, enclave_key = new_dh_key(), new_dh_key()
    t = HandshakeTranscript(42, challenge, public_share(plant_key), nonce, public_share(enclave_key))
    return t, plant_key, enclave_key


def test_both_roles_agree():
    t, pk, ek = transcript()
    plant = establish_session("plant", t, pk)
    enclave = establish_session("enclave", t, ek)
    assert plant.key == enclave.key
    assert plant.send_salt == enclave.recv_salt and plant.recv_salt == enclave.send_salt
    assert plant.send_salt != plant.recv_salt
    assert len(plant.key) == KEY_LEN == 16 and len(plant.send_salt) == SALT_LEN == 4
    frame = seal_signal(plant, PayloadKind.SENSOR, (1.0, 2.0))
    assert open_message(enclave, frame).values == (1.0, 2.0)


def test_challenge_byte_changes_keys():
    t, pk, ek = transcript()
    changed = HandshakeTranscript(t.session_id, b"d" + t.challenge[1:], t.plant_share, t.enclave_nonce,
                                  t.enclave_share)
    assert establish_session("plant", t, pk).key != establish_session("plant", changed, pk).key


def test_wrong_private_key():
    t, pk, _ = transcript()
    with pytest.raises(HandshakeError):
        establish_session("plant", t, new_dh_key())
    with pytest.raises(ValueError):
        establish_session("cloud", t, pk)


@pytest.fixture
def live(plant, controller):
    platform = Platform()
    image = build_image(plant, controller)
    enclave = create_enclave(image, platform, CrossingCost(0.0))
    return enclave, platform


def test_full_handshake(live):
    enclave, platform = live
    hs = PlantHandshake(enclave.measurement, platform.verification_key)
    confirm = hs.handle_quote(enclave.ecall_handshake(hs.challenge_frame()))
    ctx = hs.handle_accept(enclave.ecall_handshake(confirm))
    assert enclave.session_established and hs.verdict.accepted
    out = enclave.ecall_control_step(seal_signal(ctx, PayloadKind.SENSOR, (6.2, 6.35)))
    assert open_message(ctx, out).values == (3.0, 3.0)


def test_handshake_wrong_measurement(live):
    enclave, platform = live
    hs = PlantHandshake(b"\x00" * 32, platform.verification_key)
    with pytest.raises(AttestationRejected) as info:
        hs.handle_quote(enclave.ecall_handshake(hs.challenge_frame()))
    assert info.value.reasons == (RejectReason.MEASUREMENT_MISMATCH,)
    assert not enclave.session_established


def test_handshake_wrong_platform(live):
    enclave, _ = live
    hs = PlantHandshake(enclave.measurement, Platform().verification_key)
    with pytest.raises(AttestationRejected) as info:
        hs.handle_quote(enclave.ecall_handshake(hs.challenge_frame()))
    assert info.value.reasons == (RejectReason.SIGNATURE_INVALID,)


def test_confirm_before_challenge(live):
    enclave, platform = live
    hs = PlantHandshake(enclave.measurement, platform.verification_key)
    with pytest.raises(HandshakeError):
        hs.handle_accept(b"")
    with pytest.raises(MalformedFrame):
        enclave.ecall_handshake(b"TCLP")


def test_tampered_quote_frame(live):
    enclave, platform = live
    hs = PlantHandshake(enclave.measurement, platform.verification_key)
    raw = bytearray(enclave.ecall_handshake(hs.challenge_frame()))
    raw[40] ^= 1
    with pytest.raises(MalformedFrame):
        hs.handle_quote(bytes(raw))
