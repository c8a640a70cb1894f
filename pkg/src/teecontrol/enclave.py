"""Simulated trusted execution boundary hosting the controller and the session key.

Everything behind the boundary lives in underscore attributes and is only
touched from inside E-Calls. Each E-Call and O-Call pays a configurable
crossing cost, so in-enclave stopwatch measurements carry the same
``dt`` overhead as on real hardware.
"""

from __future__ import annotations

import random
import secrets
import struct
import threading
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .attestation import EnclaveImage, Platform, Quote, measure_image, report_data_for
from .channel import MsgType, PayloadKind, SecureMessage, open_message, seal_message, seal_signal
from .config import ControllerConfig, PlantConfig
from .control import ControllerState, GainReport, build_controller, controller_step
from .errors import (
    AuthenticationFailure,
    ChannelError,
    ConfigError,
    EnclaveError,
    HandshakeError,
    IsolationError,
    MalformedFrame,
    RollbackDetected,
    UnknownSession,
    ValidationError,
)
from .handshake import (
    NONCE_LEN,
    HandshakeTranscript,
    establish_session,
    new_dh_key,
    open_confirmation,
    parse_challenge,
    public_share,
    quote_frame,
)
from .plant import LinearModel
from .workloads import make_workload


@dataclass
class CrossingCost:
    """Simulated cost of one boundary crossing (enter or exit), busy-waited.

    An O-Call is an exit plus a re-entry, so the stopwatch overhead
    ``dt`` is twice ``crossing_us``.
    """

    crossing_us: float = 200.0
    jitter_us: float = 0.0
    seed: int = 0
    _rng: random.Random = field(init=False, repr=False)

    def __post_init__(self):
        if self.crossing_us < 0 or self.jitter_us < 0:
            raise ValidationError("crossing cost and jitter must be >= 0")
        self._rng = random.Random(self.seed)

    @property
    def delta_t_us(self) -> float:
        return 2.0 * self.crossing_us

    def spend(self):
        us = self.crossing_us
        if self.jitter_us:
            us = max(0.0, us + self._rng.gauss(0.0, self.jitter_us))
        if us <= 0:
            return
        deadline = time.perf_counter_ns() + int(us * 1000)
        while time.perf_counter_ns() < deadline:
            pass


def image_config(plant: PlantConfig, controller: ControllerConfig) -> dict:
    """Resolved controller config as it is baked into the enclave image."""
    model = controller.model(plant)
    x_hat0 = controller.x_hat0 if controller.x_hat0 is not None else model.x_eq
    return {
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "C": model.C.tolist(),
        "Ts": model.Ts,
        "kc": model.kc,
        "x_eq": model.x_eq.tolist(),
        "u_eq": model.u_eq.tolist(),
        "L": np.asarray(controller.L).tolist(),
        "K": np.asarray(controller.K).tolist(),
        "sign": controller.sign,
        "x_hat0": np.asarray(x_hat0).tolist(),
    }


def build_image(plant: PlantConfig, controller: ControllerConfig) -> EnclaveImage:
    return EnclaveImage.from_config(image_config(plant, controller))


def controller_from_image(image: EnclaveImage) -> tuple[ControllerState, GainReport]:
    doc = image.parse()
    try:
        model = LinearModel(A=doc["A"], B=doc["B"], C=doc["C"], Ts=doc["Ts"], x_eq=doc["x_eq"],
                            u_eq=doc["u_eq"], kc=doc["kc"])
        return build_controller(model, doc["L"], doc["K"], doc.get("sign", "auto"), doc.get("x_hat0"))
    except (KeyError, TypeError, ValidationError, ConfigError) as exc:
        raise EnclaveError(f"image does not hold a valid controller config: {exc}") from exc


@dataclass(frozen=True)
class SealedBlob:
    """counter (8, BE) || nonce (12) || ciphertext+tag."""

    counter: int
    nonce: bytes
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        return self.counter.to_bytes(8, "big") + self.nonce + self.ciphertext

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SealedBlob":
        if len(raw) < 8 + 12 + 16:
            raise AuthenticationFailure("sealed blob truncated")
        return cls(int.from_bytes(raw[:8], "big"), raw[8:20], raw[20:])


@dataclass
class Fault:
    kind: str
    detail: str


class Enclave:
    """Handle to one enclave instance; obtain with :func:`create_enclave`."""

    def __init__(self, image: EnclaveImage, platform: Platform, cost: CrossingCost | None = None,
                 debug: bool = False):
        t0 = time.perf_counter_ns()
        self._platform = platform
        self._ctrl, self.gain_report = controller_from_image(image)
        self._measurement = measure_image(image)
        self._seal_key = platform.sealing_root(self._measurement)[:16]
        self._session = None
        self._pending = None
        self._lock = threading.Lock()
        self.cost = cost if cost is not None else CrossingCost()
        self.debug = debug
        self.crossings = 0
        self.detections: Counter[str] = Counter()
        self.faults: list[Fault] = []
        self.outbound_log: list[bytes] = []
        self.last_call_ns = 0
        self.creation_time_us = (time.perf_counter_ns() - t0) / 1000.0

    @property
    def measurement(self) -> bytes:
        return self._measurement

    @property
    def monotonic_counter(self) -> int:
        return self._platform.read_counter(self._measurement)

    @property
    def session_established(self) -> bool:
        return self._session is not None

    @contextmanager
    def _ecall(self):
        # E-Calls are serialized; entry and exit each cost one crossing
        with self._lock:
            t0 = time.perf_counter_ns()
            self.cost.spend()
            self.crossings += 1
            try:
                yield
            finally:
                self.cost.spend()
                self.crossings += 1
                self.last_call_ns = time.perf_counter_ns() - t0

    def _emit(self, data: bytes) -> bytes:
        self.outbound_log.append(bytes(data))
        return data

    def _ocall_timestamp(self) -> int:
        self.cost.spend()
        self.crossings += 1
        t = time.perf_counter_ns()
        self.cost.spend()
        self.crossings += 1
        self.outbound_log.append(t.to_bytes(8, "big"))
        return t

    # -- attestation and session -------------------------------------------

    def _attest(self, challenge: bytes) -> Quote:
        key = new_dh_key()
        share = public_share(key)
        self._pending = {"challenge": challenge, "key": key, "share": share, "nonce": secrets.token_bytes(NONCE_LEN)}
        return self._platform.sign_report(self._measurement, report_data_for(challenge, share))

    def attest(self, challenge: bytes) -> Quote:
        """Quote binding this enclave's measurement to ``challenge`` and a fresh DH share."""
        if len(challenge) != 32:
            raise ValidationError("challenge must be 32 bytes")
        with self._ecall():
            return self._attest(challenge)

    @property
    def dh_share(self) -> bytes | None:
        return self._pending["share"] if self._pending else None

    def ecall_handshake(self, raw: bytes) -> bytes:
        with self._ecall():
            msg = SecureMessage.from_bytes(raw)
            if msg.msg_type == MsgType.HS_CHALLENGE:
                sid, challenge, plant_share = parse_challenge(raw)
                quote = self._attest(challenge)
                p = self._pending
                p["transcript"] = HandshakeTranscript(sid, challenge, plant_share, p["nonce"], p["share"])
                return self._emit(quote_frame(sid, p["nonce"], p["share"], quote))
            if msg.msg_type == MsgType.HS_KEY_CONFIRM:
                p = self._pending
                if not p or "transcript" not in p:
                    raise HandshakeError("key confirmation without a preceding challenge")
                ctx = establish_session("enclave", p["transcript"], p["key"])
                open_confirmation(ctx, raw, MsgType.HS_KEY_CONFIRM, p["transcript"])
                self._session = ctx
                self._pending = None
                accept = seal_message(ctx, MsgType.HS_ACCEPT, p["transcript"].digest())
                return self._emit(accept.to_bytes())
            raise MalformedFrame(f"{msg.msg_type.name} is not a handshake request")

    # -- control loop ----------------------------------------------------------

    def ecall_control_step(self, raw: bytes) -> bytes | None:
        """Open a sensor frame, run one controller step, seal the control frame.

        Channel rejections are counted and re-raised; controller faults are
        recorded and produce no output frame.
        """
        with self._ecall():
            if self._session is None:
                self.detections["UnknownSession"] += 1
                raise UnknownSession("no session established")
            try:
                payload = open_message(self._session, raw)
                if payload.kind != PayloadKind.SENSOR:
                    raise MalformedFrame("enclave only accepts sensor frames")
            except ChannelError as exc:
                self.detections[type(exc).__name__] += 1
                raise
            try:
                u, ctrl = controller_step(self._ctrl, payload.values)
            except ValidationError as exc:
                self.faults.append(Fault("controller", str(exc)))
                return None
            self._ctrl = ctrl
            return self._emit(seal_signal(self._session, PayloadKind.CONTROL, u))

    def ocall_timestamp(self) -> int:
        """Stopwatch O-Call: exit the boundary, read the monotonic clock, re-enter."""
        return self._ocall_timestamp()

    def ecall_debug_estimate(self) -> np.ndarray:
        if not self.debug:
            raise IsolationError("state inspection is only available on debug enclaves")
        with self._ecall():
            return self._ctrl.x_hat.copy()

    def ecall_benchmark(self, workload: str, reps: int, warmup: int = 0) -> int:
        """Time ``reps`` repetitions of a workload with the O-Call stopwatch.

        Returns the raw stopwatch reading in ns, which includes one ``dt``.
        """
        if reps < 1:
            raise ValidationError("reps must be >= 1")
        with self._ecall():
            prepare, run = make_workload(workload, self._ctrl)
            prepare(max(reps, warmup))
            for i in range(warmup):
                run(i)
            prepare(reps)
            t0 = self._ocall_timestamp()
            for i in range(reps):
                run(i)
            t1 = self._ocall_timestamp()
            return t1 - t0

    # -- sealed storage ----------------------------------------------------------

    def _aad(self, counter: int) -> bytes:
        return b"TCLP sealed v1" + self._measurement + counter.to_bytes(8, "big")

    def seal_state(self, bump: bool = True) -> SealedBlob:
        """Seal x_hat under the measurement-bound key, bound to the monotonic counter."""
        with self._ecall():
            if bump:
                counter = self._platform.increment_counter(self._measurement)
            else:
                counter = self._platform.read_counter(self._measurement)
            nonce = secrets.token_bytes(12)
            plaintext = struct.pack("<4d", *self._ctrl.x_hat)
            blob = SealedBlob(counter, nonce, AESGCM(self._seal_key).encrypt(nonce, plaintext, self._aad(counter)))
            self._emit(blob.to_bytes())
            return blob

    def unseal_state(self, blob) -> None:
        """Restore x_hat from a blob; the restored state stays inside the enclave."""
        if isinstance(blob, (bytes, bytearray)):
            blob = SealedBlob.from_bytes(bytes(blob))
        with self._ecall():
            try:
                plaintext = AESGCM(self._seal_key).decrypt(blob.nonce, blob.ciphertext, self._aad(blob.counter))
            except (InvalidTag, ValueError) as exc:
                self.detections["AuthenticationFailure"] += 1
                raise AuthenticationFailure("sealed blob failed authentication") from exc
            current = self._platform.read_counter(self._measurement)
            if blob.counter != current:
                self.detections["RollbackDetected"] += 1
                raise RollbackDetected(f"blob bound to counter {blob.counter}, platform is at {current}")
            x_hat = np.array(struct.unpack("<4d", plaintext))
            self._ctrl = ControllerState(x_hat=x_hat, model=self._ctrl.model, L=self._ctrl.L, K=self._ctrl.K)


def create_enclave(image: EnclaveImage, platform: Platform, cost: CrossingCost | None = None,
                   debug: bool = False) -> Enclave:
    return Enclave(image, platform, cost=cost, debug=debug)
