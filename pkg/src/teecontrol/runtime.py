"""End-to-end loop: plant <-> (adversarial) channel <-> enclave service."""

from __future__ import annotations

import csv
import io
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import errors
from .attestation import Platform
from .channel import (
    Direction,
    PayloadKind,
    SessionContext,
    SignalPayload,
    decode_payload,
    encode_payload,
    open_message,
    seal_signal,
)
from .config import ControllerConfig, PlantConfig, load_controller_config, load_plant_config
from .control import controller_step
from .enclave import CrossingCost, Enclave, build_image, controller_from_image, create_enclave
from .errors import ChannelError, ConfigError, TeeControlError
from .handshake import PlantHandshake
from .plant import measure, step_linear, step_nonlinear

UP = Direction.PLANT_TO_ENCLAVE
DOWN = Direction.ENCLAVE_TO_PLANT


class LoopAborted(TeeControlError):
    """Too many consecutive steps without an accepted control input."""


@dataclass
class RunConfig:
    plant: PlantConfig = field(default_factory=load_plant_config)
    controller: ControllerConfig = field(default_factory=load_controller_config)
    steps: int = 500
    x0: np.ndarray | None = None
    mode: str = "secure"
    plant_model: str = "nonlinear"
    seed: int = 0
    crossing_us: float = 200.0
    jitter_us: float = 0.0
    record_estimates: bool = True
    u_limits: tuple[float, float] | None = None
    transport: str = "inprocess"
    max_missed_steps: int | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.mode not in ("secure", "plaintext"):
            raise ConfigError("mode must be 'secure' or 'plaintext'")
        if self.plant_model not in ("nonlinear", "linear"):
            raise ConfigError("plant_model must be 'nonlinear' or 'linear'")
        if self.transport not in ("inprocess", "socket"):
            raise ConfigError("transport must be 'inprocess' or 'socket'")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        x0 = self.plant.x_eq if self.x0 is None else self.x0
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (4,) or not np.all(np.isfinite(x0)) or np.any(x0 < 0):
            raise ConfigError("x0 must be 4 finite non-negative levels")
        self.x0 = x0
        # raises ConfigError on a Ts mismatch
        self.controller.model(self.plant)


@dataclass(frozen=True)
class FrameOutcome:
    step: int
    direction: Direction
    adversarial: bool
    action: str
    result: str


@dataclass
class StepRecord:
    step: int
    x: np.ndarray
    x_hat: np.ndarray
    y: np.ndarray
    u: np.ndarray
    status: str
    latency_us: float


CSV_COLUMNS = ["step", "x1", "x2", "x3", "x4", "xhat1", "xhat2", "xhat3", "xhat4",
               "y1", "y2", "u1", "u2", "channel_status", "latency_us"]
TIMING_COLUMNS = ("latency_us",)


@dataclass
class TrajectoryLog:
    mode: str
    sign_convention: str
    crossings_per_loop: int
    records: list[StepRecord] = field(default_factory=list)
    outcomes: list[FrameOutcome] = field(default_factory=list)
    sealed_blobs: list[bytes] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def array(self, name: str) -> np.ndarray:
        if not self.records:
            width = {"x": 4, "x_hat": 4, "y": 2, "u": 2}[name]
            return np.zeros((0, width))
        return np.array([getattr(r, name) for r in self.records])

    def rows(self, timing: bool = True):
        for r in self.records:
            row = [r.step, *r.x, *r.x_hat, *r.y, *r.u, r.status]
            row.append(f"{r.latency_us:.3f}" if timing else "")
            yield row

    def to_csv(self, target=None, timing: bool = True) -> str:
        """Write the trajectory CSV; ``timing=False`` blanks the latency column."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows(timing):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text


# -- transports ------------------------------------------------------------------

class InProcessTransport:
    def __init__(self, enclave: Enclave):
        self.enclave = enclave

    def handshake(self, frame: bytes) -> bytes:
        return self.enclave.ecall_handshake(frame)

    def control(self, frame: bytes) -> bytes | None:
        return self.enclave.ecall_control_step(frame)

    def debug_estimate(self) -> np.ndarray:
        return self.enclave.ecall_debug_estimate()

    def close(self):
        pass


_OP_HANDSHAKE, _OP_CONTROL, _OP_ESTIMATE = 0, 1, 2
_ST_FRAME, _ST_EMPTY, _ST_ERROR = 0, 1, 2
_LEN = struct.Struct(">I")


def _recv_exact(sock, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        buf.extend(chunk)
    return bytes(buf)


def send_record(sock, code: int, body: bytes):
    """Stream record: 4-byte BE length || 1-byte code || body."""
    sock.sendall(_LEN.pack(len(body) + 1) + bytes([code]) + body)


def recv_record(sock) -> tuple[int, bytes]:
    (n,) = _LEN.unpack(_recv_exact(sock, 4))
    if n < 1:
        raise ConnectionError("empty record")
    data = _recv_exact(sock, n)
    return data[0], data[1:]


class EnclaveServer:
    """Hosts an enclave behind a localhost TCP socket, one client at a time."""

    def __init__(self, enclave: Enclave, host: str = "127.0.0.1", port: int = 0):
        self.enclave = enclave
        self._sock = socket.create_server((host, port))
        self.address = self._sock.getsockname()
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def _serve(self):
        try:
            conn, _ = self._sock.accept()
        except OSError:
            return
        with conn:
            while True:
                try:
                    op, body = recv_record(conn)
                except (ConnectionError, OSError):
                    return
                try:
                    if op == _OP_HANDSHAKE:
                        out = self.enclave.ecall_handshake(body)
                    elif op == _OP_CONTROL:
                        out = self.enclave.ecall_control_step(body)
                    elif op == _OP_ESTIMATE:
                        out = struct.pack("<4d", *self.enclave.ecall_debug_estimate())
                    else:
                        raise errors.MalformedFrame(f"unknown op {op}")
                except TeeControlError as exc:
                    send_record(conn, _ST_ERROR, f"{type(exc).__name__}:{exc}".encode())
                    continue
                if out is None:
                    send_record(conn, _ST_EMPTY, b"")
                else:
                    send_record(conn, _ST_FRAME, out)

    def close(self):
        self._sock.close()
        self._thread.join(timeout=2)


class SocketTransport:
    def __init__(self, address):
        self._sock = socket.create_connection(address)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _call(self, op: int, body: bytes) -> bytes | None:
        send_record(self._sock, op, body)
        status, data = recv_record(self._sock)
        if status == _ST_FRAME:
            return data
        if status == _ST_EMPTY:
            return None
        name, _, msg = data.decode().partition(":")
        exc_type = getattr(errors, name, TeeControlError)
        if name == "AttestationRejected":
            raise errors.HandshakeError(msg)
        raise exc_type(msg)

    def handshake(self, frame: bytes) -> bytes:
        return self._call(_OP_HANDSHAKE, frame)

    def control(self, frame: bytes) -> bytes | None:
        return self._call(_OP_CONTROL, frame)

    def debug_estimate(self) -> np.ndarray:
        return np.array(struct.unpack("<4d", self._call(_OP_ESTIMATE, b"")))

    def close(self):
        self._sock.close()


# -- the loop ----------------------------------------------------------------------

def _passthrough(step, direction, frame):
    from .adversary import Emitted

    return [Emitted(frame, False, "deliver")]


def connect_session(transport, enclave_measurement: bytes, platform_pubkey: bytes, channel=None,
                    session_id: int | None = None) -> SessionContext:
    """Run the attested handshake from the plant side over ``transport``."""
    hs = PlantHandshake(enclave_measurement, platform_pubkey, session_id=session_id)
    send = channel.transmit if channel is not None else _passthrough

    def exchange(frame):
        replies = []
        for e in send(-1, UP, frame):
            replies.extend(x.frame for x in (send(-1, DOWN, transport.handshake(e.frame))))
        if len(replies) != 1:
            raise errors.HandshakeError(f"expected one handshake reply, got {len(replies)}")
        return replies[0]

    confirm = hs.handle_quote(exchange(hs.challenge_frame()))
    return hs.handle_accept(exchange(confirm))


class ClosedLoop:
    """One configured run; keeps the enclave and platform reachable for scenarios."""

    def __init__(self, config: RunConfig, channel=None, platform: Platform | None = None):
        self.config = config
        self.channel = channel
        self.model = config.controller.model(config.plant)
        self.image = build_image(config.plant, config.controller)
        self.platform = platform
        self.enclave: Enclave | None = None
        self.transport = None
        self._server = None
        self.session: SessionContext | None = None
        if config.mode == "secure":
            self.platform = platform if platform is not None else Platform()
            cost = CrossingCost(config.crossing_us, config.jitter_us, seed=config.seed)
            self.enclave = create_enclave(self.image, self.platform, cost, debug=config.record_estimates)
            if config.transport == "socket":
                self._server = EnclaveServer(self.enclave)
                self.transport = SocketTransport(self._server.address)
            else:
                self.transport = InProcessTransport(self.enclave)
            self.session = connect_session(self.transport, self.enclave.measurement,
                                           self.platform.verification_key, channel)
            self.sign_convention = self.enclave.gain_report.sign_convention
        else:
            self._ctrl, report = controller_from_image(self.image)
            self.sign_convention = report.sign_convention

    def close(self):
        if self.transport is not None:
            self.transport.close()
        if self._server is not None:
            self._server.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _send(self, step, direction, frame):
        if self.channel is None:
            return _passthrough(step, direction, frame)
        return self.channel.transmit(step, direction, frame)

    def _secure_exchange(self, k: int, y, log: TrajectoryLog):
        events = []
        new_u = None
        downlink = []
        for e in self._send(k, UP, seal_signal(self.session, PayloadKind.SENSOR, y)):
            try:
                out = self.transport.control(e.frame)
                result = "accepted"
            except ChannelError as exc:
                out, result = None, type(exc).__name__
                events.append(f"up:{result}")
            log.outcomes.append(FrameOutcome(k, UP, e.adversarial, e.action, result))
            if out is not None:
                downlink.extend(self._send(k, DOWN, out))
        for e in downlink:
            try:
                payload = open_message(self.session, e.frame)
                if payload.kind != PayloadKind.CONTROL:
                    raise errors.MalformedFrame("plant only accepts control frames")
                new_u = np.array(payload.values)
                result = "accepted"
            except ChannelError as exc:
                result = type(exc).__name__
                events.append(f"down:{result}")
            log.outcomes.append(FrameOutcome(k, DOWN, e.adversarial, e.action, result))
        return new_u, events

    def _plain_exchange(self, k: int, y, log: TrajectoryLog):
        # same payload codec, no crypto and no boundary
        events = []
        new_u = None
        downlink = []
        for e in self._send(k, UP, encode_payload(SignalPayload(PayloadKind.SENSOR, tuple(y)))):
            try:
                payload = decode_payload(e.frame)
                u, self._ctrl = controller_step(self._ctrl, payload.values)
                downlink.extend(self._send(k, DOWN, encode_payload(SignalPayload(PayloadKind.CONTROL, tuple(u)))))
                result = "accepted"
            except (ChannelError, errors.ValidationError) as exc:
                result = type(exc).__name__
                events.append(f"up:{result}")
            log.outcomes.append(FrameOutcome(k, UP, e.adversarial, e.action, result))
        for e in downlink:
            try:
                new_u = np.array(decode_payload(e.frame).values)
                result = "accepted"
            except ChannelError as exc:
                result = type(exc).__name__
                events.append(f"down:{result}")
            log.outcomes.append(FrameOutcome(k, DOWN, e.adversarial, e.action, result))
        return new_u, events

    def run(self, steps: int | None = None) -> TrajectoryLog:
        cfg = self.config
        steps = cfg.steps if steps is None else steps
        secure = cfg.mode == "secure"
        log = TrajectoryLog(cfg.mode, self.sign_convention, 2 if secure else 0)
        rng = np.random.default_rng(cfg.plant.noise_seed if cfg.plant.noise_std > 0 else cfg.seed)
        params = cfg.plant.params
        x = cfg.x0.copy()
        u_hold = self.model.u_eq.copy()
        missed = 0
        exchange = self._secure_exchange if secure else self._plain_exchange
        for k in range(steps):
            if secure:
                x_hat = self.transport.debug_estimate() if cfg.record_estimates else np.full(4, np.nan)
            else:
                x_hat = self._ctrl.x_hat.copy()
            y = measure(x, params.kc, cfg.plant.noise_std, rng)
            t0 = time.perf_counter_ns()
            new_u, events = exchange(k, y, log)
            latency = (time.perf_counter_ns() - t0) / 1000.0
            if new_u is None:
                missed += 1
                events.append("hold")
                if cfg.max_missed_steps is not None and missed > cfg.max_missed_steps:
                    raise LoopAborted(f"no control input accepted for {missed} consecutive steps")
            else:
                missed = 0
                u_hold = new_u
            u = u_hold if cfg.u_limits is None else np.clip(u_hold, *cfg.u_limits)
            log.records.append(StepRecord(k, x.copy(), x_hat, y, u.copy(), ";".join(events) or "ok", latency))
            if cfg.plant_model == "linear":
                x = np.maximum(step_linear(self.model, x, u), 0.0)
            else:
                x = step_nonlinear(x, u, params, cfg.plant.Ts, cfg.plant.substeps)
            if secure and cfg.checkpoint_every and (k + 1) % cfg.checkpoint_every == 0:
                log.sealed_blobs.append(self.enclave.seal_state(bump=True).to_bytes())
        return log


def run_closed_loop(config: RunConfig, channel=None) -> TrajectoryLog:
    with ClosedLoop(config, channel) as loop:
        return loop.run()
