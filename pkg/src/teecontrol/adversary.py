"""Dolev-Yao adversary on the plant <-> enclave wire and scripted attack scenarios.

The adversary works on raw frame bytes only. It never holds key material:
every frame it emits is either a genuine frame, a modified copy, an old
recording, or bytes it made up.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .attestation import Platform, measure_image
from .channel import TAG_LEN, Direction, MsgType, PayloadKind, SecureMessage, SignalPayload
from .channel import encode_payload, pack_header, parse_unkeyed, unkeyed_frame
from .config import SCENARIOS, ControllerConfig, PlantConfig, ScenarioConfig
from .enclave import CrossingCost, build_image, create_enclave
from .errors import AttestationRejected, AuthenticationFailure, ConfigError, HandshakeError, RollbackDetected
from .handshake import PlantHandshake
from .runtime import ClosedLoop, RunConfig, TrajectoryLog


# -- actions ----------------------------------------------------------------------

@dataclass(frozen=True)
class Deliver:
    pass


@dataclass(frozen=True)
class Drop:
    pass


@dataclass(frozen=True)
class Tamper:
    """Flip bits. ``bits`` lists absolute bit positions; empty means one random
    bit per copy. With ``keep_genuine`` the original follows the copies."""

    bits: tuple[int, ...] = ()
    copies: int = 1
    keep_genuine: bool = False


@dataclass(frozen=True)
class Replay:
    """Deliver the genuine frame, preceded by re-sends of recorded frames.

    ``index`` picks one recorded frame of the same direction; otherwise the
    last ``depth`` recordings are replayed.
    """

    depth: int = 1
    index: int | None = None


@dataclass(frozen=True)
class Inject:
    raw: bytes | None = None
    count: int = 1
    keep_genuine: bool = True


@dataclass(frozen=True)
class Delay:
    steps: int = 1


@dataclass(frozen=True)
class Reorder:
    pass


Action = Deliver | Drop | Tamper | Replay | Inject | Delay | Reorder
Policy = Callable[[int, Direction, bytes], Action]


@dataclass(frozen=True)
class Emitted:
    frame: bytes
    adversarial: bool
    action: str


@dataclass(frozen=True)
class ActionRecord:
    step: int
    direction: Direction
    action: str
    adversarial_emitted: int
    adversarial_dropped: int


def deliver_all(step, direction, frame) -> Action:
    return Deliver()


def flip_bit(frame: bytes, bit: int) -> bytes:
    buf = bytearray(frame)
    buf[bit // 8] ^= 1 << (bit % 8)
    return bytes(buf)


def forge_like(frame: bytes, rng: np.random.Generator) -> bytes:
    """Well-formed frame with the observed header and random body and tag."""
    try:
        msg = SecureMessage.from_bytes(frame)
    except Exception:
        return bytes(rng.integers(0, 256, size=len(frame), dtype=np.uint8))
    body = bytes(rng.integers(0, 256, size=len(msg.ciphertext), dtype=np.uint8))
    tag = bytes(rng.integers(0, 256, size=TAG_LEN, dtype=np.uint8))
    # bump the sequence number so the forgery is not rejected as a mere replay
    header = pack_header(msg.msg_type, msg.session_id, msg.direction, msg.seq + 1, len(body))
    return header + body + tag


class AdversarialChannel:
    """Synchronous interposer between the two endpoints."""

    def __init__(self, policy: Policy | None = None, seed: int = 0):
        self.policy = policy or deliver_all
        self.rng = np.random.default_rng(seed)
        self.capture_log: list[tuple[int, Direction, bytes]] = []
        self.action_log: list[ActionRecord] = []
        self._history: dict[Direction, list[bytes]] = {Direction.PLANT_TO_ENCLAVE: [], Direction.ENCLAVE_TO_PLANT: []}
        self._delayed: list[tuple[int, Direction, bytes]] = []
        self._reorder: dict[Direction, bytes | None] = {d: None for d in Direction}
        self.step = 0
        self.direction = Direction.PLANT_TO_ENCLAVE

    def interpose(self, frame: bytes) -> list[bytes]:
        """Apply the policy to one frame at the current step/direction."""
        return [e.frame for e in self.transmit(self.step, self.direction, frame)]

    def transmit(self, step: int, direction: Direction, frame: bytes) -> list[Emitted]:
        frame = bytes(frame)
        self.capture_log.append((step, direction, frame))
        out: list[Emitted] = []
        due = [d for d in self._delayed if d[0] <= step and d[1] == direction]
        for d in due:
            self._delayed.remove(d)
            out.append(Emitted(d[2], True, "delay"))

        action = self.policy(step, direction, frame)
        name = type(action).__name__.lower()
        emitted = []
        dropped = 0
        if isinstance(action, Deliver):
            emitted.append(Emitted(frame, False, name))
        elif isinstance(action, Drop):
            dropped = 1
        elif isinstance(action, Tamper):
            for _ in range(action.copies):
                bits = action.bits or (int(self.rng.integers(0, 8 * len(frame))),)
                tampered = frame
                for b in bits:
                    tampered = flip_bit(tampered, b)
                emitted.append(Emitted(tampered, True, name))
            if action.keep_genuine:
                emitted.append(Emitted(frame, False, "deliver"))
            else:
                dropped = 1
        elif isinstance(action, Replay):
            hist = self._history[direction]
            if action.index is not None:
                picks = [hist[action.index]] if -len(hist) <= action.index < len(hist) else []
            else:
                picks = hist[-action.depth:] if action.depth > 0 else []
            emitted.extend(Emitted(old, True, name) for old in picks)
            emitted.append(Emitted(frame, False, "deliver"))
        elif isinstance(action, Inject):
            for _ in range(action.count):
                raw = action.raw if action.raw is not None else forge_like(frame, self.rng)
                emitted.append(Emitted(raw, True, name))
            if action.keep_genuine:
                emitted.append(Emitted(frame, False, "deliver"))
            else:
                dropped = 1
        elif isinstance(action, Delay):
            self._delayed.append((step + action.steps, direction, frame))
        elif isinstance(action, Reorder):
            held = self._reorder[direction]
            if held is None:
                self._reorder[direction] = frame
            else:
                self._reorder[direction] = None
                emitted.append(Emitted(frame, False, "deliver"))
                emitted.append(Emitted(held, True, name))
        else:
            raise TypeError(f"unknown action {action!r}")

        if step >= 0:
            self._history[direction].append(frame)
        out.extend(emitted)
        self.action_log.append(ActionRecord(step, direction, name, sum(e.adversarial for e in out), dropped))
        return out


# -- reports -------------------------------------------------------------------------

@dataclass
class AttackReport:
    scenario: str
    seed: int
    steps: int
    window: tuple[int, int]
    attempted: int = 0
    delivered: int = 0
    dropped: int = 0
    accepted: int = 0
    rejected: int = 0
    detected: Counter = field(default_factory=Counter)
    genuine_delivered: int = 0
    genuine_rejected: int = 0
    max_deviation_cm: float = 0.0
    held_steps: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def undetected_accepted(self) -> int:
        return self.accepted

    def check_invariants(self):
        assert self.attempted == self.delivered + self.dropped, "attempted != delivered + dropped"
        assert self.accepted + self.rejected == self.delivered, "accepted + rejected != delivered"

    def to_text(self) -> str:
        lines = [
            f"scenario                    {self.scenario}",
            f"seed                        {self.seed}",
            f"steps                       {self.steps}",
            f"attack window               [{self.window[0]}, {self.window[1]})",
            f"attempted                   {self.attempted}",
            f"delivered                   {self.delivered}",
            f"dropped                     {self.dropped}",
            f"detected                    {self.rejected}",
            f"undetected-accepted         {self.accepted}",
        ]
        for cls in sorted(self.detected):
            lines.append(f"  {cls:<26}{self.detected[cls]}")
        lines += [
            f"genuine delivered           {self.genuine_delivered}",
            f"genuine rejected            {self.genuine_rejected}",
            f"held steps                  {self.held_steps}",
            f"max |x - x_eq| (cm)         {self.max_deviation_cm:.6f}",
        ]
        for key in sorted(self.extra):
            lines.append(f"{key:<28}{self.extra[key]}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for key in ("scenario", "seed", "steps", "attempted", "delivered", "dropped", "rejected", "accepted",
                    "genuine_delivered", "genuine_rejected", "held_steps", "max_deviation_cm"):
            w.writerow([key, getattr(self, key)])
        for cls in sorted(self.detected):
            w.writerow([f"detected_{cls}", self.detected[cls]])
        for key in sorted(self.extra):
            w.writerow([key, self.extra[key]])
        return buf.getvalue()


def tally(report: AttackReport, channel: AdversarialChannel, log: TrajectoryLog, x_eq):
    """Cross-reference the adversary's action log with receiver outcomes."""
    for rec in channel.action_log:
        report.attempted += rec.adversarial_emitted + rec.adversarial_dropped
        report.dropped += rec.adversarial_dropped
    # frames still held by delay/reorder never reached anyone
    report.dropped += len(channel._delayed) + sum(v is not None for v in channel._reorder.values())
    report.attempted += len(channel._delayed) + sum(v is not None for v in channel._reorder.values())
    for o in log.outcomes:
        if o.adversarial:
            report.delivered += 1
            if o.result == "accepted":
                report.accepted += 1
            else:
                report.rejected += 1
                report.detected[o.result] += 1
        else:
            report.genuine_delivered += 1
            if o.result != "accepted":
                report.genuine_rejected += 1
    lo, hi = report.window
    x = log.array("x")[lo:hi]
    if len(x):
        report.max_deviation_cm = float(np.max(np.abs(x - np.asarray(x_eq))))
    report.held_steps = sum("hold" in r.status for r in log.records[lo:hi])


# -- impersonation ------------------------------------------------------------------------

@dataclass(frozen=True)
class HandshakeOutcome:
    case: str
    established: bool
    reasons: tuple[str, ...]


IMPERSONATION_CASES = ("wrong_image", "forged_signature", "stale_challenge")


def _tweak_gain(controller: ControllerConfig) -> ControllerConfig:
    K = np.array(controller.K)
    K[0, 0] = K[0, 0] + 0.001
    return replace(controller, K=K)


def impersonate_enclave(case: str, plant: PlantConfig, controller: ControllerConfig,
                        platform: Platform | None = None) -> HandshakeOutcome:
    """Try to pass an adversary-controlled enclave off as the genuine one.

    The plant expects the genuine image's measurement and trusts the genuine
    platform's verification key.
    """
    platform = platform or Platform()
    genuine = build_image(plant, controller)
    expected = measure_image(genuine)
    cost = CrossingCost(0.0)
    if case == "wrong_image":
        rogue = create_enclave(build_image(plant, _tweak_gain(controller)), platform, cost)
    elif case == "forged_signature":
        rogue = create_enclave(genuine, Platform(), cost)
    elif case == "stale_challenge":
        rogue = create_enclave(genuine, platform, cost)
    elif case == "faithful":
        rogue = create_enclave(genuine, platform, cost)
    else:
        raise ConfigError(f"unknown impersonation case {case!r}")

    hs = PlantHandshake(expected, platform.verification_key)
    if case == "stale_challenge":
        # recorded answer to an earlier challenge, re-labelled for the new session
        earlier = PlantHandshake(expected, platform.verification_key)
        old = parse_unkeyed(rogue.ecall_handshake(earlier.challenge_frame()), MsgType.HS_QUOTE)
        quote_raw = unkeyed_frame(MsgType.HS_QUOTE, hs.session_id, old.direction, old.ciphertext)
    else:
        quote_raw = rogue.ecall_handshake(hs.challenge_frame())
    try:
        confirm = hs.handle_quote(quote_raw)
        hs.handle_accept(rogue.ecall_handshake(confirm))
    except AttestationRejected as exc:
        return HandshakeOutcome(case, False, tuple(r.value for r in exc.reasons))
    except HandshakeError as exc:
        return HandshakeOutcome(case, False, (str(exc),))
    return HandshakeOutcome(case, True, ())


# -- scenarios ------------------------------------------------------------------------------

def _in_window(step, window):
    return window[0] <= step < window[1]


def _plaintext_leaks(captures, log: TrajectoryLog) -> int:
    """Count captured frames containing any encoded payload or raw float64 of y/u."""
    needles = set()
    for r in log.records:
        needles.add(encode_payload(SignalPayload(PayloadKind.SENSOR, tuple(r.y))))
        needles.add(encode_payload(SignalPayload(PayloadKind.CONTROL, tuple(r.u))))
        for v in (*r.y, *r.u):
            needles.add(struct.pack("<d", v))
    return sum(any(n in frame for n in needles) for _, _, frame in captures)


def _baseline_u(run: RunConfig, steps: int) -> np.ndarray:
    with ClosedLoop(replace(run, steps=steps, record_estimates=False)) as loop:
        return loop.run().array("u")


def run_scenario(name: str, config: ScenarioConfig | None = None, run: RunConfig | None = None,
                 plant: PlantConfig | None = None, controller: ControllerConfig | None = None):
    """Run one named attack scenario; returns ``(AttackReport, TrajectoryLog)``."""
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    config = config or ScenarioConfig(name)
    knobs = config.knobs
    if run is None:
        kwargs = {"crossing_us": 0.0, "record_estimates": False}
        if plant is not None:
            kwargs["plant"] = plant
        if controller is not None:
            kwargs["controller"] = controller
        run = RunConfig(**kwargs)

    default_steps = {"tamper_fuzz": None, "replay_burst": None}.get(name, 200)
    if name == "tamper_fuzz":
        flips = int(knobs.get("flips", 10_000))
        copies = int(knobs.get("copies", 10))
        default_steps = math.ceil(flips / (2 * copies))
    elif name == "replay_burst":
        replays = int(knobs.get("replays", 1000))
        depth = int(knobs.get("replay_depth", 3))
        default_steps = math.ceil(replays / (2 * depth)) + depth + 1
    steps = int(config.steps) if config.steps is not None else default_steps
    window = tuple(config.attack_window) if config.attack_window is not None else (0, steps)
    run = replace(run, steps=steps, seed=config.seed)
    report = AttackReport(name, config.seed, steps, window)
    rng = np.random.default_rng(config.seed)

    if name == "attest_wrong_image":
        platform = Platform()
        outcomes = [impersonate_enclave(c, run.plant, run.controller, platform) for c in IMPERSONATION_CASES]
        faithful = impersonate_enclave("faithful", run.plant, run.controller, platform)
        for o in outcomes:
            report.attempted += 1
            report.delivered += 1
            if o.established:
                report.accepted += 1
            else:
                report.rejected += 1
                report.detected["AttestationRejected"] += 1
            report.extra[f"{o.case}"] = "; ".join(o.reasons) or "ESTABLISHED"
        report.extra["faithful"] = "ESTABLISHED" if faithful.established else "; ".join(faithful.reasons)
        with ClosedLoop(run) as loop:
            log = loop.run()
        lo, hi = window
        if steps:
            report.max_deviation_cm = float(np.max(np.abs(log.array("x")[lo:hi] - run.plant.x_eq)))
        return report, log

    if name == "rollback_sealed":
        checkpoints = int(knobs.get("checkpoints", 20))
        every = max(1, steps // checkpoints)
        platform = Platform()
        with ClosedLoop(replace(run, checkpoint_every=every), platform=platform) as loop:
            log = loop.run()
            blobs = log.sealed_blobs
            stale, latest = blobs[:-1], blobs[-1]
            for blob in stale:
                report.attempted += 1
                report.delivered += 1
                try:
                    loop.enclave.unseal_state(blob)
                    report.accepted += 1
                except RollbackDetected:
                    report.rejected += 1
                    report.detected["RollbackDetected"] += 1
                except AuthenticationFailure:
                    report.rejected += 1
                    report.detected["AuthenticationFailure"] += 1
        # restart on the same platform: the latest blob must restore, stale ones must not
        restarted = create_enclave(loop.image, platform, CrossingCost(0.0))
        restarted.unseal_state(latest)
        report.extra["latest_blob_restores"] = True
        for blob in stale:
            report.attempted += 1
            report.delivered += 1
            try:
                restarted.unseal_state(blob)
                report.accepted += 1
            except RollbackDetected:
                report.rejected += 1
                report.detected["RollbackDetected"] += 1
        report.extra["monotonic_counter"] = restarted.monotonic_counter
        lo, hi = window
        report.max_deviation_cm = float(np.max(np.abs(log.array("x")[lo:hi] - run.plant.x_eq))) if steps else 0.0
        return report, log

    if name == "eavesdrop":
        policy = deliver_all
    elif name == "tamper_fuzz":
        budget = {"left": flips}

        def policy(step, direction, frame):
            if not _in_window(step, window) or budget["left"] <= 0:
                return Deliver()
            n = min(copies, budget["left"])
            budget["left"] -= n
            return Tamper(copies=n, keep_genuine=True)
    elif name == "replay_burst":
        budget = {"left": replays}

        def policy(step, direction, frame):
            if not _in_window(step, window) or budget["left"] <= 0 or step < depth:
                return Deliver()
            n = min(depth, budget["left"])
            budget["left"] -= n
            return Replay(depth=n)
    elif name == "inject_forged":
        per = int(knobs.get("forged_per_frame", 1))

        def policy(step, direction, frame):
            return Inject(count=per) if _in_window(step, window) else Deliver()
    elif name == "drop_storm":
        p = float(knobs.get("drop_probability", 0.3))

        def policy(step, direction, frame):
            return Drop() if _in_window(step, window) and rng.random() < p else Deliver()

    channel = AdversarialChannel(policy, seed=config.seed)
    with ClosedLoop(run, channel=channel) as loop:
        log = loop.run()
    tally(report, channel, log, run.plant.x_eq)
    # handshake frames (step -1) are delivered untouched and count as genuine traffic
    if name == "eavesdrop":
        report.extra["frames_captured"] = len(channel.capture_log)
        report.extra["plaintext_leaks"] = _plaintext_leaks(channel.capture_log, log)
        plain_channel = AdversarialChannel(deliver_all, seed=config.seed)
        with ClosedLoop(replace(run, mode="plaintext"), channel=plain_channel) as plain:
            plain_log = plain.run()
        report.extra["plaintext_mode_leaks"] = _plaintext_leaks(plain_channel.capture_log, plain_log)
    if name in ("tamper_fuzz", "replay_burst", "inject_forged", "eavesdrop"):
        report.extra["trajectory_matches_baseline"] = bool(np.array_equal(log.array("u"), _baseline_u(run, steps)))
    return report, log
