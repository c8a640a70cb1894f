"""Benchmark workloads shared by the in-enclave stopwatch and the direct timer.

Each factory returns ``(prepare, run)``: ``prepare(n)`` does untimed setup for
``n`` repetitions and ``run(i)`` performs repetition ``i``.
"""

from __future__ import annotations

import secrets

from .channel import Direction, MsgType, PayloadKind, SessionContext, encode_payload, open_message, seal_message
from .channel import SignalPayload
from .control import ControllerState, controller_step

WORKLOADS = ("controller", "encrypt", "decrypt", "noop")


def scratch_pair() -> tuple[SessionContext, SessionContext]:
    """Throwaway sender/receiver contexts under a fresh random key."""
    key = secrets.token_bytes(16)
    a, b = secrets.token_bytes(4), secrets.token_bytes(4)
    sid = secrets.randbits(64)
    return (SessionContext(sid, key, a, b, Direction.ENCLAVE_TO_PLANT),
            SessionContext(sid, key, b, a, Direction.PLANT_TO_ENCLAVE))


def make_workload(name: str, ctrl: ControllerState):
    y = ctrl.model.y_eq.copy()
    u_payload = encode_payload(SignalPayload(PayloadKind.CONTROL, tuple(ctrl.model.u_eq)))

    if name == "controller":
        state = {"ctrl": ctrl}

        def prepare(n):
            state["ctrl"] = ctrl

        def run(i):
            _, state["ctrl"] = controller_step(state["ctrl"], y)

    elif name == "encrypt":
        holder = {}

        def prepare(n):
            holder["tx"], _ = scratch_pair()

        def run(i):
            seal_message(holder["tx"], MsgType.CONTROL, u_payload)

    elif name == "decrypt":
        holder = {}

        def prepare(n):
            tx, rx = scratch_pair()
            holder["rx"] = rx
            holder["frames"] = [seal_message(tx, MsgType.CONTROL, u_payload) for _ in range(n)]

        def run(i):
            open_message(holder["rx"], holder["frames"][i])

    elif name == "noop":
        def prepare(n):
            pass

        def run(i):
            pass

    else:
        raise ValueError(f"unknown workload {name!r}; choose from {', '.join(WORKLOADS)}")
    return prepare, run
