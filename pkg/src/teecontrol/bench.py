"""Operation-level timing with the O-Call stopwatch technique.

Each operation row is measured inside the enclave as one stopwatch reading
around ``reps`` back-to-back repetitions; the per-operation time is that
reading divided by ``reps``, so the stopwatch overhead dt shrinks to
dt / reps. dt itself is measured separately from pairs of immediate
O-Calls and subtracted for the corrected column.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field, replace

from .attestation import Platform
from .config import ControllerConfig, PlantConfig, load_controller_config, load_plant_config
from .enclave import CrossingCost, build_image, controller_from_image, create_enclave
from .runtime import ClosedLoop, RunConfig
from .workloads import make_workload

ROW_CREATION = "Enclave creation"
ROW_CONTROLLER = "Dynamic output feedback controller"
ROW_ENCRYPT = "AES-GCM encryption"
ROW_DECRYPT = "AES-GCM decryption"
ROW_DELTA = "Delta t"
ROW_SECURE = "Total secure loop"
ROW_PLAIN = "Total plaintext loop"
ROWS = (ROW_CREATION, ROW_CONTROLLER, ROW_ENCRYPT, ROW_DECRYPT, ROW_DELTA, ROW_SECURE, ROW_PLAIN)
OP_ROWS = {ROW_CONTROLLER: "controller", ROW_ENCRYPT: "encrypt", ROW_DECRYPT: "decrypt"}

CSV_COLUMNS = ["operation", "n", "mean_us", "min_us", "max_us", "std_us", "corrected_mean_us", "method"]


class InfeasibleLoop(RuntimeError):
    pass


@dataclass
class TimingRow:
    name: str
    n: int
    mean_us: float
    min_us: float
    max_us: float
    std_us: float
    corrected_us: float | None
    method: str

    @classmethod
    def from_samples(cls, name, samples_us, method, corrected=None):
        return cls(name, len(samples_us), statistics.fmean(samples_us), min(samples_us), max(samples_us),
                   statistics.pstdev(samples_us), corrected, method)


@dataclass
class TimingReport:
    rows: dict[str, TimingRow]
    reps: int
    rounds: int
    crossing_us: float
    crossings_per_loop: int
    Ts: float
    direct_us: dict[str, float] = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.rows[ROW_SECURE].mean_us < self.Ts * 1e6

    @property
    def secure_slower_than_plaintext(self) -> bool:
        return self.rows[ROW_SECURE].mean_us > self.rows[ROW_PLAIN].mean_us

    def to_text(self) -> str:
        head = f"{'Operation':<36}{'n':>6}{'mean us':>12}{'min us':>12}{'max us':>12}{'std us':>10}{'dt-corr us':>12}"
        lines = [head, "-" * len(head)]
        for name in ROWS:
            r = self.rows[name]
            corr = f"{r.corrected_us:12.3f}" if r.corrected_us is not None else f"{'':>12}"
            lines.append(f"{name:<36}{r.n:>6}{r.mean_us:12.3f}{r.min_us:12.3f}{r.max_us:12.3f}{r.std_us:10.3f}{corr}")
        lines.append("")
        lines.append(f"repetitions per stopwatch reading: {self.reps}; rounds: {self.rounds}")
        lines.append(f"simulated crossing cost: {self.crossing_us} us (dt = 2 crossings); "
                     f"boundary crossings per secure loop: {self.crossings_per_loop}")
        for wl, us in sorted(self.direct_us.items()):
            lines.append(f"direct (outside-boundary) {wl}: {us:.3f} us")
        verdict = "feasible" if self.feasible else "INFEASIBLE"
        lines.append(f"secure loop {self.rows[ROW_SECURE].mean_us:.1f} us vs Ts {self.Ts * 1e6:.0f} us: {verdict}")
        return "\n".join(lines) + "\n"

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for name in ROWS:
            r = self.rows[name]
            w.writerow([r.name, r.n, f"{r.mean_us:.3f}", f"{r.min_us:.3f}", f"{r.max_us:.3f}", f"{r.std_us:.3f}",
                        "" if r.corrected_us is None else f"{r.corrected_us:.3f}", r.method])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text


def direct_time(workload: str, ctrl, reps: int, rounds: int = 1) -> list[float]:
    """Per-operation time (us) of a workload measured outside any boundary."""
    prepare, run = make_workload(workload, ctrl)
    out = []
    for _ in range(rounds):
        prepare(reps)
        for i in range(max(1, reps // 10)):
            run(i)
        prepare(reps)
        t0 = time.perf_counter_ns()
        for i in range(reps):
            run(i)
        out.append((time.perf_counter_ns() - t0) / reps / 1000.0)
    return out


def stopwatch_overhead(enclave, n: int) -> list[float]:
    """dt samples (us): difference of two immediate stopwatch O-Calls."""
    out = []
    for _ in range(n):
        t0 = enclave.ocall_timestamp()
        t1 = enclave.ocall_timestamp()
        out.append((t1 - t0) / 1000.0)
    return out


def run_benchmark(reps: int = 1000, rounds: int = 10, crossing_us: float = 200.0, jitter_us: float = 0.0,
                  plant: PlantConfig | None = None, controller: ControllerConfig | None = None,
                  seed: int = 0, strict: bool = False) -> TimingReport:
    if reps < 1 or rounds < 1:
        raise ValueError("reps and rounds must be >= 1")
    plant = plant or load_plant_config()
    controller = controller or load_controller_config()
    warm = reps // 10
    image = build_image(plant, controller)
    platform = Platform()
    rows = {}

    creation = []
    for _ in range(warm + reps):
        t0 = time.perf_counter_ns()
        enclave = create_enclave(image, platform, CrossingCost(crossing_us, jitter_us, seed=seed))
        creation.append((time.perf_counter_ns() - t0) / 1000.0)
    rows[ROW_CREATION] = TimingRow.from_samples(ROW_CREATION, creation[warm:], "wall clock around create")

    dt = stopwatch_overhead(enclave, warm + reps)[warm:]
    rows[ROW_DELTA] = TimingRow.from_samples(ROW_DELTA, dt, "two immediate stopwatch O-Calls")
    dt_mean = rows[ROW_DELTA].mean_us

    # the direct oracle is timed in rounds interleaved with the enclave rounds so
    # both see the same machine state
    ctrl, _ = controller_from_image(image)
    direct = {}
    for name, wl in OP_ROWS.items():
        per_op, outside = [], []
        for _ in range(rounds):
            per_op.append(enclave.ecall_benchmark(wl, reps, warmup=warm) / reps / 1000.0)
            outside.extend(direct_time(wl, ctrl, reps, 1))
        row = TimingRow.from_samples(name, per_op, f"stopwatch around {reps} reps, {rounds} rounds")
        row.corrected_us = row.mean_us - dt_mean / reps
        rows[name] = row
        direct[wl] = statistics.fmean(outside)

    base = RunConfig(plant=plant, controller=controller, steps=warm + reps, crossing_us=crossing_us,
                     jitter_us=jitter_us, record_estimates=False, seed=seed)
    with ClosedLoop(base, platform=platform) as loop:
        secure = loop.run()
    with ClosedLoop(replace(base, mode="plaintext")) as loop:
        plain = loop.run()
    rows[ROW_SECURE] = TimingRow.from_samples(ROW_SECURE, [r.latency_us for r in secure.records[warm:]],
                                              "per-step wall clock, seal to actuation")
    rows[ROW_PLAIN] = TimingRow.from_samples(ROW_PLAIN, [r.latency_us for r in plain.records[warm:]],
                                             "per-step wall clock, no crypto or boundary")

    report = TimingReport(rows, reps, rounds, crossing_us, secure.crossings_per_loop, plant.Ts, direct)
    if strict and not report.feasible:
        raise InfeasibleLoop(f"secure loop mean {rows[ROW_SECURE].mean_us:.1f} us exceeds Ts")
    return report
