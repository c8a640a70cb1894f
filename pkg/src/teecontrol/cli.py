"""Command-line entry point: ``teecontrol <subcommand>``."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import kat
from .adversary import run_scenario
from .bench import run_benchmark
from .config import SCENARIOS, ScenarioConfig, load_controller_config, load_plant_config, load_scenario_config
from .control import build_controller, spectral_radius
from .errors import ChannelError, ConfigError, TeeControlError
from .runtime import LoopAborted, RunConfig, run_closed_loop

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_VERIFY = 4
EXIT_SECURITY = 5
EXIT_CHANNEL = 6


def _fmt_matrix(name, M) -> str:
    M = np.atleast_2d(M)
    rows = ["  [" + ", ".join(f"{v: .12e}" for v in row) + "]" for row in M]
    return f"{name} =\n" + "\n".join(rows)


def _vector(text: str, n: int):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"cannot parse {text!r} as numbers") from exc
    if len(vals) != n:
        raise ConfigError(f"expected {n} comma-separated values, got {len(vals)}")
    return np.array(vals)


def cmd_simulate(args) -> int:
    plant = load_plant_config(args.plant)
    controller = load_controller_config(args.controller)
    cfg = RunConfig(
        plant=plant,
        controller=controller,
        steps=args.steps,
        x0=_vector(args.x0, 4) if args.x0 else None,
        mode=args.mode,
        plant_model=args.plant_model,
        seed=args.seed,
        crossing_us=args.crossing_us,
        transport=args.transport,
        max_missed_steps=args.max_missed,
    )
    log = run_closed_loop(cfg)
    text = log.to_csv(args.out, timing=not args.no_timing)
    if args.out is None:
        sys.stdout.write(text)
    else:
        dev = np.max(np.abs(log.array("x")[-1] - plant.x_eq)) if len(log) else 0.0
        print(f"{len(log)} steps ({cfg.mode}, sign convention {log.sign_convention}); "
              f"final |x - x_eq|_inf = {dev:.6f} cm; wrote {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    report = run_benchmark(reps=args.reps, rounds=args.rounds, crossing_us=args.crossing_us,
                           plant=load_plant_config(args.plant), controller=load_controller_config(args.controller))
    sys.stdout.write(report.to_text())
    if args.csv:
        report.to_csv(args.csv)
    return EXIT_OK if report.feasible else EXIT_VERIFY


def cmd_attack(args) -> int:
    if args.config:
        sc = load_scenario_config(args.config, args.scenario)
    else:
        sc = ScenarioConfig(args.scenario)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.steps is not None:
        overrides["steps"] = args.steps
    if overrides:
        sc = ScenarioConfig(**{**sc.__dict__, **overrides})
    report, log = run_scenario(sc.scenario, sc, plant=load_plant_config(args.plant),
                               controller=load_controller_config(args.controller))
    text = report.to_text()
    sys.stdout.write(text)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(report.to_csv())
    if args.trajectory:
        log.to_csv(args.trajectory)
    return EXIT_SECURITY if report.accepted else EXIT_OK


def cmd_derive_model(args) -> int:
    plant = load_plant_config(args.plant)
    model = plant.linear_model()
    eig = np.linalg.eigvals(model.A)
    print(f"Ts = {model.Ts}")
    print(_fmt_matrix("A", model.A))
    print(_fmt_matrix("B", model.B))
    print(_fmt_matrix("C", model.C))
    print("eig(A) = " + ", ".join(f"{abs(e):.12f}" for e in eig))
    rho = spectral_radius(model.A)
    print(f"rho(A) = {rho:.12f} ({'inside' if rho < 1 else 'NOT inside'} the unit circle)")
    if args.toml:
        with open(args.toml, "w") as fh:
            for key in ("A", "B", "C"):
                rows = ",\n".join("  [" + ", ".join(repr(float(v)) for v in row) + "]" for row in getattr(model, key))
                fh.write(f"{key} = [\n{rows},\n]\n")
            fh.write(f"Ts = {model.Ts!r}\n")
    return EXIT_OK if rho < 1 else EXIT_VERIFY


def cmd_verify_gains(args) -> int:
    plant = load_plant_config(args.plant)
    controller = load_controller_config(args.controller)
    model = controller.model(plant)
    try:
        _, report = build_controller(model, controller.L, controller.K, controller.sign)
    except ConfigError as exc:
        print(f"gain check failed: {exc}")
        return EXIT_VERIFY
    print("\n".join(report.lines()))
    return EXIT_OK


def cmd_kat(args) -> int:
    results = kat.run_all()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}")
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} AES-GCM known-answer vectors passed")
    return EXIT_OK if passed == len(results) else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="teecontrol", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def configs(sp):
        sp.add_argument("--plant", help="plant TOML (default: shipped quadruple-tank preset)")
        sp.add_argument("--controller", help="controller TOML (default: shipped gains)")

    sp = sub.add_parser("simulate", help="run the closed loop and write a trajectory CSV")
    configs(sp)
    sp.add_argument("--mode", choices=("secure", "plaintext"), default="secure")
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--x0", help="initial levels, comma separated (default x_eq)")
    sp.add_argument("--plant-model", choices=("nonlinear", "linear"), default="nonlinear")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--crossing-us", type=float, default=200.0)
    sp.add_argument("--transport", choices=("inprocess", "socket"), default="inprocess")
    sp.add_argument("--max-missed", type=int, default=None)
    sp.add_argument("--no-timing", action="store_true", help="blank the latency column")
    sp.add_argument("--out", help="CSV path (default: stdout)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("bench", help="operation-level timing report")
    configs(sp)
    sp.add_argument("--reps", type=int, default=1000)
    sp.add_argument("--rounds", type=int, default=10)
    sp.add_argument("--crossing-us", type=float, default=200.0)
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("attack", help="run an adversary scenario")
    configs(sp)
    sp.add_argument("scenario", choices=SCENARIOS)
    sp.add_argument("--config", help="scenario TOML")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--report", help="write the text report here")
    sp.add_argument("--csv", help="write the report as CSV here")
    sp.add_argument("--trajectory", help="write the trajectory CSV here")
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("derive-model", help="linearize + discretize the plant, print A, B, C")
    sp.add_argument("--plant")
    sp.add_argument("--toml", help="also write A, B, C, Ts as controller-config TOML")
    sp.set_defaults(func=cmd_derive_model)

    sp = sub.add_parser("verify-gains", help="spectral-radius report for L and K")
    configs(sp)
    sp.set_defaults(func=cmd_verify_gains)

    sp = sub.add_parser("kat", help="AES-GCM known-answer tests")
    sp.set_defaults(func=cmd_kat)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LoopAborted, ChannelError) as exc:
        print(f"channel failure: {exc}", file=sys.stderr)
        return EXIT_CHANNEL
    except TeeControlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
