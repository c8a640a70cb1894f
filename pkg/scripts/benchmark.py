"""Operation timing table, swept over the simulated boundary-crossing cost."""

import argparse
from pathlib import Path

from teecontrol.bench import run_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/bench")
    ap.add_argument("--reps", type=int, default=1000)
    ap.add_argument("--rounds", type=int, default=10)
    ap.add_argument("--crossing-us", type=float, nargs="+", default=[50.0, 200.0, 400.0])
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for cost in args.crossing_us:
        report = run_benchmark(reps=args.reps, rounds=args.rounds, crossing_us=cost)
        print(f"# crossing cost {cost} us")
        print(report.to_text())
        report.to_csv(out / f"timing_crossing_{int(cost)}us.csv")


if __name__ == "__main__":
    main()
