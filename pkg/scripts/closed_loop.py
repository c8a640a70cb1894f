"""Step response from x_eq + [1, 1, 0, 0] on both plant models, secure mode.

Writes trajectory CSVs and prints the regulation horizon implied by the
closed-loop spectral radius next to what each plant actually achieves.
"""

import argparse
from pathlib import Path

import numpy as np

from teecontrol.config import load_controller_config, load_plant_config
from teecontrol.control import build_controller, regulation_horizon
from teecontrol.runtime import RunConfig, run_closed_loop


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--crossing-us", type=float, default=0.0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    plant, controller = load_plant_config(), load_controller_config()
    _, report = build_controller(controller.model(plant), controller.L, controller.K, controller.sign)
    H = regulation_horizon(report.augmented_rho, 1.0, 0.1)
    print("\n".join(report.lines()))
    print(f"horizon H = {H} steps ({H * plant.Ts:.1f} s)")

    x0 = plant.x_eq + np.array([1.0, 1.0, 0.0, 0.0])
    for model in ("linear", "nonlinear"):
        log = run_closed_loop(RunConfig(x0=x0, steps=2 * H + 1, plant_model=model, crossing_us=args.crossing_us))
        dev = np.max(np.abs(log.array("x") - plant.x_eq), axis=1)
        inside = np.nonzero(dev < 0.1)[0]
        first = int(inside[0]) if len(inside) else None
        log.to_csv(out / f"step_response_{model}.csv", timing=False)
        print(f"{model:>9}: first k with |x - x_eq| < 0.1 cm: {first}; |dev| at H = {dev[H]:.4f}, "
              f"at 2H = {dev[2 * H]:.4f}")


if __name__ == "__main__":
    main()
