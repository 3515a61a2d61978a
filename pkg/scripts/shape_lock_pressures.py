"""Four-phase shape-locking runs at several pressures.

For each pressure: bend to 60 degrees with the tendons, engage the vacuum,
release the tendons, and report how far the tip moves after release. Phase
trajectories go to out/scripts/shape_lock_<kPa>kPa/phase<k>.csv.
"""
import argparse
from pathlib import Path

import numpy as np

from ljsim import LuGreParams, RobotParams
from ljsim.analysis import shape_locking_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kpa", type=float, nargs="+", default=[0.0, 30.0, 80.0])
    ap.add_argument("--bend-deg", type=float, default=60.0)
    ap.add_argument("--out", type=Path, default=Path("out/scripts"))
    args = ap.parse_args()

    robot, fric = RobotParams(), LuGreParams()
    print(f"{'u_p [kPa]':>10} {'tip shift [mm]':>15} {'bend after [deg]':>17} {'locked':>7}")
    for kpa in args.kpa:
        res = shape_locking_scenario(np.radians(args.bend_deg), 1e3 * kpa, robot, fric)
        folder = args.out / f"shape_lock_{kpa:g}kPa"
        folder.mkdir(parents=True, exist_ok=True)
        for k, ph in enumerate(res.phases, start=1):
            ph.to_csv(folder / f"phase{k}.csv")
        bend = np.degrees(np.sum(res.q_end))
        print(f"{kpa:>10g} {1e3 * res.tip_displacement:>15.4f} {bend:>17.3f} {str(res.converged):>7}")


if __name__ == "__main__":
    main()
