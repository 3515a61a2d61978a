"""Transverse tip stiffness against vacuum pressure, with a linear fit.

Writes sweep.dat (kPa, simulated K_T, closed-form K_T) for gnuplot and
prints the regression.
"""
import argparse
from pathlib import Path

import numpy as np

from ljsim import LuGreParams, RobotParams
from ljsim.analysis import analytic_transverse_stiffness, pressure_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-kpa", type=float, default=80.0)
    ap.add_argument("--step-kpa", type=float, default=5.0)
    ap.add_argument("--tip-force", type=float, default=0.01, help="N")
    ap.add_argument("--out", type=Path, default=Path("out/scripts"))
    args = ap.parse_args()

    robot, fric = RobotParams(), LuGreParams()
    grid = 1e3 * np.arange(0.0, args.max_kpa + 0.5 * args.step_kpa, args.step_kpa)
    rep = pressure_sweep(grid, robot, fric, "stiffness", tip_force=args.tip_force)
    args.out.mkdir(parents=True, exist_ok=True)
    with (args.out / "sweep.dat").open("w") as fh:
        fh.write("# u_p[kPa] K_T_sim[N/m] K_T_closed_form[N/m]\n")
        for u, kt in zip(grid, rep.k_transverse):
            fh.write(f"{u / 1e3:g} {kt:.9g} {analytic_transverse_stiffness(u, robot, fric):.9g}\n")
    print(f"K_T = {rep.slope * 1e3:.4f} * u_p[kPa] + {rep.intercept:.4f}   R^2 = {rep.r2:.8f}")
    print(f"closed-form slope sigma0 / |j|^2 near {fric.sigma0 * 1e3 / (14 * robot.link_length ** 2):.4f}")
    for u, msg in rep.errors.items():
        print(f"failed at {u / 1e3:g} kPa: {msg}")


if __name__ == "__main__":
    main()
