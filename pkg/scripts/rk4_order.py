"""Observed order of the fixed-step integrator by step halving.

Runs a frictionless swing from a bent start at dt, dt/2, ... and compares
the final (q, p). The bristle state is left out: it follows |v|, whose kink
at v = 0 caps its own convergence at first order.
"""
import argparse

import numpy as np

from ljsim import FullState, InputProfile, LuGreParams, RobotParams, simulate


def final_state(dt, t_end, robot, fric):
    chi0 = FullState(np.array([0.3, -0.2, 0.25]), np.zeros(3), np.zeros(3))
    traj = simulate(chi0, InputProfile.constant(robot.n, robot.m), (0.0, t_end), dt, robot, fric)
    return traj.states[-1, : 2 * robot.n]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dt", type=float, default=1e-4)
    ap.add_argument("--t-end", type=float, default=0.1)
    ap.add_argument("--levels", type=int, default=3)
    args = ap.parse_args()

    robot, fric = RobotParams(), LuGreParams()
    sols = [final_state(args.dt / 2**k, args.t_end, robot, fric) for k in range(args.levels + 1)]
    for k in range(args.levels - 1):
        e1 = np.linalg.norm(sols[k] - sols[k + 1])
        e2 = np.linalg.norm(sols[k + 1] - sols[k + 2])
        print(f"dt = {args.dt / 2**k:.2e}  order ~ {np.log2(e1 / e2):.3f}")


if __name__ == "__main__":
    main()
