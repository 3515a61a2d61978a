"""Bisection estimate of the relocking radius around locked equilibria.

A locked state (q_a, 0, z_a) is pushed toward unloaded bristles by eps and
simulated; the radius is the largest eps that still settles within 1e-3 rad
of q_a. Larger pressures should tolerate larger pushes.
"""
import argparse

import numpy as np

from ljsim import LuGreParams, RobotParams
from ljsim.analysis import attraction_radius, locked_bristle


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kpa", type=float, nargs="+", default=[10.0, 30.0, 80.0])
    ap.add_argument("--bend-deg", type=float, default=60.0)
    ap.add_argument("--iters", type=int, default=12)
    args = ap.parse_args()

    robot, fric = RobotParams(), LuGreParams()
    q_a = np.full(robot.n, np.radians(args.bend_deg) / robot.n)
    for kpa in args.kpa:
        u_p = 1e3 * kpa
        eps = attraction_radius(q_a, u_p, robot, fric, iters=args.iters)
        z_norm = np.linalg.norm(locked_bristle(q_a, u_p, robot, fric))
        print(f"{kpa:6g} kPa  radius {eps:.4e}  (|z_a| = {z_norm:.4e}, ratio {eps / z_norm:.3f})")


if __name__ == "__main__":
    main()
