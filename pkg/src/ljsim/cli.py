"""Command-line front end.

    ljsim <subcommand> [--config FILE] [--out DIR] [--dt S] [--pressure KPA] [--quiet]

Subcommands: simulate, shape-lock, stiffness, sweep, audit. Exit status is 0
on success, 2 for configuration errors, 3 for numerical blow-up and 4 when a
run fails to converge. ``LJSIM_WORKERS`` sets the sweep worker count.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .config import KPA, ScenarioConfig, parse_config
from .errors import ConfigError, LJSimError
from .interconnect import energy_audit, passivity_audit, simulate

log = logging.getLogger("ljsim")

SUBCOMMANDS = ("simulate", "shape-lock", "stiffness", "sweep", "audit")


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_table(path: Path, title: str, rows) -> str:
    width = max(len(k) for k, _ in rows)
    text = "\n".join([title, "-" * len(title)] + [f"{k:<{width}}  {v}" for k, v in rows]) + "\n"
    path.write_text(text)
    return text


def _matrix_rows(label: str, mat) -> list[tuple[str, str]]:
    return [(f"{label} row {i + 1}", "  ".join(f"{x: .9e}" for x in row)) for i, row in enumerate(mat)]


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if args.dt is not None:
        if not args.dt > 0:
            raise ConfigError("--dt must be > 0")
        cfg = dataclasses.replace(cfg, dt=args.dt)
    if args.pressure is not None:
        if args.pressure < 0:
            raise ConfigError("--pressure must be >= 0")
        u_p = args.pressure * KPA
        phases = tuple(dataclasses.replace(ph, pressure=u_p) if ph.pressure is not None else ph
                       for ph in cfg.phases)
        if phases and all(ph.pressure is None for ph in phases):
            phases = (dataclasses.replace(phases[0], pressure=u_p),) + phases[1:]
        an = dataclasses.replace(cfg.analysis, lock_pressure=u_p, stiffness_pressure=u_p, grid=(u_p,))
        cfg = dataclasses.replace(cfg, phases=phases, analysis=an)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    return cfg


def _run_simulate(cfg: ScenarioConfig, out: Path, say):
    traj = simulate(cfg.initial_state(), cfg.input_profile(), cfg.resolved_t_span(), cfg.dt,
                    cfg.robot, cfg.friction)
    traj.to_csv(out / "trajectory.csv")
    rows = [
        ("samples", str(traj.t.size)),
        ("t_end [s]", f"{traj.t[-1]:.6f}"),
        ("final q [rad]", " ".join(f"{x:.6e}" for x in traj.q[-1])),
        ("final H [J]", f"{traj.H[-1]:.9e}"),
        ("max |z| / z_max", f"{np.max(np.abs(traj.z)) / cfg.friction.z_max:.6f}"),
    ]
    rows += [(f"pressure switch t={e['t']:.6f}", f"{e['u_p_before']:g} -> {e['u_p_after']:g} Pa, "
              f"bristle energy jump {e['energy_jump']:.3e} J") for e in traj.events]
    rows += [("diagnostic", d) for d in traj.diagnostics]
    say(_write_table(out / "simulate.txt", "simulation summary", rows))
    return 0


def _run_shape_lock(cfg: ScenarioConfig, out: Path, say):
    an = cfg.analysis
    res = analysis.shape_locking_scenario(an.bend_target, an.lock_pressure, cfg.robot, cfg.friction,
                                          an.timings, cfg.dt)
    for k, ph in enumerate(res.phases, start=1):
        ph.to_csv(out / f"phase{k}.csv")
    rows = res.summary_rows()
    _write_csv(out / "shape_lock.csv", ["quantity", "value"], rows)
    say(_write_table(out / "shape_lock.txt", "shape locking", rows))
    return 0


def _run_stiffness(cfg: ScenarioConfig, out: Path, say):
    an, robot, fric = cfg.analysis, cfg.robot, cfg.friction
    u_p = an.stiffness_pressure
    k_a = analysis.analytic_stiffness(u_p, robot, fric)
    k_h = analysis.numeric_stiffness_hessian(u_p, robot, fric)
    rows = [("u_p [kPa]", f"{u_p / KPA:g}")]
    rows += _matrix_rows("K analytic", k_a) + _matrix_rows("K hessian", k_h)
    rows.append(("hessian rel. err", f"{np.linalg.norm(k_h - k_a) / np.linalg.norm(k_a):.3e}"))
    mats = [("analytic", k_a), ("hessian", k_h)]
    if u_p > 0:
        torque = an.probe_torque or analysis.probe_torque_for(u_p, robot, fric)
        k_p = analysis.probe_stiffness(u_p, torque, robot, fric, an.probe)
        mats.append(("probe", k_p))
        rows += [("probe torque [N m]", f"{torque:.6e}")] + _matrix_rows("K probe", k_p)
        rows.append(("probe rel. err", f"{np.linalg.norm(k_p - k_a) / np.linalg.norm(k_a):.3e}"))
    kt = analysis.transverse_stiffness(u_p, an.tip_force, robot, fric, an.probe)
    kt_a = analysis.analytic_transverse_stiffness(u_p, robot, fric)
    rows += [("K_T simulated [N/m]", f"{kt:.9e}"), ("K_T analytic [N/m]", f"{kt_a:.9e}")]
    _write_csv(out / "stiffness.csv", ["source", "i", "j", "K"],
               [[name, i + 1, j + 1, _fmt(m[i, j])] for name, m in mats
                for i in range(robot.n) for j in range(robot.n)]
               + [["K_T simulated", "", "", _fmt(kt)], ["K_T analytic", "", "", _fmt(kt_a)]])
    say(_write_table(out / "stiffness.txt", "stiffness report", rows))
    return 0


def _run_sweep(cfg: ScenarioConfig, out: Path, say):
    an, robot, fric = cfg.analysis, cfg.robot, cfg.friction
    grid = np.array(an.grid)
    status = 0
    if an.mode == "stiffness":
        probe_torque = an.probe_torque or analysis.probe_torque_for(max(grid[-1], 1.0), robot, fric)
        rep = analysis.pressure_sweep(grid, robot, fric, "stiffness", tip_force=an.tip_force,
                                      settings=an.probe, with_probe=an.with_probe,
                                      probe_torque=probe_torque, dt=cfg.dt)
        rows = []
        for u, kt in zip(rep.u_p, rep.k_transverse):
            rows.append([_fmt(u / KPA), _fmt(kt), _fmt(analysis.analytic_transverse_stiffness(u, robot, fric)),
                         rep.errors.get(u, "")])
        _write_csv(out / "sweep.csv", ["u_p_kPa", "K_T", "K_T_analytic", "error"], rows)
        (out / "sweep_kt.dat").write_text(
            "# u_p[kPa] K_T[N/m]\n"
            + "".join(f"{u / KPA:.6g} {kt:.12g}\n" for u, kt in zip(rep.u_p, rep.k_transverse) if np.isfinite(kt))
        )
        if rep.degenerate:
            fit = [("fit", "degenerate (fewer than three points), no R^2 reported")]
            if rep.slope is not None:
                fit.append(("slope [N/m/kPa]", f"{rep.slope * KPA:.9e}"))
        else:
            fit = [
                ("slope [N/m/kPa]", f"{rep.slope * KPA:.9e}"),
                ("intercept [N/m]", f"{rep.intercept:.9e}"),
                ("R^2", f"{rep.r2:.12f}"),
            ]
        fit += [(f"failed at {u / KPA:g} kPa", msg) for u, msg in sorted(rep.errors.items())]
        say(_write_table(out / "fit.txt", "K_T vs u_p linear fit", [("points", str(grid.size))] + fit))
        status = 4 if rep.errors else 0
    else:
        results = analysis.pressure_sweep(grid, robot, fric, "shape-lock", bend_target=an.bend_target,
                                          timings=an.timings, dt=cfg.dt)
        _write_csv(out / "sweep.csv", ["u_p_kPa", "residual_rad", "tip_mm", "converged", "error"],
                   [[_fmt(r.u_p / KPA), _fmt(r.residual_displacement), _fmt(1e3 * r.tip_displacement),
                     str(r.converged), r.error or ""] for r in results])
        (out / "sweep_tip.dat").write_text(
            "# u_p[kPa] tip_displacement[mm]\n"
            + "".join(f"{r.u_p / KPA:.6g} {1e3 * r.tip_displacement:.12g}\n" for r in results
                      if np.isfinite(r.tip_displacement))
        )
        rows = [(f"{r.u_p / KPA:g} kPa", r.error if r.error else
                 f"tip {1e3 * r.tip_displacement:.6f} mm, converged={r.converged}") for r in results]
        say(_write_table(out / "fit.txt", "shape-lock residual vs u_p", rows))
        status = 4 if any(r.error for r in results) else 0
    return status


def _segments(u_p: np.ndarray):
    """Index ranges of constant pressure."""
    cuts = [0] + [int(i) + 1 for i in np.nonzero(np.diff(u_p))[0]] + [u_p.size]
    return [(a, b) for a, b in zip(cuts, cuts[1:]) if b - a >= 3]


def _run_audit(cfg: ScenarioConfig, out: Path, say):
    traj = simulate(cfg.initial_state(), cfg.input_profile(), cfg.resolved_t_span(), cfg.dt,
                    cfg.robot, cfg.friction)
    table, rows = [], []
    for a, b in _segments(traj.u_p):
        window = (traj.t[a], traj.t[b - 1])
        en = energy_audit(traj, window=window)
        pa = passivity_audit(traj, window=window)
        table.append([_fmt(window[0]), _fmt(window[1]), _fmt(traj.u_p[a] / KPA), _fmt(en.max_residual),
                      _fmt(en.quadrature_error[-1]), _fmt(pa.supply), _fmt(pa.storage_delta),
                      _fmt(pa.tolerance), str(pa.damping_ok), str(pa.satisfied)])
        rows.append((f"[{window[0]:.4f}, {window[1]:.4f}] s @ {traj.u_p[a] / KPA:g} kPa",
                     f"energy residual {en.max_residual:.3e} (quadrature {en.quadrature_error[-1]:.1e}); "
                     f"supply {pa.supply:.6e} >= dHz {pa.storage_delta:.6e}: {pa.satisfied}"
                     + ("" if pa.damping_ok else " (damping condition violated)")))
    _write_csv(out / "audit.csv", ["t0", "t1", "u_p_kPa", "energy_residual", "quadrature_error", "supply",
                                   "storage_delta", "tolerance", "damping_ok", "passive"], table)
    if not rows:
        rows = [("windows", "none with at least three samples")]
    say(_write_table(out / "audit.txt", "energy and passivity audit", rows))
    return 0


_RUNNERS = {
    "simulate": _run_simulate,
    "shape-lock": _run_shape_lock,
    "stiffness": _run_stiffness,
    "sweep": _run_sweep,
    "audit": _run_audit,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario TOML file (defaults if omitted)")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--dt", type=float, help="integration step in seconds")
    common.add_argument("--pressure", type=float, help="vacuum pressure override in kPa")
    common.add_argument("--quiet", action="store_true", help="only report errors")
    parser = argparse.ArgumentParser(prog="ljsim", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", required=True)
    helps = {
        "simulate": "integrate the configured input phases and write trajectory.csv",
        "shape-lock": "four-phase bend, lock and release scenario",
        "stiffness": "analytic, Hessian and probe stiffness at one pressure",
        "sweep": "stiffness or shape-lock results over a pressure grid",
        "audit": "energy balance and friction passivity of the configured run",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def run_subcommand(name: str, cfg: ScenarioConfig, quiet: bool = False) -> int:
    if name not in _RUNNERS:
        raise ConfigError(f"unknown subcommand {name!r}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(cfg.to_json() + "\n")
    say = (lambda text: None) if quiet else (lambda text: print(text, end=""))
    return _RUNNERS[name](cfg, out, say)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = args.config.read_text() if args.config is not None else ""
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = _apply_overrides(parse_config(text), args)
        return run_subcommand(args.command, cfg, args.quiet)
    except LJSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
