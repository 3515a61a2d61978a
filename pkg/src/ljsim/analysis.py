"""Shape locking, stiffness identification and pressure sweeps."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from . import model
from .errors import ConvergenceError
from .interconnect import FullState, InputProfile, Trajectory, simulate, vector_field
from .lugre import LuGreParams
from .model import RobotParams, forward_kinematics, tip_jacobian

log = logging.getLogger(__name__)

__all__ = [
    "locked_bristle", "manifold_residual", "analytic_stiffness", "numeric_stiffness_hessian",
    "linearized_system", "probe_response", "probe_stiffness", "probe_torque_for", "transverse_stiffness",
    "analytic_transverse_stiffness", "forward_kinematics", "ShapeLockTimings", "ShapeLockResult",
    "shape_locking_scenario", "attraction_radius", "StiffnessReport", "ShapeLockRow",
    "pressure_sweep", "linear_fit",
]


def _positive_pressure(u_p: float) -> float:
    u_p = float(u_p)
    if not u_p > 0:
        raise ValueError(f"u_p must be > 0 here, got {u_p}")
    return u_p


def locked_bristle(q_a, u_p: float, robot: RobotParams, fric: LuGreParams) -> np.ndarray:
    """Bristle deflection that turns (q_a, 0, z_a) into an equilibrium.

    At rest the momentum balance reads 0 = -grad U(q) - sigma0 u_p z, so the
    bristle must carry z_a = -grad U(q_a) / (sigma0 u_p).
    """
    u_p = _positive_pressure(u_p)
    return -model.grad_potential(q_a, robot) / (fric.sigma0 * u_p)


def manifold_residual(chi, u_p: float, robot: RobotParams, fric: LuGreParams) -> tuple[float, float]:
    """(|p|, |grad U(q) + sigma0 u_p z|); both zero exactly on the locked manifold."""
    u_p = _positive_pressure(u_p)
    if not isinstance(chi, FullState):
        chi = FullState.from_array(chi)
    grad_gap = model.grad_potential(chi.q, robot) + fric.sigma0 * u_p * chi.z
    return float(np.linalg.norm(chi.p)), float(np.linalg.norm(grad_gap))


def analytic_stiffness(u_p: float, robot: RobotParams, fric: LuGreParams) -> np.ndarray:
    n = robot.n
    return robot.alpha1 * np.ones((n, n)) + (robot.alpha2 + fric.sigma0 * float(u_p)) * np.eye(n)


def numeric_stiffness_hessian(u_p: float, robot: RobotParams, fric: LuGreParams, h: float = 1e-5) -> np.ndarray:
    """Central-difference Hessian of U at the rest configuration plus the bristle spring."""
    n = robot.n
    cols = []
    for e in np.eye(n):
        cols.append((model.grad_potential(h * e, robot) - model.grad_potential(-h * e, robot)) / (2 * h))
    hess = np.column_stack(cols)
    hess = 0.5 * (hess + hess.T)
    return hess + fric.sigma0 * float(u_p) * np.eye(n)


def linearized_system(u_p: float, robot: RobotParams, fric: LuGreParams, viscous: bool = True) -> np.ndarray:
    """State matrix of M dq'' + C dq' + K dq = 0 about the open-loop rest point.

    The bristle follows the joint (z = q) in the small-motion limit, so the
    damping is (sigma1 + sigma2) u_p; ``viscous=False`` keeps sigma1 alone.
    """
    n = robot.n
    m_star = model.inertia_matrix(np.zeros(n), robot)
    damping = (fric.sigma1 + (fric.sigma2 if viscous else 0.0)) * float(u_p) * np.eye(n)
    k = model.hessian_potential(np.zeros(n), robot) + fric.sigma0 * float(u_p) * np.eye(n)
    m_inv = np.linalg.inv(m_star)
    return np.block([[np.zeros((n, n)), np.eye(n)], [-m_inv @ k, -m_inv @ damping]])


@dataclass(frozen=True)
class ProbeSettings:
    dt: float = 1e-4
    t_max: float = 60.0
    settle_tol: float = 1e-7
    settle_time: float = 0.5
    # torque is brought up in a smooth staircase so the joints creep to the
    # loaded state instead of ringing through the hysteretic bristles
    ramp: float = 2.0
    ramp_steps: int = 400


def _probe_profile(tau_ext, u_p: float, robot: RobotParams, settings: ProbeSettings) -> InputProfile:
    tau_ext = np.asarray(tau_ext, dtype=float)
    if settings.ramp <= 0 or settings.ramp_steps < 1:
        return InputProfile.constant(robot.n, robot.m, u_p=u_p, tau_ext=tau_ext)
    s = np.arange(1, settings.ramp_steps + 1) / settings.ramp_steps
    levels = 3 * s**2 - 2 * s**3
    times = settings.ramp * np.arange(settings.ramp_steps) / settings.ramp_steps
    return InputProfile.build(
        robot.n, robot.m, pressure=[(0.0, u_p)], tau_ext=[(t, b * tau_ext) for t, b in zip(times, levels)]
    )


def probe_response(tau_ext, u_p: float, robot: RobotParams, fric: LuGreParams,
                   settings: ProbeSettings = ProbeSettings()) -> Trajectory:
    """Load the joints from rest with a small torque and wait until they stop moving."""
    u_p = _positive_pressure(u_p)
    profile = _probe_profile(tau_ext, u_p, robot, settings)
    traj = simulate(
        FullState.zeros(robot.n), profile, (0.0, settings.t_max), settings.dt, robot, fric,
        settle_tol=settings.settle_tol, settle_time=settings.settle_time,
    )
    if not traj.settled:
        raise ConvergenceError(
            f"probe did not settle within {settings.t_max} s at u_p={u_p:g} Pa; "
            "reduce the probe torque or extend t_max"
        )
    return traj


def _static_response(tau_ext, robot: RobotParams) -> np.ndarray:
    """Configuration solving grad U(q) = tau_ext near the rest point."""
    sol = optimize.root(
        lambda q: model.grad_potential(q, robot) - tau_ext, np.zeros(robot.n),
        jac=lambda q: model.hessian_potential(q, robot),
    )
    resid = np.linalg.norm(model.grad_potential(sol.x, robot) - tau_ext)
    if not sol.success or resid > 1e-10 * max(np.linalg.norm(tau_ext), 1e-300):
        raise ConvergenceError(f"static probe failed: {sol.message}")
    return sol.x


def probe_stiffness(u_p: float, probe_torque: float, robot: RobotParams, fric: LuGreParams,
                    settings: ProbeSettings = ProbeSettings()) -> np.ndarray:
    """Stiffness estimate from n unit-direction torque probes.

    Column j of the settled displacement matrix D answers torque probe_torque*e_j,
    so K_est = probe_torque * D^-1.
    """
    cols = []
    for e in np.eye(robot.n):
        traj = probe_response(probe_torque * e, u_p, robot, fric, settings)
        cols.append(traj.final.q)
    disp = np.column_stack(cols)
    k_est = probe_torque * np.linalg.inv(disp)
    return 0.5 * (k_est + k_est.T)


def probe_torque_for(u_p: float, robot: RobotParams, fric: LuGreParams, target: float = 1e-3) -> float:
    """Torque magnitude whose largest unit-direction response is about ``target`` rad."""
    compliance = np.linalg.inv(analytic_stiffness(u_p, robot, fric))
    return float(target / np.max(np.linalg.norm(compliance, axis=0)))


def transverse_stiffness(u_p: float, tip_force: float, robot: RobotParams, fric: LuGreParams,
                         settings: ProbeSettings = ProbeSettings()) -> float:
    """Tip force over tip displacement for a force normal to the straight chain.

    At zero pressure nothing dissipates energy, so the settled configuration
    is found from the static balance grad U(q) = J^T F instead of by simulation.
    """
    rest = np.zeros(robot.n)
    force = np.array([float(tip_force), 0.0])
    tau = tip_jacobian(rest, robot).T @ force
    if float(u_p) == 0.0:
        q_end = _static_response(tau, robot)
    else:
        q_end = probe_response(tau, u_p, robot, fric, settings).final.q
    disp = forward_kinematics(q_end, robot) - forward_kinematics(rest, robot)
    return float(np.linalg.norm(force) / np.linalg.norm(disp))


def analytic_transverse_stiffness(u_p: float, robot: RobotParams, fric: LuGreParams) -> float:
    """Small-force limit 1 / (j^T K^-1 j) with j the lateral row of the tip Jacobian."""
    j = tip_jacobian(np.zeros(robot.n), robot)[0]
    return float(1.0 / (j @ np.linalg.solve(analytic_stiffness(u_p, robot, fric), j)))


@dataclass(frozen=True)
class ShapeLockTimings:
    settle: float = 0.5
    ramp: float = 3.0
    hold: float = 1.0
    lock_max: float = 4.0
    release: float = 2.0
    release_max: float = 8.0
    settle_tol: float = 1e-6
    settle_time: float = 0.5
    target_tol: float = 0.02
    manifold_tol: float = 1e-6
    ramp_points: int = 40
    engage_unloaded: bool = True


@dataclass
class ShapeLockResult:
    u_p: float
    phases: list[Trajectory]
    q_release: np.ndarray
    q_end: np.ndarray
    q_a: np.ndarray
    residual_displacement: float
    tip_displacement: float
    manifold_residual: tuple[float, float]
    converged: bool
    min_bend_after_release: float

    def summary_rows(self) -> list[tuple[str, str]]:
        rows = []
        for k, ph in enumerate(self.phases, start=1):
            rows.append((f"phase {k} end", f"t={ph.t[-1]:.4f} s, q_sum={np.sum(ph.q[-1]):.6f} rad"))
        rows += [
            ("u_p [kPa]", f"{self.u_p / 1e3:g}"),
            ("residual displacement [rad]", f"{self.residual_displacement:.6e}"),
            ("tip displacement [mm]", f"{1e3 * self.tip_displacement:.6f}"),
            ("manifold residual |p|", f"{self.manifold_residual[0]:.3e}"),
            ("manifold residual grad", f"{self.manifold_residual[1]:.3e}"),
            ("converged", str(self.converged)),
        ]
        return rows


def _smooth_ramp(t0: float, duration: float, start, end, points: int):
    s = np.linspace(0.0, 1.0, points)
    blend = 3 * s**2 - 2 * s**3
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    return [(t0 + duration * si, start + bi * (end - start)) for si, bi in zip(s, blend)]


def bend_tension(bend_target: float, robot: RobotParams) -> np.ndarray:
    """Non-negative tensions holding the uniform bend with total angle bend_target."""
    q_target = np.full(robot.n, bend_target / robot.n)
    g = model.input_matrix(q_target, robot)
    u, res = optimize.nnls(g, model.grad_potential(q_target, robot))
    if res > 1e-9 * max(1.0, np.linalg.norm(model.grad_potential(q_target, robot))):
        raise ConvergenceError("tendon routing cannot hold the requested bend")
    return u


def shape_locking_scenario(bend_target: float, u_p_lock: float, robot: RobotParams, fric: LuGreParams,
                           timings: ShapeLockTimings = ShapeLockTimings(), dt: float = 1e-4) -> ShapeLockResult:
    """Four phases: rest, tendon bend, vacuum with tension held, tension release."""
    n, m, tm = robot.n, robot.m, timings
    u_p_lock = float(u_p_lock)
    if u_p_lock < 0:
        raise ValueError("u_p_lock must be >= 0")
    zero_u = np.zeros(m)
    u_bend = bend_tension(bend_target, robot)

    # phase 1: nothing applied
    p1 = simulate(FullState.zeros(n), InputProfile.constant(n, m), (0.0, tm.settle), dt, robot, fric)
    t = p1.t[-1]

    # phase 2: smooth tension ramp, then hold; frictionless so it cannot settle
    prof2 = InputProfile.build(n, m, tension=_smooth_ramp(t, tm.ramp, zero_u, u_bend, tm.ramp_points))
    p2 = simulate(p1.states[-1], prof2, (t, t + tm.ramp + tm.hold), dt, robot, fric)
    hold_window = p2.t >= t + tm.ramp
    bend = float(np.mean(np.sum(p2.q[hold_window], axis=1)))
    if abs(bend - bend_target) > tm.target_tol:
        raise ConvergenceError(f"phase 2 reached a bend of {bend:.4f} rad, target {bend_target:.4f} rad")
    t = p2.t[-1]

    # phase 3: vacuum on, tension retained
    chi = p2.states[-1].copy()
    if tm.engage_unloaded:
        chi[2 * n:] = 0.0
    prof3 = InputProfile.constant(n, m, u=u_bend, u_p=u_p_lock)
    settle = tm.settle_tol if u_p_lock > 0 else None
    p3 = simulate(chi, prof3, (t, t + tm.lock_max), dt, robot, fric, settle_tol=settle, settle_time=tm.settle_time)
    t = p3.t[-1]

    # phase 4: vacuum retained, tension released
    q_release = p3.q[-1].copy()
    prof4 = InputProfile.build(
        n, m, tension=_smooth_ramp(t, tm.release, u_bend, zero_u, tm.ramp_points), pressure=[(t, u_p_lock)]
    )
    p4a = simulate(p3.states[-1], prof4, (t, t + tm.release), dt, robot, fric)
    t = p4a.t[-1]
    prof4b = InputProfile.constant(n, m, u_p=u_p_lock)
    p4b = simulate(p4a.states[-1], prof4b, (t, t + tm.release_max), dt, robot, fric,
                   settle_tol=settle, settle_time=tm.settle_time)
    phase4 = _concat(p4a, p4b)

    q_end = phase4.q[-1].copy()
    tip = float(np.linalg.norm(forward_kinematics(q_end, robot) - forward_kinematics(q_release, robot)))
    if u_p_lock > 0:
        res = manifold_residual(phase4.states[-1], u_p_lock, robot, fric)
        converged = res[0] < tm.manifold_tol and res[1] < tm.manifold_tol
    else:
        res = (float(np.linalg.norm(phase4.p[-1])), float("nan"))
        converged = False
    return ShapeLockResult(
        u_p=u_p_lock, phases=[p1, p2, p3, phase4], q_release=q_release, q_end=q_end, q_a=q_end,
        residual_displacement=float(np.linalg.norm(q_end - q_release)), tip_displacement=tip,
        manifold_residual=res, converged=bool(converged),
        min_bend_after_release=float(np.min(np.abs(np.sum(phase4.q, axis=1)))),
    )


def _concat(a: Trajectory, b: Trajectory) -> Trajectory:
    out = Trajectory(
        t=np.concatenate([a.t, b.t[1:]]), states=np.concatenate([a.states, b.states[1:]]),
        u_p=np.concatenate([a.u_p, b.u_p[1:]]), tension=np.concatenate([a.tension, b.tension[1:]]),
        tau_ext=np.concatenate([a.tau_ext, b.tau_ext[1:]]), robot=a.robot, fric=a.fric,
        events=a.events + b.events, diagnostics=a.diagnostics + b.diagnostics, settled=b.settled,
    )
    return out


def attraction_radius(q_a, u_p: float, robot: RobotParams, fric: LuGreParams, *, q_tol: float = 1e-3,
                      eps_max: float | None = None, iters: int = 12, direction=None, dt: float = 1e-4,
                      t_max: float = 20.0) -> float:
    """Bisection estimate of how far a locked state can be pushed and still relock near q_a.

    The default push removes bristle load, i.e. moves (q_a, 0, z_a) toward
    (q_a, 0, 0), the state left behind by an idealized tension release.
    """
    u_p = _positive_pressure(u_p)
    q_a = np.asarray(q_a, dtype=float)
    z_a = locked_bristle(q_a, u_p, robot, fric)
    base = FullState(q_a, np.zeros_like(q_a), z_a).as_array()
    if direction is None:
        direction = np.concatenate([np.zeros(2 * robot.n), -z_a])
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    if eps_max is None:
        eps_max = 2.0 * max(float(np.linalg.norm(z_a)), fric.z_max)
    profile = InputProfile.constant(robot.n, robot.m, u_p=u_p)

    def relocks(eps):
        traj = simulate(base + eps * direction, profile, (0.0, t_max), dt, robot, fric, settle_tol=1e-6)
        return traj.settled and np.linalg.norm(traj.final.q - q_a) <= q_tol

    lo, hi = 0.0, eps_max
    if relocks(hi):
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if relocks(mid) else (lo, mid)
    return lo


def linear_fit(x, y):
    """(slope, intercept, r2); r2 is None for fewer than three points."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2:
        return None, None, None
    if x.size == 2:
        slope = (y[1] - y[0]) / (x[1] - x[0])
        return float(slope), float(y[0] - slope * x[0]), None
    fit = stats.linregress(x, y)
    return float(fit.slope), float(fit.intercept), float(fit.rvalue**2)


@dataclass
class StiffnessReport:
    u_p: np.ndarray
    k_analytic: list
    k_hessian: list
    k_transverse: np.ndarray
    slope: float | None
    intercept: float | None
    r2: float | None
    k_probe: list | None = None
    errors: dict = field(default_factory=dict)

    @property
    def degenerate(self) -> bool:
        return self.r2 is None


@dataclass
class ShapeLockRow:
    u_p: float
    residual_displacement: float
    tip_displacement: float
    converged: bool
    error: str | None = None


def _stiffness_point(args):
    u_p, tip_force, robot, fric, settings, with_probe, probe_torque = args
    try:
        kt = transverse_stiffness(u_p, tip_force, robot, fric, settings)
        kp = probe_stiffness(u_p, probe_torque, robot, fric, settings) if (with_probe and u_p > 0) else None
        return u_p, kt, kp, None
    except Exception as exc:  # one failed point must not abort the sweep
        return u_p, float("nan"), None, f"{type(exc).__name__}: {exc}"


def _shape_lock_point(args):
    u_p, bend, robot, fric, timings, dt = args
    try:
        res = shape_locking_scenario(bend, u_p, robot, fric, timings, dt)
        return ShapeLockRow(u_p, res.residual_displacement, res.tip_displacement, res.converged)
    except Exception as exc:
        return ShapeLockRow(u_p, float("nan"), float("nan"), False, f"{type(exc).__name__}: {exc}")


def default_workers() -> int:
    return max(1, int(os.environ.get("LJSIM_WORKERS", "1")))


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def pressure_sweep(grid, robot: RobotParams, fric: LuGreParams, mode: str = "stiffness", *,
                   tip_force: float = 0.01, settings: ProbeSettings = ProbeSettings(),
                   with_probe: bool = False, probe_torque: float = 1e-2,
                   bend_target: float = np.pi / 3, timings: ShapeLockTimings = ShapeLockTimings(),
                   dt: float = 1e-4, workers: int | None = None):
    """Run one independent experiment per pressure (Pa) on an ascending grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("pressure grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("pressure grid must be strictly ascending")
    workers = default_workers() if workers is None else workers

    if mode == "stiffness":
        items = [(float(u), tip_force, robot, fric, settings, with_probe, probe_torque) for u in grid]
        results = _map(_stiffness_point, items, workers)
        kt = np.array([r[1] for r in results])
        errors = {r[0]: r[3] for r in results if r[3] is not None}
        ok = np.isfinite(kt)
        slope, intercept, r2 = linear_fit(grid[ok], kt[ok])
        return StiffnessReport(
            u_p=grid, k_analytic=[analytic_stiffness(u, robot, fric) for u in grid],
            k_hessian=[numeric_stiffness_hessian(u, robot, fric) for u in grid], k_transverse=kt,
            slope=slope, intercept=intercept, r2=r2,
            k_probe=[r[2] for r in results] if with_probe else None, errors=errors,
        )
    if mode == "shape-lock":
        items = [(float(u), bend_target, robot, fric, timings, dt) for u in grid]
        return _map(_shape_lock_point, items, workers)
    raise ValueError(f"unknown sweep mode {mode!r}")


def equilibrium_defect(q_a, u_p: float, robot: RobotParams, fric: LuGreParams) -> float:
    """Norm of the vector field at (q_a, 0, z_a) with zero tension."""
    z_a = locked_bristle(q_a, u_p, robot, fric)
    chi = FullState(q_a, np.zeros(robot.n), z_a)
    return float(np.linalg.norm(vector_field(chi, np.zeros(robot.m), u_p, np.zeros(robot.n), robot, fric)))
