"""Robot + friction interconnection, time integration and energy audits.

The full state is chi = (q, p, z) stored flat as a length-3n array. The
vector field is evaluated in the composed form (robot momentum balance with
the canonical friction torque) which stays well defined at zero pressure.
``block_vector_field`` assembles the skew/dissipation matrices literally and
exists as an independent check of that form.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_simpson, cumulative_trapezoid

from . import lugre, model
from .errors import NumericalInstabilityError
from .lugre import LuGreParams
from .model import RobotParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FullState:
    q: np.ndarray
    p: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        for name in ("q", "p", "z"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.q.shape == self.p.shape == self.z.shape and self.q.ndim == 1):
            raise ValueError("q, p and z must be 1-D arrays of equal length")
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("state has non-finite entries")

    @property
    def n(self) -> int:
        return self.q.size

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.q, self.p, self.z])

    @classmethod
    def from_array(cls, chi) -> "FullState":
        chi = np.asarray(chi, dtype=float)
        if chi.ndim != 1 or chi.size % 3:
            raise ValueError("flat state length must be a multiple of 3")
        n = chi.size // 3
        return cls(chi[:n], chi[n:2 * n], chi[2 * n:])

    @classmethod
    def zeros(cls, n: int) -> "FullState":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))


def _as_flat(chi) -> np.ndarray:
    if isinstance(chi, FullState):
        return chi.as_array()
    chi = np.asarray(chi, dtype=float)
    if chi.ndim != 1 or chi.size % 3:
        raise ValueError("flat state length must be a multiple of 3")
    return chi


def _split(chi: np.ndarray):
    n = chi.shape[-1] // 3
    return chi[..., :n], chi[..., n:2 * n], chi[..., 2 * n:]


@dataclass(frozen=True)
class InputProfile:
    """Input schedules over time.

    Tension is piecewise linear between breakpoints (held outside them).
    Pressure and external torque are piecewise constant and right-continuous:
    the value listed at a breakpoint applies from that instant on.
    """

    tension_times: np.ndarray
    tension_values: np.ndarray
    pressure_times: np.ndarray
    pressure_values: np.ndarray
    torque_times: np.ndarray
    torque_values: np.ndarray

    def __post_init__(self):
        conv = {
            "tension_times": 1, "tension_values": 2, "pressure_times": 1,
            "pressure_values": 1, "torque_times": 1, "torque_values": 2,
        }
        for name, ndim in conv.items():
            arr = np.array(getattr(self, name), dtype=float, ndmin=ndim)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for kind in ("tension", "pressure", "torque"):
            times = getattr(self, f"{kind}_times")
            values = getattr(self, f"{kind}_values")
            if times.size == 0 or times.size != values.shape[0]:
                raise ValueError(f"{kind} schedule needs matching, non-empty times and values")
            if np.any(np.diff(times) <= 0):
                raise ValueError(f"{kind} breakpoints must be strictly increasing")
        if np.any(self.pressure_values < 0):
            raise ValueError("pressure set-points must be >= 0")
        if np.any(self.tension_values < 0):
            log.warning("negative tension set-points clamped to zero")
            clamped = np.clip(self.tension_values, 0.0, None)
            clamped.setflags(write=False)
            object.__setattr__(self, "tension_values", clamped)

    @classmethod
    def build(cls, n: int, m: int, tension=None, pressure=None, tau_ext=None) -> "InputProfile":
        """Build from lists of ``(time, value)`` pairs; omitted inputs are zero."""
        tension = tension or [(0.0, np.zeros(m))]
        pressure = pressure or [(0.0, 0.0)]
        tau_ext = tau_ext or [(0.0, np.zeros(n))]
        tt, tv = zip(*tension)
        pt, pv = zip(*pressure)
        et, ev = zip(*tau_ext)
        tv = np.array([np.broadcast_to(np.asarray(x, dtype=float), (m,)) for x in tv])
        ev = np.array([np.broadcast_to(np.asarray(x, dtype=float), (n,)) for x in ev])
        return cls(tt, tv, pt, pv, et, ev)

    @classmethod
    def constant(cls, n: int, m: int, u=None, u_p: float = 0.0, tau_ext=None) -> "InputProfile":
        return cls.build(
            n, m,
            tension=[(0.0, np.zeros(m) if u is None else u)],
            pressure=[(0.0, u_p)],
            tau_ext=[(0.0, np.zeros(n) if tau_ext is None else tau_ext)],
        )

    @property
    def m(self) -> int:
        return self.tension_values.shape[1]

    @property
    def n(self) -> int:
        return self.torque_values.shape[1]

    @staticmethod
    def _held(times, values, t):
        idx = np.searchsorted(times, t, side="right") - 1
        return values[np.clip(idx, 0, None)]

    def tension(self, t):
        t = np.asarray(t, dtype=float)
        cols = [np.interp(t, self.tension_times, self.tension_values[:, j]) for j in range(self.m)]
        return np.stack(cols, axis=-1)

    def pressure(self, t):
        out = self._held(self.pressure_times, self.pressure_values, t)
        return float(out) if np.ndim(out) == 0 else out

    def tau_ext(self, t):
        return self._held(self.torque_times, self.torque_values, t)

    def pressure_jumps(self, t0: float, t1: float):
        """Breakpoints in (t0, t1] where the pressure actually changes."""
        jumps = []
        for k in range(1, self.pressure_times.size):
            tb = self.pressure_times[k]
            if t0 < tb <= t1 and self.pressure_values[k] != self.pressure_values[k - 1]:
                jumps.append((float(tb), float(self.pressure_values[k - 1]), float(self.pressure_values[k])))
        return jumps


def _check_inputs(u, u_p, tau_ext, n, m):
    u = np.asarray(u, dtype=float)
    tau_ext = np.asarray(tau_ext, dtype=float)
    if u.shape != (m,):
        raise ValueError(f"tension vector must have length {m}, got shape {u.shape}")
    if tau_ext.shape != (n,):
        raise ValueError(f"external torque must have length {n}, got shape {tau_ext.shape}")
    if np.any(u < 0):
        raise ValueError("tensions must be non-negative")
    if not float(u_p) >= 0:
        raise ValueError("pressure must be non-negative")
    return u, float(u_p), tau_ext


def vector_field(chi, u, u_p: float, tau_ext, robot: RobotParams, fric: LuGreParams) -> np.ndarray:
    """d(chi)/dt in the composed, pressure-cancelled form."""
    chi = _as_flat(chi)
    n = chi.size // 3
    if n != robot.n:
        raise ValueError(f"state has {n} joints, robot has {robot.n}")
    u, u_p, tau_ext = _check_inputs(u, u_p, tau_ext, n, robot.m)
    q, p, z = _split(chi)
    dq_h, v = model.grad_hamiltonian(model.RobotState(q, p), robot)
    z_dot = lugre.bristle_rate(z, v, fric)
    tau_f = lugre.friction_torque(z, z_dot, v, u_p, fric)
    p_dot = -dq_h + model.input_matrix(q, robot) @ u + tau_ext - tau_f
    return np.concatenate([v, p_dot, z_dot])


def total_hamiltonian(chi, u_p: float, robot: RobotParams, fric: LuGreParams) -> float:
    q, p, z = _split(_as_flat(chi))
    return model.hamiltonian(model.RobotState(q, p), robot) + lugre.bristle_energy(z, u_p, fric)


def grad_total_hamiltonian(chi, u_p: float, robot: RobotParams, fric: LuGreParams) -> np.ndarray:
    q, p, z = _split(_as_flat(chi))
    dq_h, dp_h = model.grad_hamiltonian(model.RobotState(q, p), robot)
    return np.concatenate([dq_h, dp_h, lugre.grad_bristle_energy(z, u_p, fric)])


def ph_matrices(chi, u_p: float, robot: RobotParams, fric: LuGreParams):
    """Interconnection and dissipation matrices (J, R) of the full model; u_p > 0."""
    chi = _as_flat(chi)
    q, p, _ = _split(chi)
    n = q.size
    v = model.velocity(model.RobotState(q, p), robot)
    rz, n_mat, p_mat, s_mat = lugre.lugre_matrices(v, u_p, fric)
    eye, zero = np.eye(n), np.zeros((n, n))
    j_robot = np.block([[zero, eye], [-eye, zero]])
    g_f = np.vstack([zero, eye])
    big_j = np.block([[j_robot, -g_f @ n_mat.T], [n_mat @ g_f.T, zero]])
    big_r = np.block([[g_f @ s_mat @ g_f.T, g_f @ p_mat.T], [p_mat.T @ g_f.T, rz]])
    return big_j, big_r


def block_vector_field(chi, u, u_p: float, tau_ext, robot: RobotParams, fric: LuGreParams) -> np.ndarray:
    """[J - R] grad H + G u + G0 tau_ext, assembled matrix by matrix."""
    chi = _as_flat(chi)
    n = chi.size // 3
    u, u_p, tau_ext = _check_inputs(u, u_p, tau_ext, n, robot.m)
    big_j, big_r = ph_matrices(chi, u_p, robot, fric)
    q = chi[:n]
    g_in = np.concatenate([np.zeros((n, robot.m)), model.input_matrix(q, robot), np.zeros((n, robot.m))])
    g_ext = np.concatenate([np.zeros((n, n)), np.eye(n), np.zeros((n, n))])
    grad = grad_total_hamiltonian(chi, u_p, robot, fric)
    return (big_j - big_r) @ grad + g_in @ u + g_ext @ tau_ext


def dissipation_power(q, p, z, u_p, robot: RobotParams, fric: LuGreParams) -> np.ndarray:
    """grad H^T R grad H, vectorized over leading sample axes.

    Written out per joint so it also holds at u_p = 0 (where it is zero).
    """
    v = np.linalg.solve(model.inertia_matrix(q, robot), p[..., None])[..., 0]
    u_p = np.asarray(u_p, dtype=float)[..., None]
    rho = lugre.stribeck(v, fric)
    s0, s1, s2 = fric.sigma0, fric.sigma1, fric.sigma2
    av = np.abs(v)
    terms = (s1 + s2) * v * v - s1 * s0 * av * v * z / rho + s0 * s0 * av * z * z / rho
    return np.sum(u_p * terms, axis=-1)


def _stage_inputs(profile: InputProfile, t0: float, dt: float, steps: int, robot: RobotParams):
    t = t0 + dt * np.arange(steps)
    g = model.input_matrix(np.zeros(robot.n), robot)
    stages = np.stack([t, t + 0.5 * dt, t + dt], axis=1)
    gen_force = profile.tension(stages) @ g.T
    return t, gen_force, np.asarray(profile.pressure(t), dtype=float), profile.tau_ext(t)


def step(chi, t: float, dt: float, profile: InputProfile, robot: RobotParams, fric: LuGreParams) -> np.ndarray:
    """One classical RK4 step (numpy path).

    Tension is sampled at each stage time; pressure and external torque are
    held at their value at ``t`` for the whole step.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    chi = _as_flat(chi)
    u_p, tau = profile.pressure(t), profile.tau_ext(t)
    u_a, u_b, u_c = profile.tension([t, t + 0.5 * dt, t + dt])

    def f(x, u):
        return vector_field(x, u, u_p, tau, robot, fric)

    k1 = f(chi, u_a)
    k2 = f(chi + 0.5 * dt * k1, u_b)
    k3 = f(chi + 0.5 * dt * k2, u_b)
    k4 = f(chi + dt * k3, u_c)
    out = chi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalInstabilityError(f"non-finite state after step at t={t + dt:.6g}; reduce dt", t + dt)
    return out


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray
    u_p: np.ndarray
    tension: np.ndarray
    tau_ext: np.ndarray
    robot: RobotParams
    fric: LuGreParams
    events: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    settled: bool = False

    def __post_init__(self):
        self._derive()

    @property
    def n(self) -> int:
        return self.states.shape[1] // 3

    @property
    def q(self):
        return self.states[:, : self.n]

    @property
    def p(self):
        return self.states[:, self.n: 2 * self.n]

    @property
    def z(self):
        return self.states[:, 2 * self.n:]

    @property
    def final(self) -> FullState:
        return FullState.from_array(self.states[-1])

    def _derive(self):
        robot, fric = self.robot, self.fric
        q, p, z = self.q, self.p, self.z
        up = self.u_p[:, None]
        self.v = np.linalg.solve(model.inertia_matrix(q, robot), p[..., None])[..., 0]
        self.Hz = 0.5 * fric.sigma0 * self.u_p * np.sum(z * z, axis=1)
        self.H = 0.5 * np.sum(p * self.v, axis=1) + model.potential_energy(q, robot) + self.Hz
        z_dot = lugre.bristle_rate(z, self.v, fric)
        self.tau_f = up * (fric.sigma0 * z + fric.sigma1 * z_dot + fric.sigma2 * self.v)
        self.res_p = np.linalg.norm(p, axis=1)
        self.res_grad = np.linalg.norm(model.grad_potential(q, robot) + fric.sigma0 * up * z, axis=1)

    def window(self, t0: float, t1: float) -> slice:
        i0 = int(np.searchsorted(self.t, t0 - 1e-12, side="left"))
        i1 = int(np.searchsorted(self.t, t1 + 1e-12, side="right"))
        return slice(i0, i1)

    def csv_header(self) -> list[str]:
        n = self.n
        cols = ["t"]
        for name in ("q", "p", "z"):
            cols += [f"{name}{i + 1}" for i in range(n)]
        cols += ["H", "Hz"] + [f"tauf{i + 1}" for i in range(n)] + ["res_p", "res_grad"]
        return cols

    def table(self) -> np.ndarray:
        return np.column_stack(
            [self.t, self.states, self.H, self.Hz, self.tau_f, self.res_p, self.res_grad]
        )

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.csv_header())
            for row in self.table():
                writer.writerow([repr(float(x)) for x in row])
        return path


def read_csv(path):
    """Return (header, data) of a trajectory CSV."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]])


def preflight(dt: float, robot: RobotParams, fric: LuGreParams, u_p_max: float, v_max: float = 1.0) -> list[str]:
    """Warn about step sizes likely to destabilize explicit RK4."""
    notes = []
    bristle = dt * fric.sigma0 * v_max / fric.mu_c
    if bristle > 1.0:
        notes.append(f"bristle stiffness: dt*sigma0*|v|/mu_c = {bristle:.3g} > 1")
    m_min = np.linalg.eigvalsh(model.inertia_matrix(np.zeros(robot.n), robot))[0]
    damping = dt * (fric.sigma1 + fric.sigma2) * u_p_max / m_min
    if damping > 2.0:
        notes.append(f"friction damping: dt*(sigma1+sigma2)*u_p/m_min = {damping:.3g} > 2")
    for msg in notes:
        log.warning("pre-flight: %s", msg)
    return notes


def simulate(
    chi0,
    profile: InputProfile,
    t_span: tuple[float, float],
    dt: float,
    robot: RobotParams,
    fric: LuGreParams,
    *,
    settle_tol: float | None = None,
    settle_time: float = 0.5,
    backend: str = "compiled",
) -> Trajectory:
    """Integrate on the uniform grid t0 + k*dt.

    With ``settle_tol`` set, integration stops early once max|v| has stayed
    below it for ``settle_time`` seconds; ``Trajectory.settled`` records this.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    chi0 = _as_flat(chi0).copy()
    if chi0.size != 3 * robot.n:
        raise ValueError(f"initial state must have length {3 * robot.n}")
    if profile.n != robot.n or profile.m != robot.m:
        raise ValueError("input profile dimensions do not match the robot")
    steps = int(round((t1 - t0) / dt))
    t_grid, gen_force, u_p, tau = _stage_inputs(profile, t0, dt, steps, robot)
    preflight(dt, robot, fric, float(np.max(u_p, initial=0.0)))
    dwell = int(round(settle_time / dt)) if settle_tol is not None else 0

    if backend == "compiled":
        from ._kernels import rk4_integrate

        a_mat, rot, _ = model._chain_constants(robot.n, robot.link_length, robot.link_mass)
        fvec = np.array([fric.mu_s, fric.mu_c, fric.v_s, fric.sigma0, fric.sigma1, fric.sigma2, fric.sigma3])
        states, done, status = rk4_integrate(
            chi0, dt, steps, gen_force, u_p, np.ascontiguousarray(tau), robot.n,
            np.ascontiguousarray(a_mat), np.diag(rot).copy(), robot.alpha1, robot.alpha2, fvec,
            settle_tol if settle_tol is not None else 0.0, dwell,
        )
        if status:
            raise NumericalInstabilityError(
                f"non-finite state at t={t0 + done * dt:.6g}; reduce dt", t0 + done * dt
            )
        settled = dwell > 0 and done < steps
        states = states[: done + 1].copy()
    elif backend == "numpy":
        states = [chi0]
        chi, quiet, settled = chi0, 0, False
        for k in range(steps):
            tk = t0 + k * dt
            if dwell:
                v = model.velocity(model.RobotState(*_split(chi)[:2]), robot)
                quiet = quiet + 1 if np.max(np.abs(v)) < settle_tol else 0
                if quiet >= dwell:
                    settled = True
                    break
            chi = step(chi, tk, dt, profile, robot, fric)
            states.append(chi)
        states = np.array(states)
    else:
        raise ValueError(f"unknown backend {backend!r}")

    count = states.shape[0]
    t = t0 + dt * np.arange(count)
    samples_up = np.asarray(profile.pressure(t), dtype=float)
    traj = Trajectory(
        t=t, states=states, u_p=samples_up, tension=profile.tension(t), tau_ext=profile.tau_ext(t),
        robot=robot, fric=fric, settled=settled,
    )
    _log_events(traj, profile)
    return traj


def _log_events(traj: Trajectory, profile: InputProfile):
    dt = traj.t[1] - traj.t[0] if traj.t.size > 1 else 0.0
    for tb, before, after in profile.pressure_jumps(traj.t[0], traj.t[-1]):
        # the switch takes effect on the first grid point at or after tb
        k = int(np.searchsorted(traj.t, tb - 1e-9 * max(dt, 1.0), side="left"))
        z = traj.z[k]
        jump = 0.5 * traj.fric.sigma0 * (after - before) * float(z @ z)
        traj.events.append({"t": float(traj.t[k]), "u_p_before": before, "u_p_after": after, "energy_jump": jump})
    # bristles only feed back into the motion while the vacuum is on
    loaded = traj.u_p > 0
    v_peak = float(np.max(np.abs(traj.v[loaded]))) if np.any(loaded) else 0.0
    if dt and dt * traj.fric.sigma0 * v_peak / traj.fric.mu_c > 1.0:
        msg = f"bristle dynamics under-resolved: dt*sigma0*max|v|/mu_c > 1 (max|v|={v_peak:.3g})"
        log.warning(msg)
        traj.diagnostics.append(msg)
    outside = np.nonzero(np.any(np.abs(traj.q) >= np.pi, axis=1))[0]
    if outside.size:
        msg = f"configuration left |q_i| < pi at t={traj.t[outside[0]]:.6g}"
        log.warning(msg)
        traj.diagnostics.append(msg)


def _constant_pressure(traj: Trajectory, sl: slice) -> float:
    ups = traj.u_p[sl]
    if ups.size and np.any(ups != ups[0]):
        raise ValueError("audit window contains a pressure jump; split it at the jump")
    return float(ups[0])


def _integrate(t, y):
    """Cumulative Simpson integral plus a conservative error estimate."""
    if t.size < 3:
        out = cumulative_trapezoid(y, t, initial=0.0)
        return out, np.zeros_like(out)
    simpson = cumulative_simpson(y, x=t, initial=0.0)
    trap = cumulative_trapezoid(y, t, initial=0.0)
    return simpson, np.abs(simpson - trap)


@dataclass(frozen=True)
class EnergyAudit:
    t: np.ndarray
    hamiltonian: np.ndarray
    supplied: np.ndarray
    dissipated: np.ndarray
    residual: np.ndarray
    quadrature_error: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))


def energy_audit(traj: Trajectory, profile: InputProfile | None = None, window=None) -> EnergyAudit:
    """Compare the change in total energy with supplied minus dissipated work.

    The window must have constant pressure. Input power uses the tension and
    external torque recorded in the trajectory (``profile`` is accepted for
    API symmetry and, if given, used to resample the tension).
    """
    sl = traj.window(*window) if window is not None else slice(None)
    u_p = _constant_pressure(traj, sl)
    robot, fric = traj.robot, traj.fric
    t = traj.t[sl]
    q, p, z, v = traj.q[sl], traj.p[sl], traj.z[sl], traj.v[sl]
    tension = profile.tension(t) if profile is not None else traj.tension[sl]
    g = model.input_matrix(np.zeros(robot.n), robot)
    power_in = np.sum(v * (tension @ g.T + traj.tau_ext[sl]), axis=1)
    power_d = dissipation_power(q, p, z, np.full(t.size, u_p), robot, fric)
    supplied, err_s = _integrate(t, power_in)
    dissipated, err_d = _integrate(t, power_d)
    h = traj.H[sl]
    residual = h - h[0] - (supplied - dissipated)
    return EnergyAudit(t, h, supplied, dissipated, residual, err_s + err_d)


@dataclass(frozen=True)
class PassivityAudit:
    supply: float
    storage_delta: float
    tolerance: float
    damping_ok: bool

    @property
    def satisfied(self) -> bool:
        return self.supply >= self.storage_delta - self.tolerance


def passivity_check(t, v, z, u_p: float, fric: LuGreParams) -> PassivityAudit:
    """Both sides of the friction passivity inequality over sampled data."""
    t, v, z = (np.asarray(a, dtype=float) for a in (t, v, z))
    z_dot = lugre.bristle_rate(z, v, fric)
    tau_f = u_p * (fric.sigma0 * z + fric.sigma1 * z_dot + fric.sigma2 * v)
    supply, err = _integrate(t, np.sum(v * tau_f, axis=1))
    hz = 0.5 * fric.sigma0 * u_p * np.sum(z * z, axis=1)
    scale = max(abs(float(supply[-1])), abs(float(hz[-1])), abs(float(hz[0])), 1e-300)
    tol = float(err[-1]) + 64 * np.finfo(float).eps * scale
    return PassivityAudit(
        supply=float(supply[-1]), storage_delta=float(hz[-1] - hz[0]), tolerance=tol,
        damping_ok=bool(np.all(lugre.damping_condition(v, fric))),
    )


def passivity_audit(traj: Trajectory, window=None) -> PassivityAudit:
    sl = traj.window(*window) if window is not None else slice(None)
    u_p = _constant_pressure(traj, sl)
    return passivity_check(traj.t[sl], traj.v[sl], traj.z[sl], u_p, traj.fric)
