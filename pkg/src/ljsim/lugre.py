"""Pressure-modulated LuGre friction at each joint.

Friction scales with the vacuum level ``u_p`` (pascals). Every coefficient is
expressed per pascal, which absorbs the unknown ratio between pressure and
the lumped normal force between layers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq


@dataclass(frozen=True)
class LuGreParams:
    mu_s: float = 2.5e-4
    mu_c: float = 1.5e-4
    v_s: float = 0.01
    sigma0: float = 2.0e-3
    sigma1: float = 1.5e-5
    sigma2: float = 1.5e-6
    sigma3: float = 1.0

    def __post_init__(self):
        if not self.mu_c > 0:
            raise ValueError("mu_c must be > 0")
        if not self.mu_s >= self.mu_c:
            raise ValueError("mu_s must be >= mu_c")
        if not self.v_s > 0:
            raise ValueError("v_s must be > 0")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be > 0")
        if self.sigma1 < 0 or self.sigma2 < 0:
            raise ValueError("sigma1 and sigma2 must be >= 0")
        if not self.sigma3 > 0:
            raise ValueError("sigma3 must be > 0")

    @property
    def z_max(self) -> float:
        """Radius of the invariant bristle ball."""
        return self.mu_s / self.sigma0


def _check_pressure(u_p: float) -> float:
    u_p = float(u_p)
    if not u_p >= 0:
        raise ValueError(f"pressure u_p must be >= 0, got {u_p}")
    return u_p


def stribeck(v, params: LuGreParams):
    v = np.asarray(v, dtype=float)
    decay = np.exp(-np.abs(v / params.v_s) ** params.sigma3)
    return params.mu_c + (params.mu_s - params.mu_c) * decay


def bristle_rate(z, v, params: LuGreParams) -> np.ndarray:
    """dz/dt with the pressure already cancelled, so u_p = 0 is fine."""
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    return v - params.sigma0 * np.abs(v) * z / stribeck(v, params)


def friction_torque(z, z_dot, v, u_p: float, params: LuGreParams) -> np.ndarray:
    u_p = _check_pressure(u_p)
    z, z_dot, v = (np.asarray(a, dtype=float) for a in (z, z_dot, v))
    return u_p * (params.sigma0 * z + params.sigma1 * z_dot + params.sigma2 * v)


def lugre_matrices(v, u_p: float, params: LuGreParams):
    """(R_z, N, P, S) of the port-Hamiltonian friction block; needs u_p > 0."""
    u_p = _check_pressure(u_p)
    if u_p == 0:
        raise ValueError("block form is singular at u_p = 0; use friction_torque")
    v = np.asarray(v, dtype=float)
    rz = np.diag(np.abs(v) / (u_p * stribeck(v, params)))
    eye = np.eye(v.size)
    n_mat = eye - 0.5 * params.sigma1 * u_p * rz
    p_mat = -0.5 * params.sigma1 * u_p * rz
    s_mat = (params.sigma1 + params.sigma2) * u_p * eye
    return rz, n_mat, p_mat, s_mat


def grad_bristle_energy(z, u_p: float, params: LuGreParams) -> np.ndarray:
    return params.sigma0 * _check_pressure(u_p) * np.asarray(z, dtype=float)


def friction_torque_ph(z, v, u_p: float, params: LuGreParams) -> np.ndarray:
    """Friction torque from the (N + P)^T grad H_z + S v output map."""
    _, n_mat, p_mat, s_mat = lugre_matrices(v, u_p, params)
    return (n_mat + p_mat).T @ grad_bristle_energy(z, u_p, params) + s_mat @ np.asarray(v, dtype=float)


def bristle_rate_ph(z, v, u_p: float, params: LuGreParams) -> np.ndarray:
    rz, n_mat, p_mat, _ = lugre_matrices(v, u_p, params)
    return -rz @ grad_bristle_energy(z, u_p, params) + (n_mat - p_mat) @ np.asarray(v, dtype=float)


def steady_state_friction(v, u_p: float, params: LuGreParams) -> np.ndarray:
    """Constant-velocity limit of the friction torque; sign(0) is taken as 0."""
    u_p = _check_pressure(u_p)
    v = np.asarray(v, dtype=float)
    return (stribeck(v, params) * np.sign(v) + params.sigma2 * v) * u_p


def damping_margin(v, params: LuGreParams) -> np.ndarray:
    """Per-joint slack of the condition keeping the dissipation matrix PSD.

    The 2x2 joint block [[(s1+s2)u_p, -s1 u_p b/2], [-s1 u_p b/2, b]] with
    b = |v|/(u_p rho) is PSD iff s1 + s2 - s1^2 |v| / (4 rho) >= 0.
    """
    v = np.asarray(v, dtype=float)
    s1 = params.sigma1
    return s1 + params.sigma2 - s1 * s1 * np.abs(v) / (4.0 * stribeck(v, params))


def damping_condition(v, params: LuGreParams) -> np.ndarray:
    return damping_margin(v, params) >= 0


def damping_condition_all(v, params: LuGreParams) -> bool:
    return bool(np.all(damping_condition(v, params)))


def damping_boundary_speed(params: LuGreParams) -> float:
    """Smallest |v| where the damping condition becomes tight (inf if never)."""
    if params.sigma1 == 0:
        return np.inf

    def slack(s):
        return float(damping_margin(np.array([s]), params)[0])

    hi = 4.0 * params.mu_s * (params.sigma1 + params.sigma2) / params.sigma1**2
    return brentq(slack, 0.0, 2.0 * hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def bristle_energy(z, u_p: float, params: LuGreParams) -> float:
    z = np.asarray(z, dtype=float)
    return 0.5 * params.sigma0 * _check_pressure(u_p) * float(z @ z)


def simulate_bristle(
    velocity: Callable[[float], np.ndarray] | np.ndarray,
    params: LuGreParams,
    t_end: float,
    dt: float,
    z0=None,
):
    """Integrate the bristle state alone for an imposed velocity history.

    Returns (t, z, v) sample arrays. ``velocity`` is either a constant vector
    or a callable of time.
    """
    if callable(velocity):
        vfun = velocity
    else:
        const = np.atleast_1d(np.asarray(velocity, dtype=float))
        vfun = lambda t: const  # noqa: E731
    steps = int(round(t_end / dt))
    v0 = np.atleast_1d(vfun(0.0))
    z = np.zeros_like(v0) if z0 is None else np.array(z0, dtype=float)
    ts = np.arange(steps + 1) * dt
    zs = np.empty((steps + 1, z.size))
    vs = np.empty_like(zs)
    zs[0], vs[0] = z, v0
    for k in range(steps):
        t = ts[k]
        v_a, v_b, v_c = vfun(t), vfun(t + 0.5 * dt), vfun(t + dt)
        k1 = bristle_rate(z, v_a, params)
        k2 = bristle_rate(z + 0.5 * dt * k1, v_b, params)
        k3 = bristle_rate(z + 0.5 * dt * k2, v_b, params)
        k4 = bristle_rate(z + dt * k3, v_c, params)
        z = z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        zs[k + 1], vs[k + 1] = z, v_c
    return ts, zs, vs
