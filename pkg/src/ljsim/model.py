"""Jamming-free rigid-link approximation of the continuum robot.

The robot is a planar serial chain of ``n`` uniform rods with relative joint
angles ``q`` and generalized momenta ``p``. Energies and gradients are written
in closed form so the vector field stays cheap enough for explicit RK4.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class RobotParams:
    n: int = 3
    m: int = 2
    link_length: float = 0.1
    link_mass: float = 0.2
    alpha1: float = 0.5
    alpha2: float = 1.0
    u0: float = 0.0
    tendon_moment_arm: float = 0.02
    # optional n x m routing matrix overriding the antagonistic default
    routing: tuple[tuple[float, ...], ...] | None = field(default=None, compare=True)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be an integer >= 1, got {self.n}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be an integer >= 1, got {self.m}")
        if not self.link_length > 0:
            raise ValueError("link_length must be > 0")
        if not self.link_mass > 0:
            raise ValueError("link_mass must be > 0")
        if not self.alpha1 >= 0:
            raise ValueError("alpha1 must be >= 0")
        if not self.alpha2 > 0:
            raise ValueError("alpha2 must be > 0 (elastic coefficient)")
        if self.routing is not None:
            g = np.asarray(self.routing, dtype=float)
            if g.shape != (self.n, self.m):
                raise ValueError(f"routing must be {self.n}x{self.m}, got {g.shape}")


@dataclass(frozen=True)
class RobotState:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if self.q.shape != self.p.shape or self.q.ndim != 1:
            raise ValueError("q and p must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p))):
            raise ValueError("state has non-finite entries")


@lru_cache(maxsize=64)
def _chain_constants(n: int, length: float, mass: float):
    """Configuration-independent pieces of M(q) = T^T (A o C(Tq) + diag(I)) T.

    Row a of the lower-triangular ones matrix T maps relative joint angles to
    the absolute angle of link a. A[a, b] sums m_k c_ka c_kb over links k,
    where c_ka is the lever of segment a in the COM position of link k.
    """
    c = np.zeros((n, n))
    for k in range(n):
        c[k, :k] = length
        c[k, k] = length / 2.0
    a = mass * c.T @ c
    inertia = np.full(n, mass * length**2 / 12.0)
    tri = np.tril(np.ones((n, n)))
    a.setflags(write=False)
    tri.setflags(write=False)
    return a, np.diag(inertia), tri


def inertia_matrix(q, params: RobotParams) -> np.ndarray:
    """Chain inertia M(q); a stack of configurations (..., n) gives (..., n, n)."""
    q = np.asarray(q, dtype=float)
    a, rot, tri = _chain_constants(params.n, params.link_length, params.link_mass)
    theta = np.cumsum(q, axis=-1)
    core = a * np.cos(theta[..., :, None] - theta[..., None, :]) + rot
    m = tri.T @ core @ tri
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def kinetic_gradient(q, v, params: RobotParams) -> np.ndarray:
    """Gradient in q of 0.5 p^T M(q)^-1 p, expressed through v = M^-1 p.

    Equals -0.5 v^T (dM/dq_l) v. With absolute angular rates w = T v the
    derivative collapses to a reverse cumulative sum of
    r_a = w_a * sum_b A_ab sin(theta_a - theta_b) w_b.
    """
    a, _, _ = _chain_constants(params.n, params.link_length, params.link_mass)
    theta = np.cumsum(np.asarray(q, dtype=float), axis=-1)
    w = np.cumsum(np.asarray(v, dtype=float), axis=-1)
    sines = a * np.sin(theta[..., :, None] - theta[..., None, :])
    r = w * (sines @ w[..., None])[..., 0]
    return np.flip(np.cumsum(np.flip(r, -1), axis=-1), -1)


def potential_energy(q, params: RobotParams):
    q = np.asarray(q, dtype=float)
    gravity = params.alpha1 * (1.0 - np.cos(np.sum(q, axis=-1)))
    elastic = 0.5 * params.alpha2 * np.sum(q * q, axis=-1) + params.u0
    energy = gravity + elastic
    return float(energy) if q.ndim == 1 else energy


def grad_potential(q, params: RobotParams) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return params.alpha1 * np.sin(np.sum(q, axis=-1, keepdims=True)) + params.alpha2 * q


def hessian_potential(q, params: RobotParams) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = q.size
    return params.alpha1 * np.cos(np.sum(q)) * np.ones((n, n)) + params.alpha2 * np.eye(n)


def velocity(state: RobotState, params: RobotParams) -> np.ndarray:
    """Passive output v = M(q)^-1 p, via a linear solve."""
    try:
        return np.linalg.solve(inertia_matrix(state.q, params), state.p)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("inertia matrix is singular; check RobotParams") from exc


def hamiltonian(state: RobotState, params: RobotParams) -> float:
    v = velocity(state, params)
    return 0.5 * float(state.p @ v) + potential_energy(state.q, params)


def grad_hamiltonian(state: RobotState, params: RobotParams) -> tuple[np.ndarray, np.ndarray]:
    v = velocity(state, params)
    dq = grad_potential(state.q, params) + kinetic_gradient(state.q, v, params)
    return dq, v


def input_matrix(q, params: RobotParams) -> np.ndarray:
    """Tendon routing G(q); constant antagonistic pair unless overridden."""
    if params.routing is not None:
        return np.array(params.routing, dtype=float)
    if params.m != 2:
        raise ValueError("default routing is the antagonistic pair (m=2); pass routing for other m")
    r = params.tendon_moment_arm
    ones = np.ones(params.n)
    return r * np.column_stack([ones, -ones])


def forward_kinematics(q, params: RobotParams) -> np.ndarray:
    """Planar tip position. The straight chain q = 0 points along +y."""
    theta = np.cumsum(np.asarray(q, dtype=float))
    ell = params.link_length
    return np.array([-ell * np.sum(np.sin(theta)), ell * np.sum(np.cos(theta))])


def tip_jacobian(q, params: RobotParams) -> np.ndarray:
    """2 x n Jacobian of forward_kinematics."""
    theta = np.cumsum(np.asarray(q, dtype=float))
    ell = params.link_length
    # d tip / d q_i sums over links a >= i
    dx = -ell * np.cumsum(np.cos(theta)[::-1])[::-1]
    dy = -ell * np.cumsum(np.sin(theta)[::-1])[::-1]
    return np.vstack([dx, dy])


def in_configuration_set(q, limit: float = np.pi) -> bool:
    return bool(np.all(np.abs(np.asarray(q)) < limit))
