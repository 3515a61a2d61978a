"""Compiled RK4 loop for the full (q, p, z) model.

Mirrors ``interconnect.vector_field`` with scalar loops so numba can compile
it. Agreement with the numpy path is covered by the test suite.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _rhs(chi, gen_force, u_p, tau, n, a_mat, rot, alpha1, alpha2, fric, out):
    mu_s, mu_c, v_s, s0, s1, s2, s3 = fric[0], fric[1], fric[2], fric[3], fric[4], fric[5], fric[6]
    q = chi[:n]
    p = chi[n:2 * n]
    z = chi[2 * n:]

    theta = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc += q[i]
        theta[i] = acc
    qsum = acc

    core = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            core[i, j] = a_mat[i, j] * np.cos(theta[i] - theta[j])
        core[i, i] += rot[i]
    # M[i, j] = sum_{a >= i, b >= j} core[a, b]
    m = np.empty((n, n))
    for i in range(n - 1, -1, -1):
        for j in range(n - 1, -1, -1):
            s = core[i, j]
            if i + 1 < n:
                s += m[i + 1, j]
            if j + 1 < n:
                s += m[i, j + 1]
            if i + 1 < n and j + 1 < n:
                s -= m[i + 1, j + 1]
            m[i, j] = s

    # Cholesky solve M v = p
    low = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = m[i, j]
            for k in range(j):
                s -= low[i, k] * low[j, k]
            if i == j:
                low[i, i] = np.sqrt(s)
            else:
                low[i, j] = s / low[j, j]
    y = np.empty(n)
    for i in range(n):
        s = p[i]
        for k in range(i):
            s -= low[i, k] * y[k]
        y[i] = s / low[i, i]
    v = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= low[k, i] * v[k]
        v[i] = s / low[i, i]

    w = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc += v[i]
        w[i] = acc
    r = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += a_mat[i, j] * np.sin(theta[i] - theta[j]) * w[j]
        r[i] = w[i] * s
    kin = np.empty(n)
    acc = 0.0
    for i in range(n - 1, -1, -1):
        acc += r[i]
        kin[i] = acc

    sg = alpha1 * np.sin(qsum)
    for i in range(n):
        av = abs(v[i])
        rho = mu_c + (mu_s - mu_c) * np.exp(-(av / v_s) ** s3)
        zdot = v[i] - s0 * av * z[i] / rho
        tau_f = u_p * (s0 * z[i] + s1 * zdot + s2 * v[i])
        out[i] = v[i]
        out[n + i] = -(sg + alpha2 * q[i] + kin[i]) + gen_force[i] + tau[i] - tau_f
        out[2 * n + i] = zdot
        if i == 0:
            out[3 * n] = abs(v[i])
        elif abs(v[i]) > out[3 * n]:
            out[3 * n] = abs(v[i])


@njit(cache=True)
def rk4_integrate(chi0, dt, steps, gen_force, u_p, tau, n, a_mat, rot, alpha1, alpha2, fric,
                  v_tol, dwell_steps):
    """Integrate ``steps`` RK4 steps.

    gen_force has shape (steps, 3, n): G u at the start, midpoint and end of
    each step. u_p and tau are held over each step. When dwell_steps > 0 the
    loop stops once max|v| < v_tol has held for dwell_steps consecutive steps.
    Returns (states, steps_done, status) with status 1 on a non-finite state.
    """
    dim = 3 * n
    states = np.empty((steps + 1, dim))
    states[0] = chi0
    chi = chi0.copy()
    k1 = np.empty(dim + 1)
    k2 = np.empty(dim + 1)
    k3 = np.empty(dim + 1)
    k4 = np.empty(dim + 1)
    tmp = np.empty(dim)
    quiet = 0
    for k in range(steps):
        _rhs(chi, gen_force[k, 0], u_p[k], tau[k], n, a_mat, rot, alpha1, alpha2, fric, k1)
        if dwell_steps > 0:
            if k1[dim] < v_tol:
                quiet += 1
                if quiet >= dwell_steps:
                    return states, k, 0
            else:
                quiet = 0
        for i in range(dim):
            tmp[i] = chi[i] + 0.5 * dt * k1[i]
        _rhs(tmp, gen_force[k, 1], u_p[k], tau[k], n, a_mat, rot, alpha1, alpha2, fric, k2)
        for i in range(dim):
            tmp[i] = chi[i] + 0.5 * dt * k2[i]
        _rhs(tmp, gen_force[k, 1], u_p[k], tau[k], n, a_mat, rot, alpha1, alpha2, fric, k3)
        for i in range(dim):
            tmp[i] = chi[i] + dt * k3[i]
        _rhs(tmp, gen_force[k, 2], u_p[k], tau[k], n, a_mat, rot, alpha1, alpha2, fric, k4)
        finite = True
        for i in range(dim):
            chi[i] = chi[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not np.isfinite(chi[i]):
                finite = False
        states[k + 1] = chi
        if not finite:
            return states, k + 1, 1
    return states, steps, 0
