import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import rk4

from ljsim import (FullState, InputProfile, LuGreParams, NumericalInstabilityError, RobotParams, RobotState,
                   lugre, model, simulate, vector_field)
from ljsim.interconnect import (block_vector_field, dissipation_power, energy_audit, passivity_audit,
                                passivity_check, ph_matrices, preflight, read_csv, step, total_hamiltonian)

ROBOT, FRIC = RobotParams(), LuGreParams()
ZU, ZT = np.zeros(2), np.zeros(3)

states = st.tuples(
    arrays(float, 3, elements=st.floats(-1.5, 1.5)),
    arrays(float, 3, elements=st.floats(-5e-3, 5e-3)),
    arrays(float, 3, elements=st.floats(-0.125, 0.125)),
).map(lambda t: np.concatenate(t))


def test_full_state_roundtrip_and_validation():
    chi = FullState(np.arange(3.0), np.ones(3), -np.ones(3))
    assert chi.n == 3
    back = FullState.from_array(chi.as_array())
    np.testing.assert_array_equal(back.as_array(), chi.as_array())
    with pytest.raises(ValueError):
        FullState(np.zeros(3), np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        FullState(np.array([np.inf, 0, 0]), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        FullState.from_array(np.zeros(7))


def test_input_profile_interpolation():
    prof = InputProfile.build(
        3, 2, tension=[(0.0, [0.0, 0.0]), (2.0, [4.0, 2.0])], pressure=[(0.0, 0.0), (1.0, 3e4)],
        tau_ext=[(0.0, ZT), (0.5, [0.1, 0.0, 0.0])],
    )
    np.testing.assert_allclose(prof.tension(1.0), [2.0, 1.0])
    np.testing.assert_allclose(prof.tension(5.0), [4.0, 2.0])
    assert prof.pressure(0.999) == 0.0 and prof.pressure(1.0) == 3e4
    np.testing.assert_array_equal(prof.tau_ext(0.5), [0.1, 0.0, 0.0])
    assert prof.pressure_jumps(0.0, 2.0) == [(1.0, 0.0, 3e4)]
    assert prof.pressure_jumps(1.0, 2.0) == []


def test_input_profile_rules(caplog):
    with caplog.at_level(logging.WARNING):
        prof = InputProfile.build(3, 2, tension=[(0.0, [-1.0, 2.0])])
    assert "clamped" in caplog.text
    np.testing.assert_array_equal(prof.tension(0.0), [0.0, 2.0])
    with pytest.raises(ValueError):
        InputProfile.build(3, 2, pressure=[(0.0, -5.0)])
    with pytest.raises(ValueError):
        InputProfile.build(3, 2, pressure=[(1.0, 0.0), (1.0, 1.0)])


def test_vector_field_reduces_to_jamming_free():
    q, p = np.array([0.3, -0.2, 0.5]), np.array([1e-3, 2e-3, -1e-3])
    f = vector_field(FullState(q, p, ZT), ZU, 0.0, ZT, ROBOT, FRIC)
    dq, v = model.grad_hamiltonian(RobotState(q, p), ROBOT)
    np.testing.assert_array_equal(f[:3], v)
    np.testing.assert_array_equal(f[3:6], -dq)


def test_vector_field_equilibrium_with_locked_bristle():
    q_a = np.array([0.3, 0.2, -0.1])
    z_a = -model.grad_potential(q_a, ROBOT) / (FRIC.sigma0 * 3e4)
    assert np.linalg.norm(vector_field(FullState(q_a, ZT, z_a), ZU, 3e4, ZT, ROBOT, FRIC)) < 1e-12


@given(states, st.floats(1.0, 1e5), arrays(float, 2, elements=st.floats(0, 40)),
       arrays(float, 3, elements=st.floats(-0.1, 0.1)))
def test_block_form_matches_composed_form(chi, u_p, u, tau):
    a = vector_field(chi, u, u_p, tau, ROBOT, FRIC)
    b = block_vector_field(chi, u, u_p, tau, ROBOT, FRIC)
    assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(a) + 1e-14


def test_block_form_bulk_agreement():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        chi = np.concatenate([rng.uniform(-1.5, 1.5, 3), rng.normal(0, 2e-3, 3), rng.uniform(-0.12, 0.12, 3)])
        u, tau, u_p = rng.uniform(0, 40, 2), rng.normal(0, 0.05, 3), rng.uniform(1, 1e5)
        a = vector_field(chi, u, u_p, tau, ROBOT, FRIC)
        worst = max(worst, np.linalg.norm(a - block_vector_field(chi, u, u_p, tau, ROBOT, FRIC)) / np.linalg.norm(a))
    assert worst < 1e-10


def test_ph_matrices_structure():
    chi = np.concatenate([[0.2, -0.1, 0.4], [1e-3, -2e-3, 5e-4], [0.01, 0.05, -0.02]])
    j, r = ph_matrices(chi, 2e4, ROBOT, FRIC)
    np.testing.assert_allclose(j, -j.T, atol=0)
    np.testing.assert_allclose(r, r.T, atol=0)
    assert np.all(r[:3] == 0) and np.all(r[:, :3] == 0)


@given(states, st.floats(1.0, 1e5), st.floats(0.1, 100.0))
def test_dissipation_psd_iff_damping_condition(chi, u_p, speed_scale):
    chi = chi.copy()
    chi[3:6] *= speed_scale
    _, r = ph_matrices(chi, u_p, ROBOT, FRIC)
    v = model.velocity(RobotState(chi[:3], chi[3:6]), ROBOT)
    margin = lugre.damping_margin(v, FRIC)
    lam = np.linalg.eigvalsh(r).min()
    scale = np.abs(r).max()
    if np.all(margin > 1e-9 * (FRIC.sigma1 + FRIC.sigma2)):
        assert lam >= -1e-12 * scale
    if np.any(margin < -1e-6 * (FRIC.sigma1 + FRIC.sigma2)):
        assert lam < 0


def test_dissipation_power_matches_quadratic_form():
    rng = np.random.default_rng(3)
    for _ in range(50):
        chi = np.concatenate([rng.uniform(-1, 1, 3), rng.normal(0, 2e-3, 3), rng.uniform(-0.1, 0.1, 3)])
        u_p = rng.uniform(1, 1e5)
        _, r = ph_matrices(chi, u_p, ROBOT, FRIC)
        from ljsim.interconnect import grad_total_hamiltonian
        g = grad_total_hamiltonian(chi, u_p, ROBOT, FRIC)
        got = dissipation_power(chi[:3], chi[3:6], chi[6:], u_p, ROBOT, FRIC)
        assert got == pytest.approx(g @ r @ g, rel=1e-10)


def test_viscous_only_dissipation():
    q, p = np.array([[0.1, 0.2, 0.3]]), np.array([[1e-3, -1e-3, 2e-3]])
    v = model.velocity(RobotState(q[0], p[0]), ROBOT)
    got = dissipation_power(q, p, np.zeros((1, 3)), np.array([2e4]), ROBOT, FRIC)[0]
    assert got == pytest.approx((FRIC.sigma1 + FRIC.sigma2) * 2e4 * v @ v, rel=1e-12)


def test_total_hamiltonian_examples():
    q, p, z = np.array([0.1, 0.2, 0.3]), np.array([1e-3, 0, 0]), np.array([0.01, 0.02, 0.0])
    h = model.hamiltonian(RobotState(q, p), ROBOT)
    assert total_hamiltonian(FullState(q, p, ZT), 3e4, ROBOT, FRIC) == h
    assert total_hamiltonian(FullState.zeros(3), 3e4, ROBOT, FRIC) == 0.0
    assert total_hamiltonian(FullState(q, p, z), 3e4, ROBOT, FRIC) == h + lugre.bristle_energy(z, 3e4, FRIC)


def test_step_at_equilibrium_is_identity():
    prof = InputProfile.constant(3, 2, u_p=3e4)
    assert np.all(step(np.zeros(9), 0.0, 1e-3, prof, ROBOT, FRIC) == 0)


def test_step_time_reversal():
    """Momentum flip, step, flip back retraces a conservative step to O(dt^5)."""
    prof = InputProfile.constant(3, 2)
    chi0 = np.concatenate([[0.3, -0.2, 0.1], [1e-3, 2e-3, -1e-3], ZT])
    errs = []
    for dt in (4e-4, 2e-4):
        x = step(chi0, 0.0, dt, prof, ROBOT, FRIC)
        x[3:6] *= -1
        x = step(x, 0.0, dt, prof, ROBOT, FRIC)
        x[3:6] *= -1
        errs.append(np.linalg.norm(x[:6] - chi0[:6]))
    assert errs[1] < errs[0] / 20  # fifth order would give 32


def test_global_error_ratio_sixteen():
    prof = InputProfile.constant(3, 2)
    chi0 = FullState(np.array([0.3, -0.2, 0.25]), ZT, ZT)
    ref = simulate(chi0, prof, (0.0, 0.1), 1e-4 / 8, ROBOT, FRIC).states[-1, :6]
    e1 = np.linalg.norm(simulate(chi0, prof, (0.0, 0.1), 1e-4, ROBOT, FRIC).states[-1, :6] - ref)
    e2 = np.linalg.norm(simulate(chi0, prof, (0.0, 0.1), 5e-5, ROBOT, FRIC).states[-1, :6] - ref)
    assert 12 < e1 / e2 < 20


def test_backends_agree():
    prof = InputProfile.build(3, 2, tension=[(0.0, ZU), (0.1, [30.0, 0.0])], pressure=[(0.0, 0.0), (0.05, 2e4)],
                              tau_ext=[(0.0, ZT), (0.02, [0.01, -0.02, 0.0])])
    chi0 = FullState(np.array([0.1, 0.0, -0.1]), ZT, np.array([0.01, 0.0, 0.0]))
    a = simulate(chi0, prof, (0.0, 0.1), 1e-4, ROBOT, FRIC, backend="compiled")
    b = simulate(chi0, prof, (0.0, 0.1), 1e-4, ROBOT, FRIC, backend="numpy")
    np.testing.assert_allclose(a.states, b.states, rtol=1e-12, atol=1e-15)
    with pytest.raises(ValueError):
        simulate(chi0, prof, (0.0, 0.1), 1e-4, ROBOT, FRIC, backend="nope")


def test_numpy_step_matches_independent_rk4():
    prof = InputProfile.constant(3, 2, u=np.array([5.0, 0.0]), u_p=1e4)
    chi0 = np.concatenate([[0.1, 0.2, 0.0], ZT, ZT])
    ref = rk4(lambda x: vector_field(x, np.array([5.0, 0.0]), 1e4, ZT, ROBOT, FRIC), chi0, 1e-4, 50)
    traj = simulate(chi0, prof, (0.0, 5e-3), 1e-4, ROBOT, FRIC, backend="numpy")
    np.testing.assert_allclose(traj.states, ref, rtol=1e-13, atol=1e-16)


def test_simulate_origin_stays_put():
    traj = simulate(FullState.zeros(3), InputProfile.constant(3, 2), (0.0, 0.5), 1e-4, ROBOT, FRIC)
    assert np.all(traj.states == 0)
    assert traj.t.size == 5001 and traj.t[-1] == pytest.approx(0.5)


def test_conservative_energy_and_audit():
    chi0 = FullState(np.array([0.2, 0.1, -0.3]), np.array([1e-3, 0.0, 2e-3]), ZT)
    traj = simulate(chi0, InputProfile.constant(3, 2), (0.0, 1.0), 1e-4, ROBOT, FRIC)
    assert np.max(np.abs(traj.H - traj.H[0])) < 1e-8 * traj.H[0]
    audit = energy_audit(traj)
    assert audit.max_residual < 1e-8 * traj.H[0]
    assert np.all(audit.dissipated == 0)


def test_dissipative_energy_non_increasing():
    chi0 = FullState(np.array([0.4, 0.1, -0.3]), np.array([1e-3, 0.0, 2e-3]), ZT)
    traj = simulate(chi0, InputProfile.constant(3, 2, u_p=2e4), (0.0, 1.0), 1e-4, ROBOT, FRIC)
    assert lugre.damping_condition_all(traj.v, FRIC)
    assert np.all(np.diff(traj.H) <= 1e-12 * traj.H[0])
    assert traj.H[-1] < traj.H[0]
    audit = energy_audit(traj)
    assert audit.max_residual <= audit.quadrature_error[-1] + 1e-9 * traj.H[0]


def test_energy_audit_with_inputs():
    prof = InputProfile.build(3, 2, tension=[(0.0, ZU), (0.5, [30.0, 0.0])], pressure=[(0.0, 3e4)],
                              tau_ext=[(0.0, [0.02, 0.0, -0.01])])
    traj = simulate(FullState.zeros(3), prof, (0.0, 1.0), 1e-4, ROBOT, FRIC)
    audit = energy_audit(traj, prof)
    assert audit.max_residual <= 2 * audit.quadrature_error[-1] + 1e-9
    assert audit.supplied[-1] > 0


def test_pressure_jump_event_and_audit_rejection():
    prof = InputProfile.build(3, 2, tension=[(0.0, [20.0, 0.0])], pressure=[(0.0, 0.0), (0.2, 3e4)])
    traj = simulate(FullState.zeros(3), prof, (0.0, 0.4), 1e-4, ROBOT, FRIC)
    (event,) = traj.events
    k = int(round(0.2 / 1e-4))
    assert event["t"] == pytest.approx(0.2)
    assert event["energy_jump"] == pytest.approx(0.5 * FRIC.sigma0 * 3e4 * traj.z[k] @ traj.z[k], rel=1e-12)
    assert traj.Hz[k] == pytest.approx(event["energy_jump"], rel=1e-12)
    with pytest.raises(ValueError, match="pressure jump"):
        energy_audit(traj)
    audit = energy_audit(traj, window=(0.2, 0.4))
    assert audit.max_residual <= audit.quadrature_error[-1]


def test_passivity_trivial_windows():
    t = np.linspace(0, 1, 101)
    audit = passivity_check(t, np.zeros((101, 3)), np.full((101, 3), 0.05), 3e4, FRIC)
    assert audit.supply == 0 and audit.storage_delta == 0 and audit.satisfied
    chi0 = FullState(np.array([0.2, 0.0, 0.0]), ZT, np.array([0.05, 0.0, 0.0]))
    traj = simulate(chi0, InputProfile.constant(3, 2), (0.0, 0.3), 1e-4, ROBOT, FRIC)
    audit = passivity_audit(traj)
    assert audit.supply == 0 and audit.storage_delta == 0 and audit.satisfied


def test_passivity_random_window():
    rng = np.random.default_rng(4)
    amps = rng.uniform(0.1, 5.0, 3)
    _, zs, vs = lugre.simulate_bristle(lambda s: amps * np.sin(3 * s + np.arange(3)), FRIC, 1.0, 1e-4)
    audit = passivity_check(np.linspace(0, 1, 10001), vs, zs, 4e4, FRIC)
    assert audit.damping_ok and audit.satisfied and audit.supply > audit.storage_delta


def test_instability_is_reported():
    chi0 = FullState(np.array([1.0, -1.0, 1.0]), ZT, ZT)
    with pytest.raises(NumericalInstabilityError) as info:
        simulate(chi0, InputProfile.constant(3, 2), (0.0, 5.0), 0.05, ROBOT, FRIC)
    assert info.value.time is not None and info.value.time > 0


def test_settle_detection_and_diagnostics():
    chi0 = FullState(np.array([0.1, 0.0, 0.0]), ZT, ZT)
    traj = simulate(chi0, InputProfile.constant(3, 2, u_p=3e4), (0.0, 20.0), 1e-4, ROBOT, FRIC,
                    settle_tol=1e-6, settle_time=0.2)
    assert traj.settled and traj.t[-1] < 20.0
    prof = InputProfile.constant(3, 2, u=np.array([200.0, 0.0]))
    traj = simulate(FullState.zeros(3), prof, (0.0, 0.5), 1e-4, ROBOT, FRIC)
    assert any("left |q_i| < pi" in d for d in traj.diagnostics)


def test_preflight_warns_on_coarse_step(caplog):
    with caplog.at_level(logging.WARNING):
        notes = preflight(1e-1, ROBOT, FRIC, 8e4)
    assert notes and "dt" in caplog.text
    assert preflight(1e-4, ROBOT, FRIC, 8e4) == []


def test_bad_simulate_arguments():
    prof = InputProfile.constant(3, 2)
    with pytest.raises(ValueError):
        simulate(np.zeros(9), prof, (0.0, 1.0), 0.0, ROBOT, FRIC)
    with pytest.raises(ValueError):
        simulate(np.zeros(9), prof, (1.0, 0.0), 1e-4, ROBOT, FRIC)
    with pytest.raises(ValueError):
        simulate(np.zeros(6), prof, (0.0, 1.0), 1e-4, ROBOT, FRIC)
    with pytest.raises(ValueError):
        simulate(np.zeros(9), InputProfile.constant(2, 2), (0.0, 1.0), 1e-4, ROBOT, FRIC)
    with pytest.raises(ValueError):
        vector_field(np.zeros(9), np.array([-1.0, 0.0]), 0.0, ZT, ROBOT, FRIC)
    with pytest.raises(ValueError):
        vector_field(np.zeros(9), ZU, -1.0, ZT, ROBOT, FRIC)
    with pytest.raises(ValueError):
        vector_field(np.zeros(9), np.zeros(3), 0.0, ZT, ROBOT, FRIC)
    with pytest.raises(ValueError):
        vector_field(np.zeros(6), np.zeros(2), 0.0, np.zeros(2), ROBOT, FRIC)


def test_csv_roundtrip(tmp_path):
    prof = InputProfile.build(3, 2, tension=[(0.0, ZU), (0.05, [30.0, 0.0])], pressure=[(0.0, 2e4)])
    traj = simulate(FullState.zeros(3), prof, (0.0, 0.05), 1e-4, ROBOT, FRIC)
    path = traj.to_csv(tmp_path / "t.csv")
    header, data = read_csv(path)
    assert header == ("t q1 q2 q3 p1 p2 p3 z1 z2 z3 H Hz tauf1 tauf2 tauf3 res_p res_grad").split()
    np.testing.assert_array_equal(data, traj.table())
    q, p, z = data[:, 1:4], data[:, 4:7], data[:, 7:10]
    for row, (qi, pi, zi) in enumerate(zip(q, p, z)):
        h = total_hamiltonian(FullState(qi, pi, zi), 2e4, ROBOT, FRIC)
        assert data[row, 10] == pytest.approx(h, rel=1e-12, abs=1e-15)
        v = model.velocity(RobotState(qi, pi), ROBOT)
        tau_f = lugre.friction_torque(zi, lugre.bristle_rate(zi, v, FRIC), v, 2e4, FRIC)
        np.testing.assert_allclose(data[row, 12:15], tau_f, rtol=1e-10, atol=1e-15)
