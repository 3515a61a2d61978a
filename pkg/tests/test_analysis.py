import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ljsim import ConvergenceError, FullState, InputProfile, LuGreParams, RobotParams, model, simulate, vector_field
from ljsim import analysis
from ljsim.analysis import ProbeSettings, ShapeLockTimings

ROBOT, FRIC = RobotParams(), LuGreParams()
ZU, ZT = np.zeros(2), np.zeros(3)
configs = arrays(float, 3, elements=st.floats(-1.0, 1.0))


def test_locked_bristle_examples():
    assert np.all(analysis.locked_bristle(ZT, 3e4, ROBOT, FRIC) == 0)
    q_a = np.array([0.2, 0.3, -0.1])
    np.testing.assert_allclose(analysis.locked_bristle(q_a, 6e4, ROBOT, FRIC),
                               0.5 * analysis.locked_bristle(q_a, 3e4, ROBOT, FRIC), rtol=1e-15)
    with pytest.raises(ValueError):
        analysis.locked_bristle(q_a, 0.0, ROBOT, FRIC)


@given(configs, st.sampled_from([1e3, 1e4, 3e4, 8e4]))
def test_locked_state_is_equilibrium(q_a, u_p):
    assert analysis.equilibrium_defect(q_a, u_p, ROBOT, FRIC) < 1e-12


def test_opposite_bristle_sign_is_not_equilibrium():
    """Bristles must push back against the spring: z_a = +grad U / (sigma0 u_p) leaves 2 grad U unbalanced."""
    q_a = np.array([0.3, 0.2, 0.1])
    z_wrong = model.grad_potential(q_a, ROBOT) / (FRIC.sigma0 * 3e4)
    f = vector_field(FullState(q_a, ZT, z_wrong), ZU, 3e4, ZT, ROBOT, FRIC)
    np.testing.assert_allclose(f[3:6], -2 * model.grad_potential(q_a, ROBOT), rtol=1e-12)


def test_locked_state_stays_put_in_simulation():
    q_a = np.array([0.3, 0.2, 0.1])
    chi = FullState(q_a, ZT, analysis.locked_bristle(q_a, 3e4, ROBOT, FRIC))
    traj = simulate(chi, InputProfile.constant(3, 2, u_p=3e4), (0.0, 0.5), 1e-4, ROBOT, FRIC)
    assert np.max(np.abs(traj.states - chi.as_array())) < 1e-12


def test_manifold_residual_examples():
    q_a = np.array([0.25, -0.1, 0.3])
    z_a = analysis.locked_bristle(q_a, 3e4, ROBOT, FRIC)
    res_p, res_g = analysis.manifold_residual(FullState(q_a, ZT, z_a), 3e4, ROBOT, FRIC)
    assert res_p == 0 and res_g < 1e-15
    res_p, res_g = analysis.manifold_residual(FullState(q_a, ZT, ZT), 3e4, ROBOT, FRIC)
    assert res_p == 0 and res_g == pytest.approx(np.linalg.norm(model.grad_potential(q_a, ROBOT)))


def test_analytic_stiffness_structure():
    k0 = analysis.analytic_stiffness(0.0, ROBOT, FRIC)
    np.testing.assert_array_equal(k0, 0.5 * np.ones((3, 3)) + np.eye(3))
    k1, k2 = analysis.analytic_stiffness(1e4, ROBOT, FRIC), analysis.analytic_stiffness(5e4, ROBOT, FRIC)
    np.testing.assert_allclose(k2 - k1, FRIC.sigma0 * 4e4 * np.eye(3), rtol=1e-13, atol=1e-12)
    eig = np.linalg.eigvalsh(k2)
    shift = ROBOT.alpha2 + FRIC.sigma0 * 5e4
    np.testing.assert_allclose(eig, [shift, shift, 3 * ROBOT.alpha1 + shift], rtol=1e-13)


@pytest.mark.parametrize("u_p", [0.0, 1e4, 8e4])
def test_hessian_stiffness(u_p):
    ref = analysis.analytic_stiffness(u_p, ROBOT, FRIC)
    for h in (1e-7, 1e-6, 1e-5, 1e-4):
        k = analysis.numeric_stiffness_hessian(u_p, ROBOT, FRIC, h=h)
        np.testing.assert_array_equal(k, k.T)
        assert np.linalg.norm(k - ref) / np.linalg.norm(ref) < 1e-6


def test_probe_linearity_and_force_balance():
    u_p = 3e4
    tau = analysis.probe_torque_for(u_p, ROBOT, FRIC) * np.array([1.0, 0.0, 0.0])
    full = analysis.probe_response(tau, u_p, ROBOT, FRIC)
    half = analysis.probe_response(0.5 * tau, u_p, ROBOT, FRIC)
    dq, dq_half = full.final.q, half.final.q
    assert np.linalg.norm(dq) == pytest.approx(1e-3, rel=0.05)
    assert np.linalg.norm(dq_half) / np.linalg.norm(dq) == pytest.approx(0.5, rel=0.01)
    # at rest: -grad U(q) - sigma0 u_p z + tau_ext = 0
    end = full.final
    balance = -model.grad_potential(end.q, ROBOT) - FRIC.sigma0 * u_p * end.z + tau
    assert np.linalg.norm(balance) < 1e-6 * np.linalg.norm(tau)
    res_p, res_g = analysis.manifold_residual(end, u_p, ROBOT, FRIC)
    assert res_p < 1e-8 and res_g == pytest.approx(np.linalg.norm(tau), rel=1e-5)


def test_probe_requires_pressure_and_reports_non_convergence():
    with pytest.raises(ValueError):
        analysis.probe_response(np.full(3, 1e-2), 0.0, ROBOT, FRIC)
    with pytest.raises(ConvergenceError):
        analysis.probe_response(np.full(3, 1e-2), 3e4, ROBOT, FRIC, ProbeSettings(t_max=0.3))


def test_transverse_stiffness_at_zero_pressure_is_elastic():
    kt = analysis.transverse_stiffness(0.0, 1e-3, ROBOT, FRIC)
    j = model.tip_jacobian(ZT, ROBOT)[0]
    elastic = 1.0 / (j @ np.linalg.solve(model.hessian_potential(ZT, ROBOT), j))
    assert kt == pytest.approx(elastic, rel=1e-3)


def test_transverse_stiffness_increases_with_pressure():
    kts = [analysis.transverse_stiffness(u, 0.01, ROBOT, FRIC) for u in (0.0, 1e4, 4e4, 8e4)]
    assert np.all(np.diff(kts) > 0)
    for u, kt in zip((1e4, 4e4, 8e4), kts[1:]):
        assert kt == pytest.approx(analysis.analytic_transverse_stiffness(u, ROBOT, FRIC), rel=0.01)


def test_linear_fit_edge_cases():
    assert analysis.linear_fit([1.0], [2.0]) == (None, None, None)
    slope, icpt, r2 = analysis.linear_fit([0.0, 1.0], [1.0, 3.0])
    assert (slope, icpt, r2) == (2.0, 1.0, None)
    slope, icpt, r2 = analysis.linear_fit([0.0, 1.0, 2.0], [1.0, 3.0, 5.0])
    assert slope == pytest.approx(2.0) and icpt == pytest.approx(1.0) and r2 == pytest.approx(1.0)


def test_sweep_validation_and_degenerate_fit():
    with pytest.raises(ValueError):
        analysis.pressure_sweep([], ROBOT, FRIC)
    with pytest.raises(ValueError):
        analysis.pressure_sweep([2e4, 1e4], ROBOT, FRIC)
    with pytest.raises(ValueError):
        analysis.pressure_sweep([1e4], ROBOT, FRIC, mode="other")
    rep = analysis.pressure_sweep([2e4], ROBOT, FRIC)
    assert rep.degenerate and rep.r2 is None and rep.slope is None
    assert np.isfinite(rep.k_transverse[0])


def test_sweep_keeps_going_after_a_failed_point():
    rep = analysis.pressure_sweep([0.0, 2e4, 4e4], ROBOT, FRIC, settings=ProbeSettings(t_max=0.3))
    assert set(rep.errors) == {2e4, 4e4}
    assert "ConvergenceError" in rep.errors[2e4]
    assert np.isfinite(rep.k_transverse[0]) and np.isnan(rep.k_transverse[1])
    assert rep.degenerate


def test_sweep_parallel_matches_serial():
    grid = [0.0, 2e4, 5e4, 8e4]
    serial = analysis.pressure_sweep(grid, ROBOT, FRIC, workers=1)
    parallel = analysis.pressure_sweep(grid, ROBOT, FRIC, workers=2)
    np.testing.assert_array_equal(serial.k_transverse, parallel.k_transverse)
    assert serial.slope == parallel.slope and serial.r2 == parallel.r2
    for ks, ka in zip(serial.k_analytic, serial.k_hessian):
        assert np.all(np.linalg.eigvalsh(ks) > 0) and np.all(np.linalg.eigvalsh(ka) > 0)
        np.testing.assert_array_equal(ks, ks.T)


def test_shape_lock_residual_non_increasing_in_pressure():
    rows = analysis.pressure_sweep([1e4, 3e4, 8e4], ROBOT, FRIC, mode="shape-lock")
    assert all(r.converged and r.error is None for r in rows)
    tips = [r.tip_displacement for r in rows]
    assert tips[0] >= tips[1] >= tips[2]


def test_shape_lock_result_details():
    res = analysis.shape_locking_scenario(np.pi / 3, 3e4, ROBOT, FRIC)
    assert len(res.phases) == 4
    p1, p2, p3, p4 = res.phases
    assert np.all(p1.states == 0)
    assert np.sum(p2.q[-1]) == pytest.approx(np.pi / 3, abs=0.02)
    assert p3.u_p[0] == 3e4 and p3.settled
    assert np.all(p4.tension[-1] == 0) and p4.settled
    for a, b in zip(res.phases, res.phases[1:]):
        assert b.t[0] == pytest.approx(a.t[-1])
        np.testing.assert_array_equal(b.states[0][:6], a.states[-1][:6])
    tip = np.linalg.norm(model.forward_kinematics(res.q_end, ROBOT) - model.forward_kinematics(res.q_release, ROBOT))
    assert res.tip_displacement == pytest.approx(tip)
    assert res.residual_displacement == pytest.approx(np.linalg.norm(res.q_end - res.q_release))
    assert res.converged and max(res.manifold_residual) < 1e-6
    # residual trend along the last phase
    assert p4.res_grad[-1] < 1e-6 and p4.res_p[-1] < 1e-6
    assert dict(res.summary_rows())["converged"] == "True"


def test_shape_lock_without_vacuum_springs_back():
    res = analysis.shape_locking_scenario(np.pi / 3, 0.0, ROBOT, FRIC)
    assert not res.converged
    # the frictionless chain swings back through the straight configuration
    assert res.min_bend_after_release < 0.05 * np.pi / 3


def test_shape_lock_phase_two_failure():
    one_way = RobotParams(routing=((0.02, 0.0), (0.02, 0.0), (0.02, 0.0)))
    with pytest.raises(ConvergenceError):
        analysis.shape_locking_scenario(-np.pi / 3, 3e4, one_way, FRIC)
    with pytest.raises(ConvergenceError):
        analysis.shape_locking_scenario(np.pi / 3, 3e4, ROBOT, FRIC, ShapeLockTimings(ramp=0.05, hold=0.05))


def test_attraction_radius_positive():
    q_a = np.full(3, np.pi / 9)
    eps = analysis.attraction_radius(q_a, 3e4, ROBOT, FRIC, q_tol=1e-2, eps_max=0.02, iters=4, t_max=5.0)
    assert 0 < eps <= 0.02


@pytest.mark.parametrize("viscous", [True, False])
def test_linearization_is_stable(viscous):
    for u_p in (1.0, 1e3, 3e4, 1e5):
        a = analysis.linearized_system(u_p, ROBOT, FRIC, viscous=viscous)
        assert np.max(np.linalg.eigvals(a).real) < 0
    a = analysis.linearized_system(0.0, ROBOT, FRIC)
    assert np.max(np.abs(np.linalg.eigvals(a).real)) < 1e-8
