import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locoforge.sim.core import (
    ActuationInput, SimState, SimulationDiverged, arm_pd_torque, contact_forces, forward_dynamics,
    forward_kinematics, inverse_dynamics, mass_matrix, mechanical_energy, point_jacobian, step, step_batch,
    wheel_normal_force,
)
from locoforge.sim.model import ARM_BODIES, CHASSIS_BODIES, ModelSpec
from locoforge.task import nominal_state

NOMINAL = np.array([0.0, 0.0, 0.0, 0.5, -1.0, 0.0, -0.3, -1.3, -0.3])
q_strategy = st.lists(st.floats(-3.0, 3.0), min_size=9, max_size=9).map(np.array)


def _on_ground(model, q, depth=0.0):
    q = np.array(q, dtype=float)
    wz = forward_kinematics(model, q).origins[5, 1] - q[1]
    q[1] = model.wheel_radius - wz - depth
    return q


# -- kinematics ---------------------------------------------------------------


def test_straight_chain_zero_pose():
    m = ModelSpec()
    k = forward_kinematics(m, np.zeros(9))
    want = np.array(m.shoulder_offset) + np.array([0.0, sum(m.arm_lengths)])
    assert np.allclose(k.p_ee, want, atol=1e-15)
    assert np.allclose(k.p_ee_world, want, atol=1e-15)
    assert k.R_ee == 0.0


def test_pitch_by_pi_reflects_gripper_through_base(rng):
    m = ModelSpec()
    q = rng.uniform(-1, 1, 9)
    q[2] = 0.0
    flipped = q.copy()
    flipped[2] = math.pi
    a = forward_kinematics(m, q).p_ee_world
    b = forward_kinematics(m, flipped).p_ee_world
    assert np.allclose(a + b, 2 * q[:2], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(q=q_strategy)
def test_centroids_match_recomputation(q):
    m = ModelSpec()
    k = forward_kinematics(m, q)
    t = m.tables
    arm, chassis = list(ARM_BODIES), list(CHASSIS_BODIES)
    # independent: rotate each local com offset by the absolute body angle
    coms = np.array([k.origins[i] + [math.cos(k.angles[i]) * t.com[i, 0] - math.sin(k.angles[i]) * t.com[i, 1],
                                     math.sin(k.angles[i]) * t.com[i, 0] + math.cos(k.angles[i]) * t.com[i, 1]]
                     for i in range(9)])
    ac = sum(t.mass[i] * coms[i] for i in arm) / sum(t.mass[i] for i in arm)
    bc = sum(t.mass[i] * coms[i] for i in chassis) / sum(t.mass[i] for i in chassis)
    assert np.max(np.abs(ac - k.arm_centroid)) < 1e-12
    assert np.max(np.abs(bc - k.base_centroid)) < 1e-12


def test_jacobian_matches_numerical_derivative(rng):
    m = ModelSpec()
    q, qd = rng.uniform(-1, 1, 9), rng.uniform(-1, 1, 9)
    dt = 1e-6
    p0 = forward_kinematics(m, q).p_ee_world
    # central difference along the trajectory q(t) = q + t qd
    p_plus = forward_kinematics(m, q + dt * qd).p_ee_world
    p_minus = forward_kinematics(m, q - dt * qd).p_ee_world
    J = point_jacobian(m, q, 8, p0)
    assert np.max(np.abs((p_plus - p_minus) / (2 * dt) - J @ qd)) < 1e-6


# -- dynamics -----------------------------------------------------------------


def test_suspended_free_fall_acceleration():
    m = ModelSpec(contacts=False)
    st_ = SimState(NOMINAL, np.zeros(9))
    qdd = forward_dynamics(m, st_, np.zeros(9), include_contacts=False)
    assert abs(qdd[1] + 9.81) < 1e-10
    assert np.max(np.abs(np.delete(qdd, 1))) < 1e-10


def test_pendulum_closed_form():
    m = ModelSpec(contacts=False, locked_joints=(0, 1, 2, 3, 4, 5, 7, 8), arm_kp=0.0, arm_kd=0.0)
    ms, L, I = (np.asarray(v) for v in (m.arm_masses, m.arm_lengths, m.arm_inertias))
    d = np.cumsum(L) - L / 2
    k = m.gravity * np.sum(ms * d) / np.sum(I + ms * d ** 2)
    for qa in (-2.0, -0.4, 0.0, 0.9, 3.0):
        q = np.zeros(9)
        q[2], q[6] = math.pi, qa
        qdd = forward_dynamics(m, SimState(q, np.zeros(9)), np.zeros(9), include_contacts=False)
        assert abs(qdd[6] + k * math.sin(qa)) < 1e-9
        assert np.all(np.delete(qdd, 6) == 0.0)


@settings(max_examples=40, deadline=None)
@given(q=q_strategy)
def test_mass_matrix_symmetric_positive_definite(q):
    M = mass_matrix(ModelSpec(), q)
    assert np.max(np.abs(M - M.T)) < 1e-12
    assert np.min(np.linalg.eigvalsh(M)) > 0


@settings(max_examples=20, deadline=None)
@given(q=q_strategy)
def test_crba_matches_rnea_columns(q):
    m = ModelSpec()
    M = mass_matrix(m, q)
    cols = np.column_stack([inverse_dynamics(m, q, np.zeros(9), e, gravity=0.0) for e in np.eye(9)])
    assert np.max(np.abs(M - cols)) < 1e-10


def test_forward_dynamics_inverts_inverse_dynamics(rng):
    m = ModelSpec(contacts=False)
    q, qd, qdd = rng.uniform(-1, 1, 9), rng.uniform(-1, 1, 9), rng.uniform(-1, 1, 9)
    tau = inverse_dynamics(m, q, qd, qdd)
    got = forward_dynamics(m, SimState(q, qd), tau, include_contacts=False)
    assert np.max(np.abs(got - qdd)) < 1e-9


# -- contacts -----------------------------------------------------------------


def test_no_contact_when_lifted():
    m = ModelSpec()
    q = _on_ground(m, NOMINAL, depth=-0.5)
    s = SimState(q, np.zeros(9))
    gen, lf = contact_forces(m, s)
    assert np.all(gen == 0) and np.all(lf == 0) and np.all(s.link_forces == 0)


def test_penalty_law_one_millimetre():
    m = ModelSpec(contact_stiffness=1e5, contact_damping=0.0)
    q = _on_ground(m, NOMINAL, depth=1e-3)
    assert abs(wheel_normal_force(m, SimState(q, np.zeros(9))) - 100.0) < 1e-9


@settings(max_examples=50, deadline=None)
@given(depth=st.floats(-0.01, 0.02), rate=st.floats(-5.0, 5.0))
def test_normal_force_never_negative(depth, rate):
    m = ModelSpec()
    q = _on_ground(m, NOMINAL, depth=depth)
    qd = np.zeros(9)
    qd[1] = rate
    assert wheel_normal_force(m, SimState(q, qd)) >= 0.0


def test_arm_link_touching_ground_records_force():
    m = ModelSpec()
    q = _on_ground(m, NOMINAL)
    q[6:9] = [3.0, 0.0, 0.0]  # arm swung back and down past the wheel
    k = forward_kinematics(m, q)
    assert k.p_ee_world[1] < 0.0
    _, lf = contact_forces(m, SimState(q, np.zeros(9)))
    assert np.any(np.linalg.norm(lf, axis=1) > 0)


def test_slip_decays_under_friction():
    m = ModelSpec()
    q = _on_ground(m, NOMINAL, depth=0.002)
    qd = np.zeros(9)
    qd[0] = 0.5  # sliding without wheel spin
    s = SimState(q, qd)

    def slip(state):
        k = forward_kinematics(m, state.q)
        contact = k.origins[5] - [0.0, m.wheel_radius]
        return abs((point_jacobian(m, state.q, 5, contact) @ state.qdot)[0])

    first = slip(s)
    inp = ActuationInput(np.zeros(3), q[6:9])
    for _ in range(30):
        s = step(m, s, inp, 1e-3)
    assert slip(s) < 0.5 * first


# -- arm PD -------------------------------------------------------------------


def test_pd_examples():
    m = ModelSpec(arm_kp=50.0, arm_kd=1.0)
    assert np.all(arm_pd_torque([0.1, 0.2, 0.3], [0.1, 0.2, 0.3], np.zeros(3), m) == 0)
    tau = arm_pd_torque([0.1, 0.0, 0.0], [0.0, 0.0, 0.0], [0.2, 0.0, 0.0], m)
    assert abs(tau[0] - 4.8) < 1e-12
    sat = arm_pd_torque([3.0, -3.0, 0.0], np.zeros(3), np.zeros(3), m)
    assert sat[0] == m.torque_limits[3] and sat[1] == -m.torque_limits[4]


# -- stepping -----------------------------------------------------------------


def test_free_fall_drop():
    m = ModelSpec(contacts=False)
    s = SimState(NOMINAL, np.zeros(9))
    inp = ActuationInput(np.zeros(3), NOMINAL[6:9])
    for _ in range(100):
        s = step(m, s, inp, 1e-3)
    dz = s.q[1] - NOMINAL[1]
    # semi-implicit Euler: dz = -g dt^2 N(N+1)/2, i.e. exactly 1.0100 x the continuous drop
    assert abs(dz - (-9.81 * 1e-6 * 5050)) < 1e-12
    assert abs(dz + 0.04905) / 0.04905 <= 0.01 + 1e-9
    assert abs(s.time - 0.1) < 1e-12


def _pendulum_energy_error(dt, T):
    m = ModelSpec(contacts=False, locked_joints=(0, 1, 2, 3, 4, 5, 7, 8), arm_kp=0.0, arm_kd=0.0)
    q = np.zeros(9)
    q[2], q[6] = math.pi, 1.0
    s = SimState(q, np.zeros(9))
    e0 = mechanical_energy(m, s.q, s.qdot)
    inp = ActuationInput(np.zeros(3), np.zeros(3))
    worst = 0.0
    for _ in range(int(round(T / dt))):
        s = step(m, s, inp, dt)
        worst = max(worst, abs(mechanical_energy(m, s.q, s.qdot) - e0))
    return worst, abs(e0)


def test_pendulum_energy_drift_small():
    err, e0 = _pendulum_energy_error(1e-3, 10.0)
    assert err / e0 < 0.005


def test_energy_drift_halves_with_dt():
    a, _ = _pendulum_energy_error(2e-3, 4.0)
    b, _ = _pendulum_energy_error(1e-3, 4.0)
    assert b <= 0.5 * a


def test_step_determinism_and_records():
    m = ModelSpec()
    s = nominal_state(m)
    inp = ActuationInput([1.0, -2.0, 0.5], [-0.2, -1.2, -0.4])
    a, b = step(m, s, inp, 1e-3), step(m, s, inp, 1e-3)
    assert np.array_equal(a.q, b.q) and np.array_equal(a.qdot, b.qdot)
    assert np.array_equal(a.applied_torques[:3], [1.0, -2.0, 0.5])
    assert a.link_forces.shape == (3, 2)


def test_step_saturates_leg_torques():
    m = ModelSpec()
    s = step(m, nominal_state(m), ActuationInput([500.0, -500.0, 500.0], NOMINAL[6:9]), 1e-3)
    assert np.array_equal(s.applied_torques[:3], [60.0, -60.0, 20.0])


@pytest.mark.parametrize("dt", [0.0, -1e-3, 0.02])
def test_step_rejects_bad_dt(dt):
    m = ModelSpec()
    with pytest.raises(ValueError):
        step(m, nominal_state(m), ActuationInput(np.zeros(3), NOMINAL[6:9]), dt)


def test_step_flags_divergence():
    m = ModelSpec()
    s = SimState(np.full(9, np.nan), np.zeros(9))
    with pytest.raises(SimulationDiverged):
        step(m, s, ActuationInput(np.zeros(3), np.zeros(3)), 1e-3)


def test_batch_step_matches_single_and_is_thread_independent(rng):
    m = ModelSpec()
    n = 6
    Q = np.tile(nominal_state(m).q, (n, 1)) + 0.01 * rng.standard_normal((n, 9))
    QD = 0.1 * rng.standard_normal((n, 9))
    leg = rng.uniform(-5, 5, (n, 3))
    arm = Q[:, 6:9] + 0.1
    Q1, QD1, Q2, QD2 = Q.copy(), QD.copy(), Q.copy(), QD.copy()
    step_batch(m, Q1, QD1, leg, arm, 1e-3, 5, threads=1)
    step_batch(m, Q2, QD2, leg, arm, 1e-3, 5, threads=3)
    assert np.array_equal(Q1, Q2) and np.array_equal(QD1, QD2)
    s = SimState(Q[2], QD[2])
    for _ in range(5):
        s = step(m, s, ActuationInput(leg[2], arm[2]), 1e-3)
    assert np.max(np.abs(s.q - Q1[2])) < 1e-12


def test_model_validation():
    with pytest.raises(ValueError, match="base_mass"):
        ModelSpec(base_mass=0.0)
    with pytest.raises(ValueError, match="q_lower"):
        ModelSpec(q_lower=(3.0, -2.6, -1.6, -2.6, -1.8))
