"""Python-facing simulator API over the compiled kernels."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import dynamics as _dyn
from .model import ARM_BODIES, CHASSIS_BODIES, N_DOF, ModelSpec


class SimulationDiverged(FloatingPointError):
    """Raised when a physics step produces a non-finite state."""


@dataclass
class SimState:
    q: np.ndarray
    qdot: np.ndarray
    time: float = 0.0
    link_forces: np.ndarray = field(default_factory=lambda: np.zeros((3, 2)))
    applied_torques: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).copy()
        self.qdot = np.asarray(self.qdot, dtype=np.float64).copy()
        if self.q.shape != (N_DOF,) or self.qdot.shape != (N_DOF,):
            raise ValueError("q and qdot must both have length 9")
        self.link_forces = np.asarray(self.link_forces, dtype=np.float64).reshape(3, 2).copy()
        self.applied_torques = np.asarray(self.applied_torques, dtype=np.float64).copy()

    def copy(self) -> "SimState":
        return SimState(self.q, self.qdot, self.time, self.link_forces, self.applied_torques)


@dataclass
class ActuationInput:
    leg_torques: np.ndarray  # hip, knee, wheel
    arm_targets: np.ndarray  # a1*, a2*, a3*

    def __post_init__(self):
        self.leg_torques = np.asarray(self.leg_torques, dtype=np.float64).reshape(3)
        self.arm_targets = np.asarray(self.arm_targets, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(self.leg_torques)) and np.all(np.isfinite(self.arm_targets))):
            raise ValueError("actuation input must be finite")


@dataclass
class KinematicsResult:
    origins: np.ndarray  # (9, 2) body frame origins, world
    angles: np.ndarray  # (9,) absolute body angles
    coms: np.ndarray  # (9, 2) body centres of mass, world
    p_ee: np.ndarray  # gripper position in the base frame
    R_ee: float  # gripper angle in the base frame
    p_ee_world: np.ndarray
    arm_centroid: np.ndarray  # world
    base_centroid: np.ndarray  # world


def _tab(model: ModelSpec):
    return model.tables


def forward_kinematics(model: ModelSpec, q) -> KinematicsResult:
    t = _tab(model)
    q = np.asarray(q, dtype=np.float64)
    origins, angles = _dyn.world_frames(t.parent, t.jtype, t.placement, q)
    c = np.cos(angles)[:, None]
    s = np.sin(angles)[:, None]
    coms = origins + np.hstack([c * t.com[:, :1] - s * t.com[:, 1:], s * t.com[:, :1] + c * t.com[:, 1:]])
    tip = t.link_tip[2]
    a3 = angles[8]
    ee = origins[8] + np.array([np.cos(a3) * tip[0] - np.sin(a3) * tip[1],
                                np.sin(a3) * tip[0] + np.cos(a3) * tip[1]])
    pitch = angles[2]
    rel = ee - origins[2]
    cp, sp = np.cos(pitch), np.sin(pitch)
    p_ee = np.array([cp * rel[0] + sp * rel[1], -sp * rel[0] + cp * rel[1]])
    arm = list(ARM_BODIES)
    chassis = list(CHASSIS_BODIES)
    m = t.mass
    arm_c = (m[arm, None] * coms[arm]).sum(0) / m[arm].sum()
    base_c = (m[chassis, None] * coms[chassis]).sum(0) / m[chassis].sum()
    return KinematicsResult(origins, angles, coms, p_ee, float(angles[8] - pitch), ee, arm_c, base_c)


def mass_matrix(model: ModelSpec, q) -> np.ndarray:
    t = _tab(model)
    return _dyn.crba(t.parent, t.jtype, t.placement, t.mass, t.com, t.inertia,
                     np.asarray(q, dtype=np.float64))


def inverse_dynamics(model: ModelSpec, q, qdot, qddot, gravity: Optional[float] = None) -> np.ndarray:
    t = _tab(model)
    g = model.gravity if gravity is None else gravity
    return _dyn.rnea(t.parent, t.jtype, t.placement, t.mass, t.com, t.inertia,
                     np.asarray(q, dtype=np.float64), np.asarray(qdot, dtype=np.float64),
                     np.asarray(qddot, dtype=np.float64), float(g))


def point_jacobian(model: ModelSpec, q, body: int, point_world) -> np.ndarray:
    t = _tab(model)
    origins, angles = _dyn.world_frames(t.parent, t.jtype, t.placement, np.asarray(q, dtype=np.float64))
    return _dyn.point_jacobian(t.parent, t.jtype, origins, angles, body,
                               float(point_world[0]), float(point_world[1]))


def contact_forces(model: ModelSpec, state: SimState):
    """Penalty contact forces for the current state.

    Returns ``(generalized_force, link_forces)``; ``link_forces`` is (3, 2),
    one world-frame force per arm link, and is also stored on ``state``.
    """
    t = _tab(model)
    gen, lf, _ = _dyn.contact_kernel(t.parent, t.jtype, t.placement, t.link_tip, t.contact,
                                     state.q, state.qdot)
    state.link_forces = lf.copy()
    return gen, lf


def wheel_normal_force(model: ModelSpec, state: SimState) -> float:
    t = _tab(model)
    return float(_dyn.contact_kernel(t.parent, t.jtype, t.placement, t.link_tip, t.contact,
                                     state.q, state.qdot)[2])


def arm_pd_torque(targets, q_arm, qdot_arm, model: ModelSpec) -> np.ndarray:
    return _dyn.arm_pd_kernel(np.asarray(targets, dtype=np.float64),
                              np.asarray(q_arm, dtype=np.float64),
                              np.asarray(qdot_arm, dtype=np.float64),
                              float(model.arm_kp), float(model.arm_kd),
                              np.asarray(model.torque_limits[3:], dtype=np.float64))


def forward_dynamics(model: ModelSpec, state: SimState, torques, include_contacts: bool = True) -> np.ndarray:
    """Joint accelerations for the given joint torques (length 9)."""
    t = _tab(model)
    tau = np.asarray(torques, dtype=np.float64).reshape(N_DOF).copy()
    if include_contacts:
        gen, _ = contact_forces(model, state)
        tau = tau + gen
    M = mass_matrix(model, state.q)
    free = ~t.locked
    try:
        np.linalg.cholesky(M[np.ix_(free, free)])
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("mass matrix is not positive definite") from exc
    return _dyn.forward_dynamics_kernel(t.parent, t.jtype, t.placement, t.mass, t.com, t.inertia,
                                        t.locked, state.q, state.qdot, tau, float(model.gravity))


def step(model: ModelSpec, state: SimState, inp: ActuationInput, dt: float) -> SimState:
    if not 0.0 < dt <= 0.01:
        raise ValueError("dt must lie in (0, 0.01]")
    t = _tab(model)
    q, qd, lf, tau = _dyn.step_kernel(t.parent, t.jtype, t.placement, t.mass, t.com, t.inertia,
                                      t.link_tip, t.torque_limits, t.contact, t.locked,
                                      state.q, state.qdot, inp.leg_torques, inp.arm_targets, float(dt))
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        raise SimulationDiverged(f"non-finite state at t={state.time + dt:.4f}s")
    return SimState(q, qd, state.time + dt, lf, tau[3:])


def mechanical_energy(model: ModelSpec, q, qdot) -> float:
    """Kinetic plus gravitational potential energy (contacts excluded)."""
    q = np.asarray(q, dtype=np.float64)
    qdot = np.asarray(qdot, dtype=np.float64)
    kin = forward_kinematics(model, q)
    M = mass_matrix(model, q)
    pot = model.gravity * float(np.dot(model.tables.mass, kin.coms[:, 1]))
    return 0.5 * float(qdot @ M @ qdot) + pot


def step_batch(model: ModelSpec, Q, QD, leg_torques, arm_targets, dt: float, n_sub: int,
               active=None, threads: int = 1):
    """Vectorised decimated stepping used by the environments (in place).

    With ``threads > 1`` the envs are split into contiguous chunks stepped on
    a thread pool; each chunk writes a disjoint slice, so results do not
    depend on the thread count.
    """
    t = _tab(model)
    n = Q.shape[0]
    if active is None:
        active = np.ones(n, dtype=np.bool_)
    leg = np.ascontiguousarray(leg_torques, dtype=np.float64)
    arm = np.ascontiguousarray(arm_targets, dtype=np.float64)
    active = np.asarray(active, dtype=np.bool_)

    def run(sl):
        q, qd = Q[sl], QD[sl]
        out = _dyn.step_batch(t.parent, t.jtype, t.placement, t.mass, t.com, t.inertia,
                              t.link_tip, t.torque_limits, t.contact, t.locked,
                              q, qd, leg[sl], arm[sl], float(dt), int(n_sub), active[sl])
        return out

    threads = max(1, min(int(threads), n))
    if threads == 1:
        return run(slice(0, n))
    if not (Q.flags.c_contiguous and QD.flags.c_contiguous):
        raise ValueError("Q and QD must be C-contiguous for threaded stepping")
    bounds = np.linspace(0, n, threads + 1).astype(int)
    slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(run, slices))
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))
