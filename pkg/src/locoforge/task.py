"""Loco-manipulation task: observations, rewards, arm costs, commands, resets.

The scalar functions operate on one :class:`SimState`; :class:`VecEnv` runs a
batch of episodes with the same formulas on stacked arrays.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from typing import Dict, Optional, Tuple

import numpy as np

from .curriculum import CurriculumConfig, CurriculumState, initial_state, sample_initial_ee
from .ik import arm_fk, arm_ik, reachable
from .sim.batch import batch_kinematics
from .sim.core import KinematicsResult, SimState, forward_kinematics, step_batch
from .sim.model import ModelSpec

OBS_NAMES = (
    "h", "v_x", "v_z", "omega_pitch", "theta", "q_hip", "q_knee", "qd_hip", "qd_knee", "qd_wheel",
    "q_a1", "q_a2", "q_a3", "qd_a1", "qd_a2", "qd_a3", "p_ee_x", "p_ee_z", "R_ee",
    "v_x_cmd", "p_ee_cmd_x", "p_ee_cmd_z", "R_ee_cmd",
)
OBS_DIM = len(OBS_NAMES)
ACTION_NAMES = ("tau_hip", "tau_knee", "tau_wheel", "a1_target", "a2_target", "a3_target")
ACT_DIM = len(ACTION_NAMES)
COST_NAMES = ("c_arm", "c_gripper", "c_force")
REWARD_NAMES = (
    "lin_vel_tracking", "accel_limit", "orientation_penalty", "energy_penalty", "leg_motion",
    "gripper_pos_tracking", "body_pos_tracking", "arm_upper_limit", "arm_lower_limit",
)
N_TRACKING_TERMS = 3

DEFAULT_OBS_SCALES = (
    2.0, 0.5, 1.0, 0.25, 1.0, 1.0, 1.0, 0.1, 0.1, 0.05,
    1.0, 1.0, 1.0, 0.1, 0.1, 0.1, 2.0, 2.0, 0.5,
    0.5, 2.0, 2.0, 0.5,
)


@dataclass(frozen=True)
class TaskConfig:
    vx_cmd_range: Tuple[float, float] = (-2.0, 2.0)
    ree_cmd_range: Tuple[float, float] = (-2.4, -1.4)
    theta_max: float = 1.0
    h_min: float = 0.25
    t_max: int = 500
    dt: float = 1e-3
    decimation: int = 20
    leg_torque_scale: Tuple[float, float, float] = (30.0, 30.0, 20.0)
    arm_action_scale: float = 1.0
    action_clip: float = 5.0
    nominal_leg: Tuple[float, float] = (0.5, -1.0)
    nominal_arm: Tuple[float, float, float] = (-0.3, -1.3, -0.3)
    init_noise: float = 0.02
    obs_scales: Tuple[float, ...] = DEFAULT_OBS_SCALES
    # "plus" penalizes velocity and acceleration; "literal" keeps the minus
    # sign in front of the acceleration term
    leg_motion_sign: str = "plus"
    failure_penalty: float = 10.0
    ee_walk_step: float = 0.0
    reset_ik_attempts: int = 10
    ik_tol: float = 1e-3
    ik_max_iters: int = 200

    def __post_init__(self):
        lo, hi = self.vx_cmd_range
        if not lo <= hi:
            raise ValueError("task.vx_cmd_range must be ordered (low <= high)")
        if not self.ree_cmd_range[0] <= self.ree_cmd_range[1]:
            raise ValueError("task.ree_cmd_range must be ordered (low <= high)")
        if not 0 < self.theta_max <= np.pi:
            raise ValueError("task.theta_max must lie in (0, pi]")
        if not self.h_min >= 0:
            raise ValueError("task.h_min must be >= 0")
        if self.t_max < 1:
            raise ValueError("task.t_max must be >= 1")
        if not 0 < self.dt <= 0.01:
            raise ValueError("task.dt must lie in (0, 0.01]")
        if self.decimation < 1:
            raise ValueError("task.decimation must be >= 1")
        if len(self.leg_torque_scale) != 3 or min(self.leg_torque_scale) <= 0:
            raise ValueError("task.leg_torque_scale holds 3 values > 0")
        if not self.arm_action_scale > 0:
            raise ValueError("task.arm_action_scale must be > 0")
        if not self.action_clip > 0:
            raise ValueError("task.action_clip must be > 0")
        if len(self.nominal_leg) != 2 or len(self.nominal_arm) != 3:
            raise ValueError("task.nominal_leg holds 2 values and task.nominal_arm 3")
        if not 0 <= self.init_noise <= 0.2:
            raise ValueError("task.init_noise must lie in [0, 0.2]")
        if len(self.obs_scales) != OBS_DIM or min(self.obs_scales) <= 0:
            raise ValueError(f"task.obs_scales holds {OBS_DIM} values > 0")
        if self.leg_motion_sign not in ("plus", "literal"):
            raise ValueError("task.leg_motion_sign must be 'plus' or 'literal'")
        if not self.failure_penalty >= 0:
            raise ValueError("task.failure_penalty must be >= 0")
        if not self.ee_walk_step >= 0:
            raise ValueError("task.ee_walk_step must be >= 0")
        if self.reset_ik_attempts < 1 or self.ik_max_iters < 1:
            raise ValueError("task.reset_ik_attempts and task.ik_max_iters must be >= 1")
        if not self.ik_tol > 0:
            raise ValueError("task.ik_tol must be > 0")

    @property
    def control_dt(self) -> float:
        return self.dt * self.decimation


def layout_descriptor(cfg: TaskConfig) -> dict:
    return {"obs": list(OBS_NAMES), "obs_scales": [float(s) for s in cfg.obs_scales],
            "actions": list(ACTION_NAMES), "leg_torque_scale": list(cfg.leg_torque_scale),
            "arm_action_scale": cfg.arm_action_scale, "nominal_arm": list(cfg.nominal_arm)}


def layout_hash(cfg: TaskConfig) -> str:
    blob = json.dumps(layout_descriptor(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:32]


# ----------------------------------------------------------------------------
# value types


@dataclass
class CommandSet:
    v_x_cmd: float
    p_ee_cmd: np.ndarray
    R_ee_cmd: float
    p_base_cmd: float = 0.0

    def __post_init__(self):
        self.p_ee_cmd = np.asarray(self.p_ee_cmd, dtype=np.float64).reshape(2)


@dataclass
class RewardTerms:
    lin_vel_tracking: float
    accel_limit: float
    orientation_penalty: float
    energy_penalty: float
    leg_motion: float
    gripper_pos_tracking: float
    body_pos_tracking: float
    arm_upper_limit: float
    arm_lower_limit: float

    @property
    def total(self) -> float:
        return float(sum(getattr(self, n) for n in REWARD_NAMES))

    def as_dict(self) -> Dict[str, float]:
        d = {n: float(getattr(self, n)) for n in REWARD_NAMES}
        d["total"] = self.total
        return d


@dataclass
class CostVector:
    c_arm: float
    c_gripper: float
    c_force: float

    def as_array(self) -> np.ndarray:
        return np.array([self.c_arm, self.c_gripper, self.c_force])


@dataclass
class EpisodeStatus:
    terminated: bool = False
    truncated: bool = False
    step_index: int = 0


# ----------------------------------------------------------------------------
# batched formulas


def observation_batch(Q, QD, p_ee, R_ee, vx_cmd, p_ee_cmd, ree_cmd, cfg: TaskConfig) -> np.ndarray:
    n = Q.shape[0]
    obs = np.empty((n, OBS_DIM))
    obs[:, 0] = Q[:, 1]
    obs[:, 1] = QD[:, 0]
    obs[:, 2] = QD[:, 1]
    obs[:, 3] = QD[:, 2]
    obs[:, 4] = Q[:, 2]
    obs[:, 5:7] = Q[:, 3:5]
    obs[:, 7:10] = QD[:, 3:6]
    obs[:, 10:13] = Q[:, 6:9]
    obs[:, 13:16] = QD[:, 6:9]
    obs[:, 16:18] = p_ee
    obs[:, 18] = R_ee
    obs[:, 19] = vx_cmd
    obs[:, 20:22] = p_ee_cmd
    obs[:, 22] = ree_cmd
    return obs * np.asarray(cfg.obs_scales)


def reward_terms_batch(vx, vx_prev, theta, tau, qd_leg, qdd_leg, p_ee, p_ee_cmd, p_base, p_base_cmd,
                       q_arm, arm_lower, arm_upper, vx_cmd, cfg: TaskConfig) -> Dict[str, np.ndarray]:
    acc_sign = 1.0 if cfg.leg_motion_sign == "plus" else -1.0
    over = np.maximum(q_arm - arm_upper, 0.0)
    under = np.minimum(q_arm - arm_lower, 0.0)
    return {
        "lin_vel_tracking": np.exp(-7.5 * (vx_cmd - vx) ** 2),
        "accel_limit": -0.1 * (vx_prev - vx) ** 2,
        "orientation_penalty": -1.2 * theta ** 2,
        "energy_penalty": -1e-5 * np.sum(tau ** 2, axis=-1),
        "leg_motion": -1e-7 * (np.sum(qd_leg ** 2, axis=-1) + acc_sign * 2.5 * np.sum(qdd_leg ** 2, axis=-1)),
        "gripper_pos_tracking": np.exp(-5.0 * np.sum((p_ee - p_ee_cmd) ** 2, axis=-1)),
        "body_pos_tracking": np.exp(-0.05 * (p_base - p_base_cmd) ** 2),
        "arm_upper_limit": -10.0 * np.sum(over ** 2, axis=-1),
        "arm_lower_limit": -10.0 * np.sum(under ** 2, axis=-1),
    }


def costs_batch(q_arm, arm_lower, arm_upper, arm_centroid, base_centroid, link_forces) -> np.ndarray:
    """Stacked (c_arm, c_gripper, c_force) along the last axis."""
    c_arm = np.sum(np.maximum(q_arm - arm_upper, 0.0), axis=-1) - np.sum(np.minimum(q_arm - arm_lower, 0.0), axis=-1)
    d = arm_centroid - base_centroid
    c_grip = np.sqrt(np.sum(d ** 2, axis=-1))
    c_force = np.sum(np.sqrt(np.sum(np.asarray(link_forces) ** 2, axis=-1)), axis=-1)
    return np.stack([c_arm, c_grip, c_force], axis=-1)


def action_to_actuation(actions, cfg: TaskConfig):
    a = np.clip(np.asarray(actions, dtype=np.float64), -cfg.action_clip, cfg.action_clip)
    leg = a[..., :3] * np.asarray(cfg.leg_torque_scale)
    arm = np.asarray(cfg.nominal_arm) + cfg.arm_action_scale * a[..., 3:6]
    return leg, arm


def actuation_to_action(leg_torques, arm_targets, cfg: TaskConfig) -> np.ndarray:
    leg = np.asarray(leg_torques, dtype=np.float64) / np.asarray(cfg.leg_torque_scale)
    arm = (np.asarray(arm_targets, dtype=np.float64) - np.asarray(cfg.nominal_arm)) / cfg.arm_action_scale
    return np.concatenate([leg, arm], axis=-1)


# ----------------------------------------------------------------------------
# scalar operations


def build_observation(state: SimState, kin: KinematicsResult, cmd: CommandSet,
                      cfg: Optional[TaskConfig] = None) -> np.ndarray:
    cfg = cfg or TaskConfig()
    obs = observation_batch(state.q[None], state.qdot[None], kin.p_ee[None], np.array([kin.R_ee]),
                            np.array([cmd.v_x_cmd]), cmd.p_ee_cmd[None], np.array([cmd.R_ee_cmd]), cfg)[0]
    if not np.all(np.isfinite(obs)):
        raise FloatingPointError("non-finite observation entry")
    return obs


def compute_rewards(state: SimState, prev_state: SimState, kin: KinematicsResult, cmd: CommandSet,
                    torques, cfg: Optional[TaskConfig] = None, model: Optional[ModelSpec] = None) -> RewardTerms:
    cfg = cfg or TaskConfig()
    model = model or ModelSpec()
    tau = np.asarray(torques, dtype=np.float64).reshape(-1)
    qd_leg = state.qdot[3:5]
    qdd_leg = (state.qdot[3:5] - prev_state.qdot[3:5]) / cfg.control_dt
    terms = reward_terms_batch(state.qdot[0], prev_state.qdot[0], state.q[2], tau, qd_leg, qdd_leg,
                               kin.p_ee, cmd.p_ee_cmd, state.q[0], cmd.p_base_cmd, state.q[6:9],
                               model.arm_lower, model.arm_upper, cmd.v_x_cmd, cfg)
    return RewardTerms(**{k: float(v) for k, v in terms.items()})


def compute_costs(state: SimState, kin: KinematicsResult, model: ModelSpec) -> CostVector:
    c = costs_batch(state.q[6:9], model.arm_lower, model.arm_upper, kin.arm_centroid,
                    kin.base_centroid, state.link_forces)
    return CostVector(float(c[0]), float(c[1]), float(c[2]))


def sample_command(rng: np.random.Generator, cfg: Optional[TaskConfig] = None,
                   cstate: Optional[CurriculumState] = None, ccfg: Optional[CurriculumConfig] = None,
                   base_x: float = 0.0) -> CommandSet:
    """Velocity, orientation and gripper target for one episode.

    The gripper target is the curriculum goal; the base position reference
    starts at ``base_x`` and is integrated by the environment.
    """
    cfg = cfg or TaskConfig()
    ccfg = ccfg or CurriculumConfig()
    cstate = cstate or initial_state(ccfg)
    vx = rng.uniform(*cfg.vx_cmd_range)
    goal, _ = sample_initial_ee(cstate, ccfg, rng)
    ree = rng.uniform(*cfg.ree_cmd_range)
    return CommandSet(float(vx), goal, float(ree), float(base_x))


def check_termination(state: SimState, kin: Optional[KinematicsResult], status: EpisodeStatus,
                      cfg: Optional[TaskConfig] = None) -> EpisodeStatus:
    cfg = cfg or TaskConfig()
    finite = bool(np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.qdot)))
    failed = (not finite) or abs(state.q[2]) > cfg.theta_max or state.q[1] < cfg.h_min
    truncated = (not failed) and status.step_index >= cfg.t_max
    return EpisodeStatus(bool(failed), bool(truncated), status.step_index)


def balanced_pose(model: ModelSpec, arm, leg, pitch_offset=None) -> np.ndarray:
    """Configurations with the total centre of mass above the wheel.

    ``arm`` (n, 3) and ``leg`` (n, 2) are joint angles; the pitch is solved
    by fixed-point iteration, then ``pitch_offset`` is added and the base
    height set so the wheel rests on the ground at its static sinkage.
    """
    arm = np.atleast_2d(np.asarray(arm, dtype=np.float64))
    n = arm.shape[0]
    Q = np.zeros((n, 9))
    Q[:, 3:5] = leg
    Q[:, 6:9] = arm
    for _ in range(200):
        bk = batch_kinematics(model, Q)
        dx = bk.total_com[:, 0] - bk.origins[:, 5, 0]
        Q[:, 2] += 2.0 * dx
        if np.max(np.abs(dx)) < 1e-12:
            break
    if pitch_offset is not None:
        Q[:, 2] += pitch_offset
    Q[:, 1] = 0.0
    bk = batch_kinematics(model, Q)
    sink = model.total_mass * model.gravity / model.contact_stiffness
    Q[:, 1] = model.wheel_radius - bk.origins[:, 5, 1] - sink
    return Q


def nominal_state(model: Optional[ModelSpec] = None, cfg: Optional[TaskConfig] = None) -> SimState:
    model = model or ModelSpec()
    cfg = cfg or TaskConfig()
    Q = balanced_pose(model, np.asarray(cfg.nominal_arm)[None], np.asarray(cfg.nominal_leg)[None])
    return SimState(Q[0], np.zeros(9))


def _reset_arm(model, cfg, ccfg, cstate, rng):
    goal = None
    for _ in range(cfg.reset_ik_attempts):
        goal, p0 = sample_initial_ee(cstate, ccfg, rng, reachable=lambda p: reachable(model, p, 0.01))
        res = arm_ik(model, p0, q_init=np.asarray(cfg.nominal_arm), tol=cfg.ik_tol,
                     max_iters=cfg.ik_max_iters)
        if res.success:
            return goal, res.q
    return goal, np.asarray(cfg.nominal_arm, dtype=np.float64).copy()


def _draw_reset(cstate, rng, model, cfg, ccfg):
    goal, q_arm = _reset_arm(model, cfg, ccfg, cstate, rng)
    u = rng.uniform(-cfg.init_noise, cfg.init_noise, 3)
    vx = rng.uniform(*cfg.vx_cmd_range)
    ree = rng.uniform(*cfg.ree_cmd_range)
    return goal, q_arm, u, float(vx), float(ree)


def reset_episode(cstate: CurriculumState, rng: np.random.Generator, model: ModelSpec,
                  cfg: Optional[TaskConfig] = None, ccfg: Optional[CurriculumConfig] = None):
    cfg = cfg or TaskConfig()
    ccfg = ccfg or CurriculumConfig()
    goal, q_arm, u, vx, ree = _draw_reset(cstate, rng, model, cfg, ccfg)
    leg = np.asarray(cfg.nominal_leg) + u[1:]
    Q = balanced_pose(model, q_arm[None], leg[None], pitch_offset=u[:1])
    cmd = CommandSet(vx, goal, ree, float(Q[0, 0]))
    return SimState(Q[0], np.zeros(9)), cmd


# ----------------------------------------------------------------------------
# vectorised environment


@dataclass
class StepResult:
    obs: np.ndarray
    reward: np.ndarray
    costs: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    final_obs: np.ndarray  # pre-reset observation, meaningful where an episode ended
    terms: Dict[str, np.ndarray] = field(default_factory=dict)


class VecEnv:
    """``n_envs`` independent episodes stepped together at the control rate.

    Finished episodes are reset in place (through the curriculum) before
    ``step`` returns; the observation they ended on is kept in
    ``StepResult.final_obs`` for value bootstrapping.
    """

    def __init__(self, model: ModelSpec, cfg: TaskConfig, ccfg: CurriculumConfig, n_envs: int,
                 seed: int, threads: int = 1):
        if n_envs < 1:
            raise ValueError("n_envs must be >= 1")
        self.model = model
        self.cfg = cfg
        self.ccfg = ccfg
        self.n = int(n_envs)
        self.threads = max(1, int(threads))
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.curriculum = initial_state(ccfg)
        self.Q = np.zeros((self.n, 9))
        self.QD = np.zeros((self.n, 9))
        self.vx_cmd = np.zeros(self.n)
        self.p_ee_cmd = np.zeros((self.n, 2))
        self.ree_cmd = np.zeros(self.n)
        self.p_base_cmd = np.zeros(self.n)
        self.steps = np.zeros(self.n, dtype=np.int64)
        self.link_forces = np.zeros((self.n, 3, 2))
        self.torques = np.zeros((self.n, 6))
        self.finished_episodes = 0
        self.failed_episodes = 0
        self._lo = model.arm_lower
        self._hi = model.arm_upper

    # -- state ---------------------------------------------------------------
    _ARRAYS = ("Q", "QD", "vx_cmd", "p_ee_cmd", "ree_cmd", "p_base_cmd", "steps", "link_forces", "torques")

    def get_state(self) -> dict:
        d = {k: getattr(self, k).copy() for k in self._ARRAYS}
        d["rng"] = self.rng.bit_generator.state
        d["curriculum"] = self.curriculum.to_dict()
        d["counters"] = [self.finished_episodes, self.failed_episodes]
        return d

    def set_state(self, d: dict):
        for k in self._ARRAYS:
            cur = getattr(self, k)
            setattr(self, k, np.asarray(d[k], dtype=cur.dtype).reshape(cur.shape).copy())
        self.rng.bit_generator.state = d["rng"]
        self.curriculum = CurriculumState.from_dict(d["curriculum"])
        self.finished_episodes, self.failed_episodes = (int(x) for x in d["counters"])

    # -- episode plumbing ----------------------------------------------------
    def reset_envs(self, idx):
        idx = np.atleast_1d(idx)
        draws = [_draw_reset(self.curriculum, self.rng, self.model, self.cfg, self.ccfg) for _ in idx]
        arm = np.array([d[1] for d in draws])
        u = np.array([d[2] for d in draws])
        leg = np.asarray(self.cfg.nominal_leg) + u[:, 1:]
        Q = balanced_pose(self.model, arm, leg, pitch_offset=u[:, 0])
        self.Q[idx] = Q
        self.QD[idx] = 0.0
        self.p_ee_cmd[idx] = np.array([d[0] for d in draws])
        self.vx_cmd[idx] = [d[3] for d in draws]
        self.ree_cmd[idx] = [d[4] for d in draws]
        self.p_base_cmd[idx] = Q[:, 0]
        self.steps[idx] = 0
        self.link_forces[idx] = 0.0
        self.torques[idx] = 0.0

    def reset(self) -> np.ndarray:
        self.reset_envs(np.arange(self.n))
        return self.observe()

    def kinematics(self):
        return batch_kinematics(self.model, self.Q)

    def observe(self, bk=None) -> np.ndarray:
        bk = bk or self.kinematics()
        return observation_batch(self.Q, self.QD, bk.p_ee, bk.R_ee, self.vx_cmd, self.p_ee_cmd,
                                 self.ree_cmd, self.cfg)

    def commands(self, i: int) -> CommandSet:
        return CommandSet(self.vx_cmd[i], self.p_ee_cmd[i], self.ree_cmd[i], self.p_base_cmd[i])

    def state(self, i: int) -> SimState:
        return SimState(self.Q[i], self.QD[i], self.steps[i] * self.cfg.control_dt,
                        self.link_forces[i], self.torques[i])

    def step(self, actions) -> StepResult:
        cfg = self.cfg
        actions = np.asarray(actions, dtype=np.float64).reshape(self.n, ACT_DIM)
        leg, arm = action_to_actuation(actions, cfg)
        vx_prev = self.QD[:, 0].copy()
        qd_leg_prev = self.QD[:, 3:5].copy()
        lf, tau, div = step_batch(self.model, self.Q, self.QD, leg, arm, cfg.dt, cfg.decimation,
                                  threads=self.threads)
        self.link_forces = lf
        self.torques = tau
        self.steps += 1
        self.p_base_cmd += self.vx_cmd * cfg.control_dt
        if cfg.ee_walk_step > 0:
            self.walk_targets(cfg.ee_walk_step)
        bk = self.kinematics()
        qdd_leg = (self.QD[:, 3:5] - qd_leg_prev) / cfg.control_dt
        terms = reward_terms_batch(self.QD[:, 0], vx_prev, self.Q[:, 2], tau, self.QD[:, 3:5], qdd_leg,
                                   bk.p_ee, self.p_ee_cmd, self.Q[:, 0], self.p_base_cmd, self.Q[:, 6:9],
                                   self._lo, self._hi, self.vx_cmd, cfg)
        reward = sum(terms[k] for k in REWARD_NAMES)
        costs = costs_batch(self.Q[:, 6:9], self._lo, self._hi, bk.arm_centroid, bk.base_centroid, lf)
        finite = np.all(np.isfinite(self.Q), axis=1) & np.all(np.isfinite(self.QD), axis=1)
        terminated = div | ~finite | (np.abs(self.Q[:, 2]) > cfg.theta_max) | (self.Q[:, 1] < cfg.h_min)
        truncated = ~terminated & (self.steps >= cfg.t_max)
        reward = np.where(terminated, reward - cfg.failure_penalty, reward)
        obs = self.observe(bk)
        final_obs = obs.copy()
        done = terminated | truncated
        if done.any():
            idx = np.flatnonzero(done)
            self.finished_episodes += len(idx)
            self.failed_episodes += int(terminated.sum())
            self.reset_envs(idx)
            obs[idx] = self.observe()[idx]
        return StepResult(obs, reward, costs, terminated, truncated, final_obs, terms)

    def walk_targets(self, step_size: float):
        """Random-walk the gripper targets, kept inside the goal box."""
        self.p_ee_cmd += step_size * self.rng.standard_normal((self.n, 2))
        np.clip(self.p_ee_cmd, self.ccfg.goal_low, self.ccfg.goal_high, out=self.p_ee_cmd)
