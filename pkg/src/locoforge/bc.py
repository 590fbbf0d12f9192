"""Scripted whole-body expert, demonstration collection and behavior cloning.

The expert balances the wheel with a lean controller on the total centre of
mass, holds the legs with a posture PD and moves the arm toward the gripper
target through inverse kinematics, a bounded step at a time.
"""
from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .approximator import NetSpec, OptimizerState, backward_from_cache, copy_params, forward_with_cache, net_forward, net_init, opt_step
from .ik import arm_ik
from .sim.batch import batch_kinematics
from .sim.core import KinematicsResult, SimState, forward_kinematics, inverse_dynamics, point_jacobian
from .sim.model import ModelSpec
from .task import ACT_DIM, OBS_DIM, CommandSet, TaskConfig, VecEnv, actuation_to_action, layout_hash


class ExpertFailure(RuntimeError):
    """The expert failed too often while collecting demonstrations."""


@dataclass(frozen=True)
class ExpertConfig:
    lean_gain: float = 40.0
    lean_rate_gain: float = 1.0
    velocity_gain: float = 0.1
    lean_cap: float = 0.05
    leg_kp: float = 50.0
    leg_kd: float = 2.0
    # constant hip/knee feedforward; None uses the static torques of the current pose
    leg_feedforward: Optional[Tuple[float, float]] = (-1.6, 13.7)
    arm_step: float = 0.05
    ik_tol: float = 1e-3
    ik_max_iters: int = 100
    # exploration noise executed while collecting (labels stay noise-free)
    demo_noise: float = 0.1
    max_failure_rate: float = 0.2

    def __post_init__(self):
        for name in ("lean_gain", "lean_rate_gain", "velocity_gain", "lean_cap", "leg_kp", "leg_kd",
                     "arm_step", "ik_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"bc.expert.{name} must be > 0")
        if self.leg_feedforward is not None and len(self.leg_feedforward) != 2:
            raise ValueError("bc.expert.leg_feedforward holds 2 values")
        if self.ik_max_iters < 1:
            raise ValueError("bc.expert.ik_max_iters must be >= 1")
        if not self.demo_noise >= 0:
            raise ValueError("bc.expert.demo_noise must be >= 0")
        if not 0 < self.max_failure_rate <= 1:
            raise ValueError("bc.expert.max_failure_rate must lie in (0, 1]")


@dataclass(frozen=True)
class BcConfig:
    epochs: int = 40
    batch_size: int = 256
    learning_rate: float = 1e-3
    validation_fraction: float = 0.1
    target_loss: float = 0.05
    n_demo_steps: int = 20000
    expert: ExpertConfig = field(default_factory=ExpertConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("bc.epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("bc.batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("bc.learning_rate must be > 0")
        if not 0 < self.validation_fraction < 0.5:
            raise ValueError("bc.validation_fraction must lie in (0, 0.5)")
        if not self.target_loss > 0:
            raise ValueError("bc.target_loss must be > 0")
        if self.n_demo_steps < 1:
            raise ValueError("bc.n_demo_steps must be >= 1")


# ----------------------------------------------------------------------------
# expert


def static_leg_torques(model: ModelSpec, q) -> np.ndarray:
    """Hip and knee torques holding pose ``q`` at rest on the wheel.

    Gravity forces from inverse dynamics minus the ground reaction that
    balances the floating-base rows (least squares).
    """
    q = np.asarray(q, dtype=np.float64)
    g = inverse_dynamics(model, q, np.zeros(9), np.zeros(9))
    kin = forward_kinematics(model, q)
    contact = kin.origins[5] - np.array([0.0, model.wheel_radius])
    J = point_jacobian(model, q, 5, contact)
    lam = np.linalg.lstsq(J[:, :3].T, g[:3], rcond=None)[0]
    return (g - J.T @ lam)[3:5]


def expert_batch(model: ModelSpec, tcfg: TaskConfig, ecfg: ExpertConfig, Q, QD, bk, vx_cmd, p_ee_cmd) -> np.ndarray:
    """Expert actions (n, 6) in normalized action units."""
    n = Q.shape[0]
    wheel = bk.origins[:, 5]
    com = bk.total_com
    lean = np.arctan2(com[:, 0] - wheel[:, 0], com[:, 1] - wheel[:, 1])
    lean_ref = np.clip(-ecfg.velocity_gain * (QD[:, 0] - vx_cmd), -ecfg.lean_cap, ecfg.lean_cap)
    tau = np.empty((n, 3))
    tau[:, 2] = -ecfg.lean_gain * (lean - lean_ref) + ecfg.lean_rate_gain * QD[:, 2]
    nom = np.asarray(tcfg.nominal_leg)
    if ecfg.leg_feedforward is None:
        ff = np.array([static_leg_torques(model, q) for q in Q])
    else:
        ff = np.asarray(ecfg.leg_feedforward)
    tau[:, :2] = ff + ecfg.leg_kp * (nom - Q[:, 3:5]) - ecfg.leg_kd * QD[:, 3:5]
    targets = Q[:, 6:9].copy()
    for i in range(n):
        q_arm = Q[i, 6:9]
        res = arm_ik(model, p_ee_cmd[i], q_init=q_arm, tol=ecfg.ik_tol, max_iters=ecfg.ik_max_iters)
        if res.success:
            targets[i] = q_arm + np.clip(res.q - q_arm, -ecfg.arm_step, ecfg.arm_step)
    return actuation_to_action(tau, targets, tcfg)


def expert_action(state: SimState, kin: KinematicsResult, cmd: CommandSet, cfg: Optional[ExpertConfig] = None,
                  model: Optional[ModelSpec] = None, task_cfg: Optional[TaskConfig] = None) -> np.ndarray:
    cfg = cfg or ExpertConfig()
    model = model or ModelSpec()
    task_cfg = task_cfg or TaskConfig()
    bk = batch_kinematics(model, state.q[None])
    return expert_batch(model, task_cfg, cfg, state.q[None], state.qdot[None], bk,
                        np.array([cmd.v_x_cmd]), cmd.p_ee_cmd[None])[0]


# ----------------------------------------------------------------------------
# demonstrations

DEMO_MAGIC = b"LFDM"
DEMO_VERSION = 1
_DEMO_HEADER = struct.Struct("<4sH32sQIIQ32sQ")


@dataclass
class DemoSet:
    obs: np.ndarray
    actions: np.ndarray
    layout_hash: str
    config_hash: str = ""
    seed: int = 0
    discarded: int = 0

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.float64).reshape(-1, OBS_DIM)
        self.actions = np.asarray(self.actions, dtype=np.float64).reshape(-1, ACT_DIM)
        if len(self.obs) != len(self.actions):
            raise ValueError("observation and action counts differ")

    @property
    def count(self) -> int:
        return len(self.obs)

    def save(self, path) -> None:
        head = _DEMO_HEADER.pack(DEMO_MAGIC, DEMO_VERSION, self.layout_hash.encode().ljust(32, b"\0")[:32],
                                 self.count, OBS_DIM, ACT_DIM, int(self.seed),
                                 self.config_hash.encode().ljust(32, b"\0")[:32], int(self.discarded))
        body = np.hstack([self.obs, self.actions]).astype("<f8").tobytes()
        Path(path).write_bytes(head + body)

    @classmethod
    def load(cls, path) -> "DemoSet":
        raw = Path(path).read_bytes()
        if len(raw) < _DEMO_HEADER.size:
            raise ValueError(f"{path}: truncated demo file")
        magic, ver, lh, count, od, ad, seed, ch, disc = _DEMO_HEADER.unpack_from(raw)
        if magic != DEMO_MAGIC:
            raise ValueError(f"{path}: not a demo file")
        if ver != DEMO_VERSION:
            raise ValueError(f"{path}: demo format version {ver}, expected {DEMO_VERSION}")
        if (od, ad) != (OBS_DIM, ACT_DIM):
            raise ValueError(f"{path}: layout {od}x{ad} does not match {OBS_DIM}x{ACT_DIM}")
        data = np.frombuffer(raw, dtype="<f8", offset=_DEMO_HEADER.size)
        if data.size != count * (od + ad):
            raise ValueError(f"{path}: expected {count} pairs, file holds {data.size / (od + ad):g}")
        data = data.reshape(count, od + ad).astype(np.float64)
        return cls(data[:, :od], data[:, od:], lh.rstrip(b"\0").decode(), ch.rstrip(b"\0").decode(),
                   seed, disc)


def collect_demos(env: VecEnv, cfg: Optional[ExpertConfig] = None, n_steps: int = 20000,
                  rng: Optional[np.random.Generator] = None, config_hash: str = "", seed: int = 0) -> DemoSet:
    """Roll the expert out on ``env`` and keep the pairs of non-failed episodes.

    Transitions are taken step-major over the envs until ``n_steps`` have been
    visited; pairs from episodes ending in failure are dropped. Episodes still
    running at the end are kept.
    """
    cfg = cfg or ExpertConfig()
    rng = rng or np.random.default_rng(seed)
    n = env.n
    obs = env.reset()
    pending: List[list] = [[] for _ in range(n)]
    kept_obs, kept_act = [], []
    visited = 0
    failed = ended = discarded = 0
    while visited < n_steps:
        bk = env.kinematics()
        act = expert_batch(env.model, env.cfg, cfg, env.Q, env.QD, bk, env.vx_cmd, env.p_ee_cmd)
        take = min(n, n_steps - visited)
        for i in range(take):
            pending[i].append((obs[i].copy(), act[i].copy()))
        visited += take
        noisy = act + cfg.demo_noise * rng.standard_normal(act.shape)
        res = env.step(noisy)
        for i in range(n):
            if res.terminated[i] or res.truncated[i]:
                ended += 1
                if res.terminated[i]:
                    failed += 1
                    discarded += len(pending[i])
                else:
                    for o, a in pending[i]:
                        kept_obs.append(o)
                        kept_act.append(a)
                pending[i] = []
        obs = res.obs
    for p in pending:
        ended += 1 if p else 0
        for o, a in p:
            kept_obs.append(o)
            kept_act.append(a)
    rate = failed / max(ended, 1)
    if rate > cfg.max_failure_rate:
        raise ExpertFailure(f"expert failed in {failed} of {ended} episodes ({rate:.0%}); "
                            "check bc.expert gains")
    demos = DemoSet(np.array(kept_obs).reshape(-1, OBS_DIM), np.array(kept_act).reshape(-1, ACT_DIM),
                    layout_hash(env.cfg), config_hash, seed, discarded)
    return demos


# ----------------------------------------------------------------------------
# cloning


def pretrain_actor(spec: NetSpec, params: dict, demos: DemoSet, cfg: Optional[BcConfig] = None,
                   rng: Optional[np.random.Generator] = None):
    """Regress the actor mean head onto the expert actions (MSE).

    Returns ``(params, curve)`` where ``curve`` is a list of
    ``{"epoch", "train_loss", "val_loss"}`` records. ``log_std`` is left as is.
    """
    cfg = cfg or BcConfig()
    rng = rng or np.random.default_rng(0)
    if demos.count == 0:
        raise ValueError("empty demo set")
    X, Y = demos.obs, demos.actions
    perm = rng.permutation(len(X))
    n_val = int(round(cfg.validation_fraction * len(X)))
    if len(X) > 1:
        n_val = min(max(n_val, 1), len(X) - 1)
    else:
        n_val = 0
    val, tr = perm[:n_val], perm[n_val:]
    p = copy_params(params)
    log_std = p.get("log_std")
    opt = OptimizerState.for_params(p, lr=cfg.learning_rate, max_grad_norm=10.0)
    curve = []
    for epoch in range(cfg.epochs):
        order = tr[rng.permutation(len(tr))]
        tot = 0.0
        for start in range(0, len(order), cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            out, cache = forward_with_cache(spec, p, X[b])
            err = out - Y[b]
            tot += float(np.sum(err ** 2))
            grads, _ = backward_from_cache(spec, p, cache, 2.0 * err / err.size)
            p, opt = opt_step(p, grads, opt)
        train_loss = tot / (len(tr) * ACT_DIM)
        val_loss = float(np.mean((net_forward(spec, p, X[val]) - Y[val]) ** 2)) if n_val else float("nan")
        curve.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
    if log_std is not None:
        p["log_std"] = log_std.copy()
    vals = [c["val_loss"] for c in curve]
    if len(vals) > 1 and all(b >= a for a, b in zip(vals, vals[1:])):
        warnings.warn("validation loss never decreased during behavior cloning", RuntimeWarning)
    return p, curve


class BehaviorCloner(RegressorMixin, BaseEstimator):
    """Estimator wrapper: fit a tanh MLP mean head to (observation, action) pairs."""

    def __init__(self, hidden_dims=(64, 64), epochs=40, batch_size=256, learning_rate=1e-3,
                 validation_fraction=0.1, log_std_init=-1.0, random_state=0):
        self.hidden_dims = hidden_dims
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.validation_fraction = validation_fraction
        self.log_std_init = log_std_init
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        y = y.reshape(len(y), -1)
        spec = NetSpec(X.shape[1], tuple(self.hidden_dims), y.shape[1])
        params = net_init(spec, self.random_state, actor=True, log_std_init=self.log_std_init)
        cfg = BcConfig(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                       validation_fraction=self.validation_fraction)
        demos = _ArrayDemos(X, y)
        self.params_, self.loss_curve_ = pretrain_actor(spec, params, demos, cfg,
                                                        np.random.default_rng(self.random_state))
        self.spec_ = spec
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return net_forward(self.spec_, self.params_, X)


@dataclass
class _ArrayDemos:
    obs: np.ndarray
    actions: np.ndarray

    @property
    def count(self) -> int:
        return len(self.obs)


def config_digest(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:32]
