"""Arm-constrained PPO: rollouts, GAE, PPO surrogate and log-barrier cost terms.

Reward critic and one critic per arm cost share the actor's observation.
Critics regress a scaled target ``(1 - gamma) * return`` so the outputs stay
on the per-step scale; ``value = output / (1 - gamma)``.

Cost budgets ``d_k`` are per-step rates: the barrier uses the margin
``d_k - (1 - gamma) * J_k`` where ``J_k`` is the discounted cost return.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .approximator import (
    NetSpec,
    NonFiniteGradient,
    OptimizerState,
    Params,
    backward_from_cache,
    copy_params,
    forward_with_cache,
    gaussian_entropy,
    gaussian_kl,
    gaussian_logprob,
    net_forward,
    net_init,
    opt_step,
)
from .curriculum import CurriculumConfig, CurriculumState, current_sigma, update_on_iteration
from .task import ACT_DIM, COST_NAMES, OBS_DIM, VecEnv

K_COSTS = len(COST_NAMES)


@dataclass(frozen=True)
class UpdateConfig:
    gamma: float = 0.99
    lam: float = 0.98
    surrogate_mode: str = "kl"
    beta: float = 1.0
    adaptive_beta: bool = True
    kl_target: float = 0.01
    clip_eps: float = 0.2
    t_barrier: float = 20.0
    # "constant" or "linear" (t grows to t_barrier_final over barrier_anneal_iters)
    barrier_schedule: str = "constant"
    t_barrier_final: float = 100.0
    barrier_anneal_iters: int = 300
    d_arm: float = 0.05
    d_gripper: float = 0.6
    d_force: float = 5.0
    delta_feas: float = 1e-3
    # "rate": mean per-step cost / (1 - gamma); "discounted": mean over episode starts
    cost_return_mode: str = "rate"
    epochs: int = 4
    minibatches: int = 4
    actor_lr: float = 2e-5
    critic_lr: float = 1e-3
    entropy_weight: float = 0.0
    value_weight: float = 0.5
    max_grad_norm: float = 1.0
    hidden_dims: Tuple[int, ...] = (64, 64)
    log_std_init: float = -2.5
    # iterations at the start of a run that fit only the critics
    critic_warmup: int = 10
    # subtract the batch mean from cost advantages (their scale is kept)
    center_cost_advantages: bool = True
    log_std_min: float = -5.0
    log_std_max: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("acppo.gamma must lie in (0, 1)")
        if not 0 <= self.lam <= 1:
            raise ValueError("acppo.lam must lie in [0, 1]")
        if self.surrogate_mode not in ("kl", "clip"):
            raise ValueError("acppo.surrogate_mode must be 'kl' or 'clip'")
        if not self.beta >= 0:
            raise ValueError("acppo.beta must be >= 0")
        if not self.kl_target > 0:
            raise ValueError("acppo.kl_target must be > 0")
        if not self.clip_eps > 0:
            raise ValueError("acppo.clip_eps must be > 0")
        if not (self.t_barrier > 0 and self.t_barrier_final > 0):
            raise ValueError("acppo.t_barrier and acppo.t_barrier_final must be > 0")
        if self.barrier_schedule not in ("constant", "linear"):
            raise ValueError("acppo.barrier_schedule must be 'constant' or 'linear'")
        if self.barrier_anneal_iters < 1:
            raise ValueError("acppo.barrier_anneal_iters must be >= 1")
        for name in ("d_arm", "d_gripper", "d_force", "delta_feas"):
            if not getattr(self, name) > 0:
                raise ValueError(f"acppo.{name} must be > 0")
        if self.cost_return_mode not in ("rate", "discounted"):
            raise ValueError("acppo.cost_return_mode must be 'rate' or 'discounted'")
        if self.epochs < 1 or self.minibatches < 1:
            raise ValueError("acppo.epochs and acppo.minibatches must be >= 1")
        if not (self.actor_lr > 0 and self.critic_lr > 0):
            raise ValueError("acppo.actor_lr and acppo.critic_lr must be > 0")
        if not (self.entropy_weight >= 0 and self.value_weight >= 0):
            raise ValueError("acppo.entropy_weight and acppo.value_weight must be >= 0")
        if not self.max_grad_norm > 0:
            raise ValueError("acppo.max_grad_norm must be > 0")
        if self.critic_warmup < 0:
            raise ValueError("acppo.critic_warmup must be >= 0")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("acppo.hidden_dims must list positive layer sizes")
        if not self.log_std_min < self.log_std_init < self.log_std_max:
            raise ValueError("acppo.log_std_init must lie inside (log_std_min, log_std_max)")

    @property
    def budgets(self) -> np.ndarray:
        return np.array([self.d_arm, self.d_gripper, self.d_force])

    def barrier_t(self, iteration: int) -> float:
        if self.barrier_schedule == "constant":
            return self.t_barrier
        frac = min(iteration / self.barrier_anneal_iters, 1.0)
        return self.t_barrier + frac * (self.t_barrier_final - self.t_barrier)


# ----------------------------------------------------------------------------
# buffer and estimators


@dataclass
class RolloutBuffer:
    obs: np.ndarray  # (T, N, obs)
    actions: np.ndarray  # (T, N, act)
    log_probs: np.ndarray  # (T, N)
    means: np.ndarray  # (T, N, act) behavior means
    log_std: np.ndarray  # (act,) behavior log std
    rewards: np.ndarray  # (T, N)
    costs: np.ndarray  # (T, N, K)
    values: np.ndarray  # (T, N)
    cost_values: np.ndarray  # (T, N, K)
    terminated: np.ndarray  # (T, N) bool
    truncated: np.ndarray  # (T, N) bool
    trunc_values: np.ndarray  # (T, N) value of the final observation where truncated
    trunc_cost_values: np.ndarray  # (T, N, K)
    last_values: np.ndarray  # (N,)
    last_cost_values: np.ndarray  # (N, K)

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_envs(self) -> int:
        return self.rewards.shape[1]

    @property
    def dones(self) -> np.ndarray:
        return self.terminated | self.truncated


def compute_gae(rewards, values, dones, bootstrap, gamma: float, lam: float):
    """Generalized advantage estimates and returns along axis 0.

    ``bootstrap`` is the value after the last step. A done step neither
    bootstraps nor passes advantage back across the boundary.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    if r.shape != v.shape or r.shape != d.shape:
        raise ValueError("rewards, values and dones must share a shape")
    T = r.shape[0]
    adv = np.zeros_like(r)
    next_v = np.asarray(bootstrap, dtype=np.float64)
    last = np.zeros_like(r[0])
    for t in reversed(range(T)):
        nonterm = 1.0 - d[t]
        delta = r[t] + gamma * next_v * nonterm - v[t]
        last = delta + gamma * lam * nonterm * last
        adv[t] = last
        next_v = v[t]
    return adv, adv + v


def estimate_cost_return(costs, dones, gamma: float, mode: str = "discounted") -> float:
    """Estimate of the discounted cost return J_C of the behavior policy.

    ``discounted`` averages sum_t gamma^t c_t over the segments that start at
    the buffer start or right after an episode end. ``rate`` scales the mean
    per-step cost by 1 / (1 - gamma).
    """
    c = np.asarray(costs, dtype=np.float64)
    d = np.asarray(dones, dtype=bool)
    if c.ndim == 1:
        c = c[:, None]
        d = d[:, None]
    if mode == "rate":
        return float(c.mean() / (1.0 - gamma))
    if mode != "discounted":
        raise ValueError(f"unknown cost return mode {mode!r}")
    T, N = c.shape
    totals = []
    for e in range(N):
        acc, disc, active = 0.0, 1.0, True
        for t in range(T):
            if not active:
                acc, disc, active = 0.0, 1.0, True
            acc += disc * c[t, e]
            disc *= gamma
            if d[t, e]:
                totals.append(acc)
                active = False
        if active:
            totals.append(acc)
    return float(np.mean(totals))


def surrogate_cost(J_old: float, ratio_adv_mean: float, gamma: float) -> float:
    return J_old + ratio_adv_mean / (1.0 - gamma)


def barrier(margin, t: float, delta: float = 1e-3):
    """log(margin)/t, continued by its tangent line below ``delta``.

    Returns ``(value, d value / d margin)``.
    """
    m = float(margin)
    if m > delta:
        return math.log(m) / t, 1.0 / (t * m)
    return math.log(delta) / t + (m - delta) / (delta * t), 1.0 / (delta * t)


# ----------------------------------------------------------------------------
# networks and trainer state


@dataclass
class Networks:
    actor_spec: NetSpec
    critic_spec: NetSpec
    actor: Params
    critic: Params
    cost_critics: List[Params]

    @classmethod
    def create(cls, cfg: UpdateConfig, seed: int, obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM):
        a_spec = NetSpec(obs_dim, cfg.hidden_dims, act_dim)
        c_spec = NetSpec(obs_dim, cfg.hidden_dims, 1)
        ss = np.random.SeedSequence(seed).spawn(2 + K_COSTS)
        seeds = [int(s.generate_state(1)[0]) for s in ss]
        actor = net_init(a_spec, seeds[0], actor=True, log_std_init=cfg.log_std_init)
        critic = net_init(c_spec, seeds[1])
        costs = [net_init(c_spec, seeds[2 + k]) for k in range(K_COSTS)]
        return cls(a_spec, c_spec, actor, critic, costs)

    def copy(self) -> "Networks":
        return Networks(self.actor_spec, self.critic_spec, copy_params(self.actor), copy_params(self.critic),
                        [copy_params(p) for p in self.cost_critics])


@dataclass
class Minibatch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    means: np.ndarray
    log_std_old: np.ndarray
    adv: np.ndarray
    returns: np.ndarray
    cost_adv: np.ndarray  # (B, K)
    cost_returns: np.ndarray  # (B, K)

    def __len__(self):
        return len(self.obs)


@dataclass
class LossInfo:
    loss: float
    surrogate: float
    kl: float
    entropy: float
    value_loss: float
    cost_value_loss: float
    J_surr: np.ndarray
    barriers: np.ndarray
    ratio_mean: float
    ratio_max_dev: float


def p3o_loss(mb: Minibatch, nets: Networks, cfg: UpdateConfig, J_old: np.ndarray, beta: float,
             t_barrier: float, constraints: bool = True):
    """Total loss and its gradients for one minibatch.

    loss = -(L_ppo + sum_k barrier_k) - entropy_weight * H + value_weight * critic MSE
    Returns ``(info, grads)`` with ``grads = (actor, critic, [cost critics])``.
    """
    B = len(mb)
    g = cfg.gamma
    scale = 1.0 - g
    mean, a_cache = forward_with_cache(nets.actor_spec, nets.actor, mb.obs)
    log_std = nets.actor["log_std"]
    std2 = np.exp(2.0 * log_std)
    logp = gaussian_logprob(mean, log_std, mb.actions)
    ratio = np.exp(logp - mb.log_probs)
    A = mb.adv
    d_ratio = np.zeros(B)
    kl_vec = gaussian_kl(mean, log_std, mb.means, mb.log_std_old)
    kl = float(np.mean(kl_vec))
    if cfg.surrogate_mode == "kl":
        surr = float(np.mean(ratio * A)) - beta * kl
        d_ratio -= A / B
    else:
        eps = cfg.clip_eps
        unclipped = ratio * A
        clipped = np.clip(ratio, 1 - eps, 1 + eps) * A
        surr = float(np.mean(np.minimum(unclipped, clipped)))
        inside = (ratio > 1 - eps) & (ratio < 1 + eps)
        d_ratio -= np.where((unclipped <= clipped) | inside, A, 0.0) / B
    J_surr = np.array([surrogate_cost(J_old[k], float(np.mean(ratio * mb.cost_adv[:, k])), g)
                       for k in range(K_COSTS)])
    barriers = np.zeros(K_COSTS)
    if constraints:
        budgets = cfg.budgets
        for k in range(K_COSTS):
            val, slope = barrier(budgets[k] - scale * J_surr[k], t_barrier, cfg.delta_feas)
            barriers[k] = val
            # d(-barrier)/d ratio_i = slope * A_Ck,i / B
            d_ratio += slope * mb.cost_adv[:, k] / B
    ent = gaussian_entropy(log_std)

    d_logp = d_ratio * ratio
    diff = mb.actions - mean
    d_mean = d_logp[:, None] * diff / std2
    d_log_std = np.sum(d_logp[:, None] * (diff * diff / std2 - 1.0), axis=0)
    if cfg.surrogate_mode == "kl" and beta > 0:
        var_old = np.exp(2.0 * mb.log_std_old)
        d_mean += beta / B * (mean - mb.means) / var_old
        d_log_std += beta * (-1.0 + std2 / var_old)
    d_log_std -= cfg.entropy_weight
    actor_grads, _ = backward_from_cache(nets.actor_spec, nets.actor, a_cache, d_mean)
    actor_grads["log_std"] = d_log_std

    v_out, v_cache = forward_with_cache(nets.critic_spec, nets.critic, mb.obs)
    err = v_out[:, 0] - scale * mb.returns
    value_loss = float(np.mean(err ** 2))
    critic_grads, _ = backward_from_cache(nets.critic_spec, nets.critic, v_cache,
                                          (cfg.value_weight * 2.0 * err / B)[:, None])
    cost_grads = []
    cost_loss = 0.0
    for k in range(K_COSTS):
        o, cache = forward_with_cache(nets.critic_spec, nets.cost_critics[k], mb.obs)
        e = o[:, 0] - scale * mb.cost_returns[:, k]
        cost_loss += float(np.mean(e ** 2))
        gk, _ = backward_from_cache(nets.critic_spec, nets.cost_critics[k], cache,
                                    (cfg.value_weight * 2.0 * e / B)[:, None])
        cost_grads.append(gk)

    loss = -(surr + float(barriers.sum())) - cfg.entropy_weight * ent + cfg.value_weight * (value_loss + cost_loss)
    info = LossInfo(loss, surr, kl, ent, value_loss, cost_loss, J_surr, barriers,
                    float(np.mean(ratio)), float(np.max(np.abs(ratio - 1.0))))
    return info, (actor_grads, critic_grads, cost_grads)


# ----------------------------------------------------------------------------
# trainer


@dataclass
class Optimizers:
    actor: OptimizerState
    critic: OptimizerState
    costs: List[OptimizerState]

    @classmethod
    def create(cls, nets: Networks, cfg: UpdateConfig):
        kw = dict(max_grad_norm=cfg.max_grad_norm, log_std_bounds=(cfg.log_std_min, cfg.log_std_max))
        return cls(OptimizerState.for_params(nets.actor, lr=cfg.actor_lr, **kw),
                   OptimizerState.for_params(nets.critic, lr=cfg.critic_lr, **kw),
                   [OptimizerState.for_params(p, lr=cfg.critic_lr, **kw) for p in nets.cost_critics])

    def copy(self) -> "Optimizers":
        return Optimizers(self.actor.copy(), self.critic.copy(), [o.copy() for o in self.costs])


@dataclass
class TrainerState:
    nets: Networks
    opts: Optimizers
    iteration: int = 0
    beta: float = 1.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


class Trainer:
    """Owns the networks, the vectorised env and the curriculum for one run."""

    def __init__(self, env: VecEnv, cfg: UpdateConfig, seed: int = 0, horizon: int = 32,
                 constraints: bool = True, actor_init: Optional[Params] = None, reset: bool = True):
        self.env = env
        self.cfg = cfg
        self.horizon = int(horizon)
        self.constraints = bool(constraints)
        nets = Networks.create(cfg, seed)
        if actor_init is not None:
            if set(actor_init) != set(nets.actor) or any(actor_init[k].shape != nets.actor[k].shape for k in actor_init):
                raise ValueError("warm-start actor does not match the configured network shape")
            nets.actor = copy_params(actor_init)
            nets.actor["log_std"] = np.full(ACT_DIM, cfg.log_std_init)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed).spawn(3)[2]))
        self.state = TrainerState(nets, Optimizers.create(nets, cfg), 0, cfg.beta, rng)
        # without a reset the caller restores env state and observations
        self.obs = env.reset() if reset else np.zeros((env.n, OBS_DIM))
        self.t0 = time.perf_counter()
        self.last_wallclock = 0.0

    # convenience
    @property
    def nets(self) -> Networks:
        return self.state.nets

    def act(self, obs, deterministic: bool = True) -> np.ndarray:
        mean = net_forward(self.nets.actor_spec, self.nets.actor, obs)
        if deterministic:
            return mean
        std = np.exp(self.nets.actor["log_std"])
        return mean + std * self.state.rng.standard_normal(mean.shape)

    def values(self, obs) -> Tuple[np.ndarray, np.ndarray]:
        s = 1.0 / (1.0 - self.cfg.gamma)
        v = net_forward(self.nets.critic_spec, self.nets.critic, obs)[:, 0] * s
        vc = np.stack([net_forward(self.nets.critic_spec, p, obs)[:, 0] for p in self.nets.cost_critics], axis=-1) * s
        return v, vc

    def train_iteration(self) -> dict:
        buf, stats = collect_rollouts(self, self.env, self.horizon)
        return update(self, buf, stats)


def collect_rollouts(trainer: Trainer, env: VecEnv, horizon: int):
    """Run the stochastic policy for ``horizon`` steps on every env."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    T, N = horizon, env.n
    nets = trainer.nets
    log_std = nets.actor["log_std"].copy()
    std = np.exp(log_std)
    rng = trainer.state.rng
    z = lambda *s: np.zeros(s)
    obs_b, act_b, mean_b = z(T, N, OBS_DIM), z(T, N, ACT_DIM), z(T, N, ACT_DIM)
    logp_b, rew_b, val_b = z(T, N), z(T, N), z(T, N)
    cost_b, cval_b = z(T, N, K_COSTS), z(T, N, K_COSTS)
    term_b, trunc_b = np.zeros((T, N), bool), np.zeros((T, N), bool)
    tv_b, tcv_b = z(T, N), z(T, N, K_COSTS)
    obs = trainer.obs
    ep_done = 0
    term_sums: Dict[str, float] = {}
    for t in range(T):
        mean = net_forward(nets.actor_spec, nets.actor, obs)
        a = mean + std * rng.standard_normal(mean.shape)
        v, vc = trainer.values(obs)
        res = env.step(a)
        obs_b[t], act_b[t], mean_b[t] = obs, a, mean
        logp_b[t] = gaussian_logprob(mean, log_std, a)
        rew_b[t], cost_b[t] = res.reward, res.costs
        val_b[t], cval_b[t] = v, vc
        term_b[t], trunc_b[t] = res.terminated, res.truncated
        if res.truncated.any():
            fv, fcv = trainer.values(res.final_obs)
            tv_b[t] = np.where(res.truncated, fv, 0.0)
            tcv_b[t] = np.where(res.truncated[:, None], fcv, 0.0)
        ep_done += int((res.terminated | res.truncated).sum())
        for name, v in res.terms.items():
            term_sums[name] = term_sums.get(name, 0.0) + float(np.sum(v))
        obs = res.obs
    trainer.obs = obs
    lv, lcv = trainer.values(obs)
    buf = RolloutBuffer(obs_b, act_b, logp_b, mean_b, log_std, rew_b, cost_b, val_b, cval_b,
                        term_b, trunc_b, tv_b, tcv_b, lv, lcv)
    terms = {f"r_{k}": v / (T * N) for k, v in term_sums.items()}
    return buf, {"episodes": ep_done, "failures": int(term_b.sum()), "terms": terms}


def advantages(buf: RolloutBuffer, cfg: UpdateConfig):
    g = cfg.gamma
    dones = buf.dones
    r = buf.rewards + g * buf.trunc_values
    adv, ret = compute_gae(r, buf.values, dones, buf.last_values, g, cfg.lam)
    cadv = np.zeros_like(buf.costs)
    cret = np.zeros_like(buf.costs)
    for k in range(K_COSTS):
        ck = buf.costs[..., k] + g * buf.trunc_cost_values[..., k]
        cadv[..., k], cret[..., k] = compute_gae(ck, buf.cost_values[..., k], dones,
                                                 buf.last_cost_values[:, k], g, cfg.lam)
    return adv, ret, cadv, cret


def normalize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / (x.std() + 1e-8)


def update(trainer: Trainer, buf: RolloutBuffer, stats: Optional[dict] = None) -> dict:
    """One optimisation phase over ``buf``; returns the iteration metrics.

    A non-finite loss or gradient restores the networks and optimizer state
    from the start of the phase and flags ``rolled_back``.
    """
    cfg = trainer.cfg
    st = trainer.state
    stats = stats or {}
    adv, ret, cadv, cret = advantages(buf, cfg)
    adv_n = normalize(adv)
    if cfg.center_cost_advantages:
        cadv = cadv - cadv.reshape(-1, K_COSTS).mean(axis=0)
    J_old = np.array([estimate_cost_return(buf.costs[..., k], buf.dones, cfg.gamma, cfg.cost_return_mode)
                      for k in range(K_COSTS)])
    T, N = buf.horizon, buf.n_envs
    flat = lambda x: x.reshape(T * N, *x.shape[2:])
    data = dict(obs=flat(buf.obs), actions=flat(buf.actions), log_probs=flat(buf.log_probs),
                means=flat(buf.means), adv=flat(adv_n), returns=flat(ret), cost_adv=flat(cadv),
                cost_returns=flat(cret))
    total = T * N
    t_bar = cfg.barrier_t(st.iteration)
    backup_nets, backup_opts = st.nets.copy(), st.opts.copy()
    rolled_back = False
    infos: List[LossInfo] = []
    first_ratio_dev = None
    try:
        for epoch in range(cfg.epochs):
            perm = st.rng.permutation(total)
            for chunk in np.array_split(perm, cfg.minibatches):
                if len(chunk) == 0:
                    continue
                mb = Minibatch(log_std_old=buf.log_std, **{k: v[chunk] for k, v in data.items()})
                info, (ga, gc, gk) = p3o_loss(mb, st.nets, cfg, J_old, st.beta, t_bar, trainer.constraints)
                if first_ratio_dev is None:
                    first_ratio_dev = info.ratio_max_dev
                if not np.isfinite(info.loss):
                    raise NonFiniteGradient("non-finite loss")
                if st.iteration >= cfg.critic_warmup:
                    st.nets.actor, st.opts.actor = opt_step(st.nets.actor, ga, st.opts.actor)
                st.nets.critic, st.opts.critic = opt_step(st.nets.critic, gc, st.opts.critic)
                for k in range(K_COSTS):
                    st.nets.cost_critics[k], st.opts.costs[k] = opt_step(st.nets.cost_critics[k], gk[k], st.opts.costs[k])
                infos.append(info)
    except (NonFiniteGradient, FloatingPointError):
        st.nets, st.opts = backup_nets, backup_opts
        rolled_back = True

    mean_new = net_forward(st.nets.actor_spec, st.nets.actor, data["obs"])
    kl = float(np.mean(gaussian_kl(mean_new, st.nets.actor["log_std"], data["means"], buf.log_std)))
    beta_used = st.beta
    warm = st.iteration < cfg.critic_warmup
    if cfg.surrogate_mode == "kl" and cfg.adaptive_beta and not rolled_back and not warm:
        if kl > 2.0 * cfg.kl_target:
            st.beta *= 2.0
        elif kl < cfg.kl_target / 2.0:
            st.beta /= 2.0
        st.beta = float(min(max(st.beta, 1e-4), 1e4))

    mean_reward = float(buf.rewards.mean())
    env = trainer.env
    env.curriculum = update_on_iteration(env.curriculum, env.ccfg, mean_reward, stats.get("episodes", 0))
    sig = current_sigma(env.curriculum, env.ccfg)
    st.iteration += 1
    rate = 1.0 - cfg.gamma
    m = {
        "iter": st.iteration,
        "mean_reward": mean_reward,
        "J_c_arm": float(J_old[0] * rate),
        "J_c_gripper": float(J_old[1] * rate),
        "J_c_force": float(J_old[2] * rate),
        "kl": kl,
        "entropy": gaussian_entropy(st.nets.actor["log_std"]),
        "sigma_level": int(env.curriculum.level),
        "wallclock": time.perf_counter() - trainer.t0,
        "action_std": float(np.mean(np.exp(st.nets.actor["log_std"]))),
        "beta": beta_used,
        "sigma_x": float(sig[0]),
        "sigma_z": float(sig[1]),
        "episodes": int(stats.get("episodes", 0)),
        "failures": int(stats.get("failures", 0)),
        "value_loss": float(np.mean([i.value_loss for i in infos])) if infos else float("nan"),
        "first_ratio_dev": float(first_ratio_dev if first_ratio_dev is not None else 0.0),
        "rolled_back": rolled_back,
    }
    m.update(stats.get("terms", {}))
    trainer.last_wallclock = m["wallclock"]
    if trainer.constraints:
        last = infos[-1].barriers if infos else np.zeros(K_COSTS)
        for k, name in enumerate(COST_NAMES):
            m[f"barrier_{name}"] = float(last[k])
        m["t_barrier"] = t_bar
    return m


# ----------------------------------------------------------------------------
# evaluation


@dataclass
class CaseReport:
    vx_cmd: float
    vel_error: float
    grip_error: float
    violation: Dict[str, float]
    mean_cost: Dict[str, float]
    joint_violation: List[float]
    episode_lengths: List[int]
    survival: float
    trace: Dict[str, np.ndarray]

    def summary(self) -> dict:
        return {"vx_cmd": self.vx_cmd, "vel_error": self.vel_error, "grip_error": self.grip_error,
                "violation": self.violation, "mean_cost": self.mean_cost,
                "joint_violation": self.joint_violation, "mean_episode_length": float(np.mean(self.episode_lengths)),
                "survival": self.survival}


TRACE_COLUMNS = (
    ["step", "time", "v_x", "v_x_cmd", "p_ee_x", "p_ee_z", "p_ee_cmd_x", "p_ee_cmd_z", "theta",
     "c_arm", "c_gripper", "c_force"]
    + [f"q{i}" for i in range(9)] + [f"qd{i}" for i in range(9)] + [f"tau{i}" for i in range(6)]
    + [f"f{i}_{ax}" for i in range(1, 4) for ax in "xz"]
)


def evaluate(policy, model, task_cfg, ccfg: CurriculumConfig, n_episodes: int = 64, steps: int = 500,
             vx_cases: Sequence[float] = (0.5,), ee_step: float = 0.002, seed: int = 12345,
             budgets: Optional[np.ndarray] = None, threads: int = 1) -> List[CaseReport]:
    """Deterministic evaluation on fixed-velocity cases.

    Every episode starts with the gripper at its target, which then
    random-walks with ``ee_step`` (m per control step) inside the goal box.
    ``policy`` maps an observation batch to actions. Steps after a failure
    are not counted.
    """
    from dataclasses import replace

    budgets = np.array([0.05, 0.6, 5.0]) if budgets is None else np.asarray(budgets)
    tight = replace(ccfg, enabled=True, base_sigma=(1e-9, 1e-9), step_sigma=(1e-9, 1e-9))
    reports = []
    for ci, vx in enumerate(vx_cases):
        env = VecEnv(model, replace(task_cfg, ee_walk_step=0.0, t_max=steps + 1), tight, n_episodes, seed + ci, threads)
        env.reset()
        env.vx_cmd[:] = vx
        walk_rng = np.random.default_rng(seed + 1000 + ci)
        obs = env.observe()
        alive = np.ones(n_episodes, bool)
        lengths = np.zeros(n_episodes, int)
        verr, gerr, cnt = 0.0, 0.0, 0
        viol = np.zeros(K_COSTS)
        csum = np.zeros(K_COSTS)
        jviol = np.zeros(3)
        rows = []
        for s in range(steps):
            act = policy(obs)
            res = env.step(act)
            # the step may have reset an env; read the pre-reset quantities
            raw = res.final_obs / np.asarray(task_cfg.obs_scales)
            vx_now, p_ee = raw[:, 1], raw[:, 16:18]
            q_arm = raw[:, 10:13]
            m = alive & ~res.terminated
            if m.any():
                verr += float(np.abs(vx_now - vx)[m].sum())
                gerr += float(np.linalg.norm(p_ee - raw[:, 20:22], axis=1)[m].sum())
                viol += ((res.costs > np.array([0.0, budgets[1], 0.0])) & m[:, None]).sum(0)
                csum += (res.costs * m[:, None]).sum(0)
                jv = (q_arm > model.arm_upper) | (q_arm < model.arm_lower)
                jviol += (jv & m[:, None]).sum(0)
                cnt += int(m.sum())
            lengths += alive
            if alive[0]:
                st = env.state(0) if not (res.terminated[0] or res.truncated[0]) else None
                q = st.q if st is not None else np.full(9, np.nan)
                qd = st.qdot if st is not None else np.full(9, np.nan)
                rows.append([s, (s + 1) * task_cfg.control_dt, vx_now[0], vx, p_ee[0, 0], p_ee[0, 1],
                             raw[0, 20], raw[0, 21], raw[0, 4], *res.costs[0], *q, *qd,
                             *env.torques[0], *env.link_forces[0].reshape(-1)])
            alive &= ~res.terminated
            if ee_step > 0:
                env.p_ee_cmd += ee_step * walk_rng.standard_normal((n_episodes, 2))
                np.clip(env.p_ee_cmd, ccfg.goal_low, ccfg.goal_high, out=env.p_ee_cmd)
            env.vx_cmd[:] = vx
            obs = env.observe()
        cnt = max(cnt, 1)
        trace = {c: np.array([r[i] for r in rows]) for i, c in enumerate(TRACE_COLUMNS)}
        reports.append(CaseReport(
            float(vx), verr / cnt, gerr / cnt,
            {n: float(viol[k] / cnt) for k, n in enumerate(COST_NAMES)},
            {n: float(csum[k] / cnt) for k, n in enumerate(COST_NAMES)},
            [float(x / cnt) for x in jviol], lengths.tolist(), float(alive.mean()), trace))
    return reports


# ----------------------------------------------------------------------------
# estimator facade


class ACPPO(BaseEstimator):
    """Estimator-style wrapper around a full training run.

    ``fit()`` trains with the given run configuration; ``predict(obs)``
    returns deterministic (mean) actions.
    """

    def __init__(self, config=None, ablate=None, warm_start=None, threads=1):
        self.config = config
        self.ablate = ablate
        self.warm_start = warm_start
        self.threads = threads

    def fit(self, X=None, y=None, callback=None):
        from .runner import build_trainer

        trainer = build_trainer(self.config, ablate=self.ablate, warm_start=self.warm_start, threads=self.threads)
        self.metrics_ = []
        for _ in range(trainer_iterations(self.config)):
            m = trainer.train_iteration()
            self.metrics_.append(m)
            if callback is not None:
                callback(m)
        self.trainer_ = trainer
        return self

    def predict(self, X):
        check_is_fitted(self, "trainer_")
        X = check_array(X, dtype=np.float64)
        return self.trainer_.act(X)


def trainer_iterations(config) -> int:
    from .config import RunConfig

    return (config or RunConfig()).run.iterations
