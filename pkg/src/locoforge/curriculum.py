"""Reward-aware reset curriculum for the gripper.

The initial gripper position is drawn around the goal with a per-axis spread
that grows with training progress ``t``::

    var_axis = base_sigma_axis**2 * (1 + (t / T) * D**2)
    sigma_axis = sqrt(var_axis) + level * step_sigma_axis

``level`` goes up by one whenever the moving average of the mean reward
reaches ``threshold_fraction`` of the analytic maximum.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class CurriculumConfig:
    goal_low: Tuple[float, float] = (0.3, 0.05)
    goal_high: Tuple[float, float] = (0.65, 0.45)
    base_sigma: Tuple[float, float] = (0.5, 0.2)
    step_sigma: Tuple[float, float] = (0.5, 0.1)
    threshold_fraction: float = 0.9
    D: float = 1.0
    T: int = 300
    max_level: int = 3
    reward_window: int = 10
    max_reward_estimate: float = 3.0
    # "iteration": t counts training iterations; "episode": t counts finished episodes
    progress_mode: str = "iteration"
    clamp_to_box: bool = True
    max_tries: int = 20
    enabled: bool = True

    def __post_init__(self):
        if len(self.goal_low) != 2 or len(self.goal_high) != 2:
            raise ValueError("curriculum.goal_low/goal_high hold 2 values")
        if any(lo >= hi for lo, hi in zip(self.goal_low, self.goal_high)):
            raise ValueError("curriculum.goal_low must be < goal_high per axis")
        for name in ("base_sigma", "step_sigma"):
            v = getattr(self, name)
            if len(v) != 2 or min(v) <= 0:
                raise ValueError(f"curriculum.{name} must hold 2 values > 0")
        if not 0.0 < self.threshold_fraction < 1.0:
            raise ValueError("curriculum.threshold_fraction must lie in (0, 1)")
        if not self.D > 0:
            raise ValueError("curriculum.D must be > 0")
        if self.T < 1:
            raise ValueError("curriculum.T must be >= 1")
        if self.max_level < 0:
            raise ValueError("curriculum.max_level must be >= 0")
        if self.reward_window < 1:
            raise ValueError("curriculum.reward_window must be >= 1")
        if not self.max_reward_estimate > 0:
            raise ValueError("curriculum.max_reward_estimate must be > 0")
        if self.progress_mode not in ("iteration", "episode"):
            raise ValueError("curriculum.progress_mode must be 'iteration' or 'episode'")
        if self.max_tries < 1:
            raise ValueError("curriculum.max_tries must be >= 1")

    @property
    def box_extent(self) -> np.ndarray:
        return np.asarray(self.goal_high) - np.asarray(self.goal_low)


@dataclass(frozen=True)
class CurriculumState:
    level: int = 0
    progress: int = 0
    reward_ma: float = 0.0
    max_reward_estimate: float = 3.0
    history: Tuple[float, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {"level": self.level, "progress": self.progress, "reward_ma": self.reward_ma,
                "max_reward_estimate": self.max_reward_estimate, "history": list(self.history)}

    @classmethod
    def from_dict(cls, d: dict) -> "CurriculumState":
        return cls(int(d["level"]), int(d["progress"]), float(d["reward_ma"]),
                   float(d["max_reward_estimate"]), tuple(float(x) for x in d["history"]))


def initial_state(cfg: CurriculumConfig) -> CurriculumState:
    return CurriculumState(max_reward_estimate=cfg.max_reward_estimate)


def variance_multiplier(t: float, cfg: CurriculumConfig) -> float:
    frac = min(max(t, 0), cfg.T) / cfg.T
    return 1.0 + frac * cfg.D ** 2


def current_sigma(cstate: CurriculumState, cfg: CurriculumConfig, clamp: Optional[bool] = None) -> np.ndarray:
    base = np.asarray(cfg.base_sigma, dtype=np.float64)
    sig = np.sqrt(base ** 2 * variance_multiplier(cstate.progress, cfg))
    sig = sig + cstate.level * np.asarray(cfg.step_sigma, dtype=np.float64)
    if cfg.clamp_to_box if clamp is None else clamp:
        sig = np.minimum(sig, cfg.box_extent)
    return sig


def sample_goal(cfg: CurriculumConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(cfg.goal_low, cfg.goal_high)


def sample_initial_ee(
    cstate: CurriculumState,
    cfg: CurriculumConfig,
    rng: np.random.Generator,
    reachable: Optional[Callable[[np.ndarray], bool]] = None,
):
    """Draw ``(P_goal, P_ee_init)``.

    ``P_ee_init`` is Gaussian around the goal, redrawn until ``reachable``
    accepts it (at most ``max_tries`` times, then the goal itself). With the
    curriculum disabled the start is uniform in the goal box, independent of
    the goal.
    """
    goal = sample_goal(cfg, rng)
    if not cfg.enabled:
        return goal, rng.uniform(cfg.goal_low, cfg.goal_high)
    sigma = current_sigma(cstate, cfg)
    for _ in range(cfg.max_tries):
        p = goal + sigma * rng.standard_normal(2)
        if reachable is None or reachable(p):
            return goal, p
    return goal, goal.copy()


def update_on_iteration(cstate: CurriculumState, cfg: CurriculumConfig, mean_episode_reward: float,
                        episodes: int = 0) -> CurriculumState:
    if not np.isfinite(mean_episode_reward):
        raise ValueError("mean reward must be finite")
    step = episodes if cfg.progress_mode == "episode" else 1
    progress = min(cstate.progress + step, cfg.T)
    hist = (cstate.history + (float(mean_episode_reward),))[-cfg.reward_window:]
    ma = float(np.mean(hist))
    level = cstate.level
    if cfg.enabled and ma >= cfg.threshold_fraction * cstate.max_reward_estimate and level < cfg.max_level:
        level += 1
        hist = ()
        ma = 0.0
    return replace(cstate, level=level, progress=progress, reward_ma=ma, history=hist)
