"""Reward shaping terms layered on top of the distance reward."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigurationError
from .symrunner import RunnerState, wrap_angle


@dataclass(frozen=True)
class ShapingConfig:
    velocity_reward: bool = False
    step_bonus: float = 0.01
    straight_leg_penalty_weight: float = 0.0
    knee_bonus: float = 0.0
    knee_interval: tuple[float, float] = (0.6, 2.6)
    lean_penalty_weight: float = 0.0
    fall_penalty: float = 0.0
    reward_scale: float = 1.0

    def __post_init__(self):
        weights = (self.step_bonus, self.straight_leg_penalty_weight, self.knee_bonus,
                   self.lean_penalty_weight, self.fall_penalty)
        if any(w < 0 for w in weights):
            raise ConfigurationError("shaping weights must be non-negative")
        lo, hi = self.knee_interval
        if not lo < hi:
            raise ConfigurationError("knee interval needs lo < hi")

    @classmethod
    def off(cls, reward_scale: float = 1.0) -> "ShapingConfig":
        return cls(step_bonus=0.0, reward_scale=reward_scale)


def leg_split(state: RunnerState) -> float:
    return abs(wrap_angle(state.phi_L - state.phi_R))


def lean(state: RunnerState) -> float:
    """Forward lean; SymRunner has no separate head and pelvis, so this is always 0."""
    return 0.0


def shape_reward(raw_reward: float, state: RunnerState, next_state: RunnerState, cfg: ShapingConfig,
                 dt: float = 0.01) -> float:
    progress = raw_reward
    if cfg.velocity_reward:
        elapsed = (next_state.step_count - state.step_count) * dt
        progress = raw_reward / elapsed if elapsed > 0 else 0.0
    split = leg_split(next_state)
    lo, hi = cfg.knee_interval
    knee = cfg.knee_bonus if lo <= split <= hi else 0.0
    straightness = max(0.0, 0.2 - split)
    fell = next_state.fallen and not state.fallen
    shaped = (progress + cfg.step_bonus + knee
              - cfg.straight_leg_penalty_weight * straightness
              - cfg.lean_penalty_weight * max(0.0, lean(next_state))
              - cfg.fall_penalty * float(fell))
    return cfg.reward_scale * shaped
