"""Exploration noise: OU and random-walk processes, per-episode mode mixing, noise scheduling."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigurationError

ACTION_MODES = ("ou", "gaussian", "random_walk")
MODES = ACTION_MODES + ("parameter",)
CORRELATED_GAUSSIAN_THETA = 0.01


@dataclass(frozen=True)
class OUState:
    """Ornstein-Uhlenbeck process state; ``sigma`` decays linearly to ``sigma_min``.

    ``sigma_decay_steps == 0`` keeps ``sigma`` constant.
    """

    x: np.ndarray
    theta: float = 0.1
    mu: float = 0.0
    sigma: float = 0.2
    sigma_min: float = 0.05
    dt: float = 1e-2
    sigma_decay_steps: int = 0
    t: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError("OU dt must be positive")
        if not self.sigma >= self.sigma_min >= 0:
            raise ConfigurationError("OU requires sigma >= sigma_min >= 0")
        if self.sigma_decay_steps < 0:
            raise ConfigurationError("sigma_decay_steps must be non-negative")

    @classmethod
    def zeros(cls, dim: int, **kw) -> "OUState":
        mu = kw.get("mu", 0.0)
        return cls(np.full(dim, mu, dtype=np.float64), **kw)

    def current_sigma(self, t: int | None = None) -> float:
        t = self.t if t is None else t
        if self.sigma_decay_steps == 0:
            return self.sigma
        if t >= self.sigma_decay_steps:
            return self.sigma_min
        return self.sigma + (self.sigma_min - self.sigma) * (t / self.sigma_decay_steps)

    def stationary_std(self) -> float:
        """Closed form for the discrete AR(1) recursion at the current sigma."""
        a = 1.0 - self.theta * self.dt
        return math.sqrt(self.current_sigma() ** 2 * self.dt / (1.0 - a * a))


def ou_sample(state: OUState, rng: np.random.Generator) -> tuple[np.ndarray, OUState]:
    """One step ``x' = x + theta (mu - x) dt + sigma sqrt(dt) N(0, I)``; returns ``(x', state')``."""
    sigma = state.current_sigma()
    eps = rng.standard_normal(state.x.shape)
    x = state.x + state.theta * (state.mu - state.x) * state.dt + sigma * math.sqrt(state.dt) * eps
    return x, replace(state, x=x, t=state.t + 1)


def ou_sequence(state: OUState, n: int, rng: np.random.Generator) -> tuple[np.ndarray, OUState]:
    """``n`` consecutive OU samples, shape ``(n, dim)``; same normal draws as ``n`` ``ou_sample`` calls.

    Values agree with the step-by-step recursion up to floating point rounding.
    """
    dim = state.x.shape[0]
    eps = rng.standard_normal((n, dim))
    steps = np.arange(state.t, state.t + n)
    if state.sigma_decay_steps == 0:
        sig = np.full(n, state.sigma)
    else:
        sig = np.where(steps >= state.sigma_decay_steps, state.sigma_min,
                       state.sigma + (state.sigma_min - state.sigma) * (steps / state.sigma_decay_steps))
    a = 1.0 - state.theta * state.dt
    drive = state.theta * state.mu * state.dt + (sig * math.sqrt(state.dt))[:, None] * eps
    out, _ = lfilter([1.0], [1.0, -a], drive, axis=0, zi=(a * state.x)[None, :])
    return out, replace(state, x=out[-1].copy(), t=state.t + n)


def random_walk_gaussian(prev_noise: np.ndarray, step_sigma: float, clip: float,
                         rng: np.random.Generator) -> np.ndarray:
    """Add an ``N(0, step_sigma^2)`` increment and clamp to ``[-clip, clip]``."""
    if clip <= 0:
        raise ConfigurationError("random-walk clip must be positive")
    prev = np.asarray(prev_noise, dtype=np.float64)
    return np.clip(prev + step_sigma * rng.standard_normal(prev.shape), -clip, clip)


@dataclass(frozen=True)
class NoisePolicy:
    """Per-sampler exploration settings.

    ``mode`` is the action-noise process used when the per-episode draw
    picks action noise. ``scale`` multiplies the action noise and shrinks by
    ``decay`` on every schedule step; once below ``off_below`` exploration is
    switched off until the uncertainty signal exceeds ``on_above``.
    """

    mode: str = "ou"
    p_action: float = 0.7
    p_parameter: float = 0.3
    scale: float = 1.0
    decay: float = 1.0
    off_below: float = 0.0
    on_above: float = math.inf
    enabled: bool = True
    random_walk_sigma: float = 0.05
    random_walk_clip: float = 0.3

    def __post_init__(self):
        if self.mode not in ACTION_MODES:
            raise ConfigurationError(f"action-noise mode must be one of {ACTION_MODES}, got {self.mode!r}")
        if min(self.p_action, self.p_parameter) < 0 or abs(self.p_action + self.p_parameter - 1.0) > 1e-12:
            raise ConfigurationError("p_action and p_parameter must be non-negative and sum to 1")
        if self.off_below > self.on_above:
            raise ConfigurationError("off_below must not exceed on_above")
        if self.decay <= 0 or self.scale < 0:
            raise ConfigurationError("decay must be positive and scale non-negative")


def select_noise_mode(policy: NoisePolicy, rng: np.random.Generator) -> str:
    """One draw per episode: ``"parameter"`` with probability ``p_parameter``, else ``policy.mode``."""
    u = rng.random()
    return "parameter" if u < policy.p_parameter else policy.mode


def noise_schedule_step(policy: NoisePolicy, uncertainty_signal: float = 0.0) -> NoisePolicy:
    if uncertainty_signal < 0:
        raise ConfigurationError("uncertainty signal must be non-negative")
    if policy.enabled:
        scale = policy.scale * policy.decay
        return replace(policy, scale=scale, enabled=not scale < policy.off_below)
    if uncertainty_signal > policy.on_above:
        return replace(policy, scale=policy.on_above, enabled=True)
    return policy


def uncertainty_from_returns(returns, reference: float | None = None) -> float:
    """Dispersion of recent evaluation returns, divided by ``|reference|`` (default: |mean|)."""
    r = np.asarray(returns, dtype=np.float64)
    if r.size < 2:
        return 0.0
    ref = abs(float(r.mean())) if reference is None else abs(reference)
    return float(r.std()) / max(ref, 1e-8)


class ActionNoise:
    """Stateful action-noise generator for one episode."""

    def __init__(self, mode: str, act_dim: int, policy: NoisePolicy, ou: OUState | None = None):
        if mode not in ACTION_MODES:
            raise ConfigurationError(f"not an action-noise mode: {mode!r}")
        self.mode = mode
        self.policy = policy
        if mode == "gaussian":
            base = ou or OUState.zeros(act_dim)
            ou = replace(base, theta=CORRELATED_GAUSSIAN_THETA)
        self.ou = ou or OUState.zeros(act_dim)
        self.x = np.zeros(act_dim)

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        if not self.policy.enabled:
            return np.zeros_like(self.x)
        if self.mode == "random_walk":
            self.x = random_walk_gaussian(self.x, self.policy.random_walk_sigma, self.policy.random_walk_clip, rng)
        else:
            self.x, self.ou = ou_sample(self.ou, rng)
        return self.policy.scale * self.x
