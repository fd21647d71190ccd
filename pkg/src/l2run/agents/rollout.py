"""Episode rollouts shared by training, evaluation and mining."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..transition import Transition

Policy = Callable[[np.ndarray], np.ndarray]
NoiseFn = Callable[[np.random.Generator], np.ndarray]


@dataclass
class EpisodeResult:
    transitions: list[Transition] = field(default_factory=list)
    raw_return: float = 0.0
    shaped_return: float = 0.0
    distance: float = 0.0
    fell: bool = False
    steps: int = 0
    substeps: int = 0
    actions: list[np.ndarray] = field(default_factory=list)


def terminal(done: bool, info: dict) -> bool:
    """Whether bootstrapping stops here: a fall ends the return, a time limit does not."""
    return bool(info.get("terminal", done and info["fell"]))


def run_episode(env, policy: Policy, seed: int, noise: NoiseFn | None = None,
                rng: np.random.Generator | None = None, warm_start: int = 0,
                max_steps: int | None = None, record: bool = True, keep_actions: bool = False,
                on_step: Callable[[int], None] | None = None) -> EpisodeResult:
    """Roll out one episode of ``env`` from ``seed``.

    The first ``warm_start`` steps use uniformly random actions and are not
    recorded. Noise, when given, is added to the policy action and the sum is
    clipped to the action box. ``on_step`` is called after every step with
    the step index (used for per-step learning).
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    low, high = env.action_low, env.action_high
    out = EpisodeResult()
    obs = env.reset(seed)
    done = False
    t = 0
    while not done and (max_steps is None or t < max_steps):
        if t < warm_start:
            action = rng.uniform(low, high, size=env.act_dim)
        else:
            action = np.asarray(policy(obs), dtype=np.float64)
            if noise is not None:
                action = action + noise(rng)
            action = np.clip(action, low, high)
        nxt, reward, done, info = env.step(action)
        out.raw_return += info["raw_reward"]
        out.shaped_return += reward
        out.substeps += info["substeps"]
        if keep_actions:
            out.actions.append(action)
        if record and t >= warm_start:
            out.transitions.append(Transition(obs, action.astype(np.float32), float(reward), nxt,
                                              terminal(done, info), layout=env.layout))
        obs = nxt
        t += 1
        if on_step is not None:
            on_step(t)
    out.steps = t
    out.distance = float(env.state.p_x)
    out.fell = bool(env.state.fallen)
    return out


def evaluate(env, policy: Policy, seeds) -> list[EpisodeResult]:
    """Noise-free episodes, one per seed."""
    return [run_episode(env, policy, int(s), record=False) for s in seeds]
