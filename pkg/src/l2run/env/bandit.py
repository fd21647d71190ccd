"""One-step continuous bandit with reward ``-(a - target)^2``, exposing the runner env interface."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .observation import register_layout

register_layout("bandit", ("bias",), act_perm=[0])


@dataclass
class _BanditState:
    p_x: float = 0.0
    fallen: bool = False


class QuadraticBandit:
    layout = "bandit"

    act_dim = 1
    obs_dim = 1

    def __init__(self, target: float = 0.3, action_low: float = 0.0, action_high: float = 1.0):
        self.target = target
        self.action_low = action_low
        self.action_high = action_high
        self.state = _BanditState()

    def reset(self, seed: int) -> np.ndarray:
        self.state = _BanditState()
        return np.ones(self.obs_dim, dtype=np.float32)

    def step(self, action):
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        r = -float(np.sum((a - self.target) ** 2))
        return np.ones(self.obs_dim, dtype=np.float32), r, True, {"raw_reward": r, "fell": False, "terminal": True,
                                                               "substeps": 1}
