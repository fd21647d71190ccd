"""Agent-facing environment: action repeat, observation pipeline and shaping."""

from __future__ import annotations

from importlib import resources

import numpy as np

from ..errors import ConfigurationError, ContractError
from .observation import ENRICHED_DIM, ObservationEnricher, ObsNormalizer, get_layout
from .shaping import ShapingConfig, shape_reward
from .symrunner import RAW_CHANNELS, EnvConfig, RunnerState, reset, step

_PX = RAW_CHANNELS.index("p_x")


def default_normalizer(layout: str) -> ObsNormalizer:
    """Frozen hand-tuned statistics shipped with the package."""
    path = resources.files("l2run.data") / f"{layout}_stats.txt"
    if not path.is_file():
        raise ConfigurationError(f"no default stats for layout {layout!r}")
    with resources.as_file(path) as p:
        return ObsNormalizer.load(p)


class RunnerEnv:
    """SymRunner with frameskip, optional enrichment, normalization and shaping.

    ``step`` returns ``(obs, reward, done, info)`` where ``reward`` is shaped
    (and scaled) and ``info`` carries the raw reward, the distance so far and
    whether the runner fell.
    """

    act_dim = 4
    action_low = 0.0
    action_high = 1.0

    def __init__(self, config: EnvConfig = EnvConfig(), repeat: int = 5, layout: str = "raw",
                 first_person: bool = True, shaping: ShapingConfig | None = None,
                 normalizer: ObsNormalizer | str | None = "default"):
        if repeat < 1:
            raise ConfigurationError("repeat must be positive")
        get_layout(layout)
        self.config = config
        self.repeat = repeat
        self.layout = layout
        self.first_person = first_person
        self.shaping = shaping
        if normalizer == "default":
            normalizer = default_normalizer(layout)
        self.normalizer = normalizer
        self.obs_dim = ENRICHED_DIM if layout == "enriched" else len(RAW_CHANNELS)
        if normalizer is not None and len(normalizer.mean) != self.obs_dim:
            raise ConfigurationError("normalizer channel count does not match the layout")
        self.enricher = ObservationEnricher(repeat * config.dt) if layout == "enriched" else None
        self.state: RunnerState | None = None

    def _process(self, raw: np.ndarray, first: bool) -> np.ndarray:
        if self.enricher is not None:
            obs = self.enricher.reset(raw) if first else self.enricher.push(raw)
        else:
            obs = raw.copy()
            if self.first_person:
                obs[_PX] = 0.0
        if self.normalizer is not None:
            obs = self.normalizer(obs)
        return obs.astype(np.float32)

    def reset(self, seed: int) -> np.ndarray:
        self.state, raw = reset(seed, self.config)
        return self._process(raw, True)

    def step(self, action) -> tuple[np.ndarray, float, bool, dict]:
        if self.state is None:
            raise ContractError("reset must be called first")
        prev = self.state
        self.state, raw, reward, done = step(prev, action, self.repeat, self.config)
        shaped = reward if self.shaping is None else shape_reward(reward, prev, self.state, self.shaping,
                                                                  self.config.dt)
        info = {"raw_reward": reward, "distance": self.state.p_x, "fell": self.state.fallen,
                "substeps": self.state.step_count - prev.step_count}
        return self._process(raw, False), float(shaped), done, info
