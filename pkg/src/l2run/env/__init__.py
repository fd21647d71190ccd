from .observation import (ENRICHED_DIM, ObservationEnricher, ObsNormalizer, enrich_observation,
                          get_layout, normalize_observation, reflect_batch, reflect_transition)
from .shaping import ShapingConfig, shape_reward
from .symrunner import (ACTION_CHANNELS, RAW_CHANNELS, EnvConfig, RunnerState, SymRunner, mirror_action,
                        mirror_state, observe, reset, step)
from .wrapper import RunnerEnv, default_normalizer

__all__ = [
    "ACTION_CHANNELS", "ENRICHED_DIM", "EnvConfig", "ObsNormalizer", "ObservationEnricher", "RAW_CHANNELS",
    "RunnerEnv", "RunnerState", "ShapingConfig", "SymRunner", "default_normalizer", "enrich_observation",
    "get_layout", "mirror_action", "mirror_state", "normalize_observation", "observe", "reflect_batch",
    "reflect_transition", "reset", "shape_reward", "step",
]
