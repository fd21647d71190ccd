"""Learning algorithms: DDPG, actor-critic ensembles, double-bootstrapped DDPG, PPO and policy tools."""

from .ace import ACETrainer, EnsembleAgent, ace_select_action, ace_training_target, parse_composition
from .blend import SwitchingPolicy, blend_policies, blended_policy, transition_schedule
from .common import ActionBox, actor_action, critic_value
from .dbddpg import (DBDDPGAgent, DBDDPGConfig, create_dbddpg, dbddpg_run_episode, dbddpg_update,
                     ensemble_action, eq_matrix)
from .ddpg import DDPGAgent, DDPGConfig, create_ddpg, ddpg_targets, ddpg_update
from .finetune import PlateauDetector, TwoStageSchedule, two_stage_finetune
from .patterns import PatternTable, mine_patterns, pattern_dqn_select
from .ppo import PPOAgent, PPOConfig, collect_rollout, compute_gae, create_ppo, ppo_update
from .rollout import EpisodeResult, evaluate, run_episode

__all__ = [
    "ACETrainer", "ActionBox", "DBDDPGAgent", "DBDDPGConfig", "DDPGAgent", "DDPGConfig", "EnsembleAgent",
    "EpisodeResult", "PPOAgent", "PPOConfig", "PatternTable", "PlateauDetector", "SwitchingPolicy",
    "TwoStageSchedule", "ace_select_action", "ace_training_target", "actor_action", "blend_policies",
    "blended_policy", "collect_rollout", "compute_gae", "create_dbddpg", "create_ddpg", "create_ppo",
    "critic_value", "dbddpg_run_episode", "dbddpg_update", "ddpg_targets", "ddpg_update", "ensemble_action",
    "eq_matrix", "evaluate", "mine_patterns", "parse_composition", "pattern_dqn_select", "ppo_update",
    "run_episode", "transition_schedule", "two_stage_finetune",
]
