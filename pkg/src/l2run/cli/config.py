"""Experiment configuration: JSON documents, built-in presets, schema validation, typed builders."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict
from pathlib import Path

import jsonschema
import numpy as np

from .. import nncore as nn
from ..agents import DBDDPGConfig, DDPGConfig, PPOConfig
from ..env import EnvConfig, RunnerEnv, ShapingConfig
from ..env.observation import LAYOUTS
from ..errors import ConfigurationError
from ..explore import ACTION_MODES, NoisePolicy, OUState
from ..replay import AdmissionFilter, ReplayBuffer

ALGORITHMS = ("ddpg", "ace", "pattern-dqn", "dbddpg", "ppo")

# ----------------------------------------------------------------- schema

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_POSINT = {"type": "integer", "minimum": 1}
_NONNEGINT = {"type": "integer", "minimum": 0}
_BOOL = {"type": "boolean"}
_LAYERS = {"type": "array", "items": _POSINT, "minItems": 1}
_ACT = {"enum": list(nn.ACTIVATIONS)}


def _nullable(schema: dict) -> dict:
    return {"anyOf": [schema, {"type": "null"}]}


def _obj(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


_DDPG_AGENT = {
    "gamma": _PROB, "tau": _PROB, "actor_lr": _POS, "critic_lr": _POS,
    "actor_lr_end": _nullable(_POS), "critic_lr_end": _nullable(_POS), "lr_decay_steps": _nullable(_POSINT),
    "hidden": _LAYERS, "critic_hidden": _nullable(_LAYERS), "activation": _ACT,
    "critic_activation": _nullable(_ACT), "layer_norm": _BOOL, "trot_repeats": _POSINT,
    "trot_lr_scale": _nullable(_POS), "final_scale": _POS,
}
_AGENT_SCHEMAS = {
    "ddpg": _obj(_DDPG_AGENT),
    "ace": _obj({**_DDPG_AGENT, "n_pairs": _POSINT}),
    "pattern-dqn": _obj(_DDPG_AGENT),
    "dbddpg": _obj({
        "n_heads": _POSINT, "p_mask": _PROB, "gamma": _PROB, "tau": _PROB, "actor_lr": _POS, "critic_lr": _POS,
        "body": _LAYERS, "head": _LAYERS, "activation": _ACT, "layer_norm": _BOOL, "final_scale": _POS,
        "warmup_episodes": _NONNEGINT, "warmup_order": {"enum": ["round_robin", "random"]},
    }),
    "ppo": _obj({
        "gamma": _PROB, "gae_lambda": _PROB, "clip_eps": _POS, "epochs": _POSINT, "minibatch": _POSINT,
        "rollout_steps": _POSINT, "policy_lr": _POS, "value_lr": _POS, "hidden": _LAYERS, "activation": _ACT,
        "layer_norm": _BOOL, "init_log_std": _NUM, "normalize_advantages": _BOOL,
    }),
}

_SECTIONS = {
    "algorithm": {"enum": list(ALGORITHMS)},
    "seed": _NONNEGINT,
    "env": _obj({
        "n_obstacles": _NONNEGINT, "obstacle_ceiling": _nullable(_NONNEG), "obstacle_free_probability": _PROB,
        "max_substeps": _POSINT, "repeat": _POSINT, "layout": {"enum": sorted(LAYOUTS)},
        "first_person": _BOOL, "normalize": _BOOL,
    }),
    "shaping": _obj({
        "enabled": _BOOL, "velocity_reward": _BOOL, "step_bonus": _NONNEG, "straight_leg_penalty_weight": _NONNEG,
        "knee_bonus": _NONNEG, "knee_interval": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "lean_penalty_weight": _NONNEG, "fall_penalty": _NONNEG, "reward_scale": _POS,
    }),
    "noise": _obj({
        "enabled": _BOOL, "mode": {"enum": list(ACTION_MODES)}, "p_parameter": _PROB, "scale": _NONNEG,
        "decay": _POS, "off_below": _NONNEG, "on_above": _nullable(_NONNEG),
        "ou": _obj({"theta": _NONNEG, "mu": _NUM, "sigma": _NONNEG, "sigma_min": _NONNEG, "dt": _POS,
                    "sigma_decay_steps": _NONNEGINT}),
        "param_sigma": _POS, "warm_start_probability": _PROB, "warm_start_samplers": _nullable(_NONNEGINT),
        "warm_start_range": {"type": "array", "items": _NONNEGINT, "minItems": 2, "maxItems": 2},
        "random_walk_sigma": _NONNEG, "random_walk_clip": _NONNEG, "epsilon": _PROB,
    }),
    "replay": _obj({
        "capacity": _POSINT, "prioritized": _BOOL, "alpha": _NONNEG, "beta": _PROB, "reflect_augment": _BOOL,
        "admission": _obj({"top_fraction": _nullable(_PROB), "min_step_reward": _nullable(_NUM),
                           "window": _POSINT}),
    }),
    "training": _obj({
        "batch_size": _POSINT, "updates_per_step": _NONNEG, "learning_starts": _NONNEGINT,
        "optimizer_schedule": {"enum": ["constant", "two_stage"]}, "stage1_lr": _POS, "stage2_lr": _POS,
        "plateau_eps": _NONNEG, "plateau_window": _POSINT,
    }),
    "cluster": _obj({"mode": {"enum": ["single", "tcp"]}, "n_samplers": _POSINT, "addr": {"type": "string"}}),
    "eval": _obj({"every_episodes": _NONNEGINT, "episodes": _NONNEGINT, "first_seed": _NONNEGINT,
                  "seeds": _nullable({"type": "array", "items": _NONNEGINT})}),
    "checkpoint_every": _NONNEGINT,
    "budget": _obj({"episodes": _nullable(_NONNEGINT), "env_substeps": _nullable(_NONNEGINT),
                    "wall_seconds": _nullable(_NONNEG)}),
    "patterns": _obj({"file": _nullable({"type": "string"}), "top_m": _nullable(_POSINT)}),
}


def _require_all(schema: dict) -> dict:
    """Copy of ``schema`` in which every object lists all of its properties as required."""
    out = copy.deepcopy(schema)
    stack = [out]
    while stack:
        node = stack.pop()
        if node.get("type") == "object" and "properties" in node:
            node["required"] = sorted(node["properties"])
            stack.extend(node["properties"].values())
    return out


def schema_for(algorithm: str, complete: bool = False) -> dict:
    """Document schema whose agent section is the one of ``algorithm``."""
    schema = _obj({**_SECTIONS, "agent": _AGENT_SCHEMAS[algorithm]})
    return _require_all(schema) if complete else schema


# --------------------------------------------------------------- defaults


def _ddpg_agent_defaults() -> dict:
    d = DDPGConfig()
    return {"gamma": d.gamma, "tau": d.tau, "actor_lr": d.actor_lr, "critic_lr": d.critic_lr, "actor_lr_end": None,
            "critic_lr_end": None, "lr_decay_steps": None, "hidden": list(d.hidden), "critic_hidden": None,
            "activation": d.activation, "critic_activation": None, "layer_norm": d.layer_norm,
            "trot_repeats": d.trot_repeats, "trot_lr_scale": d.trot_lr_scale, "final_scale": d.final_scale}


def _agent_defaults(algorithm: str) -> dict:
    if algorithm in ("ddpg", "pattern-dqn"):
        return _ddpg_agent_defaults()
    if algorithm == "ace":
        return {**_ddpg_agent_defaults(), "n_pairs": 10}
    if algorithm == "dbddpg":
        d = asdict(DBDDPGConfig())
        d.pop("box")
        d.pop("debug_check")
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
    d = asdict(PPOConfig())
    d.pop("box")
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def defaults(algorithm: str = "ddpg") -> dict:
    env, ou, noise = EnvConfig(), OUState.zeros(1), NoisePolicy()
    shaping = ShapingConfig()
    return {
        "algorithm": algorithm,
        "seed": 0,
        "env": {"n_obstacles": env.n_obstacles, "obstacle_ceiling": env.obstacle_ceiling,
                "obstacle_free_probability": env.obstacle_free_probability, "max_substeps": env.max_substeps,
                "repeat": 5, "layout": "raw", "first_person": True, "normalize": True},
        "shaping": {"enabled": False, "velocity_reward": shaping.velocity_reward, "step_bonus": shaping.step_bonus,
                    "straight_leg_penalty_weight": shaping.straight_leg_penalty_weight,
                    "knee_bonus": shaping.knee_bonus, "knee_interval": list(shaping.knee_interval),
                    "lean_penalty_weight": shaping.lean_penalty_weight, "fall_penalty": shaping.fall_penalty,
                    "reward_scale": shaping.reward_scale},
        "agent": _agent_defaults(algorithm),
        "noise": {"enabled": True, "mode": noise.mode, "p_parameter": noise.p_parameter, "scale": noise.scale,
                  "decay": noise.decay, "off_below": noise.off_below, "on_above": None,
                  "ou": {"theta": ou.theta, "mu": ou.mu, "sigma": ou.sigma, "sigma_min": ou.sigma_min, "dt": ou.dt,
                         "sigma_decay_steps": ou.sigma_decay_steps},
                  "param_sigma": 0.05, "warm_start_probability": 0.0, "warm_start_samplers": None,
                  "warm_start_range": [20, 40], "random_walk_sigma": noise.random_walk_sigma,
                  "random_walk_clip": noise.random_walk_clip, "epsilon": 0.1},
        "replay": {"capacity": 100_000, "prioritized": False, "alpha": 0.6, "beta": 0.4, "reflect_augment": False,
                   "admission": {"top_fraction": None, "min_step_reward": None, "window": 100}},
        "training": {"batch_size": 64, "updates_per_step": 1.0, "learning_starts": 1000,
                     "optimizer_schedule": "constant", "stage1_lr": 1e-4, "stage2_lr": 5e-5, "plateau_eps": 0.01,
                     "plateau_window": 20},
        "cluster": {"mode": "single", "n_samplers": 1, "addr": "127.0.0.1:0"},
        "eval": {"every_episodes": 0, "episodes": 5, "first_seed": 1_000_000, "seeds": None},
        "checkpoint_every": 50,
        "budget": {"episodes": 100, "env_substeps": None, "wall_seconds": None},
        "patterns": {"file": None, "top_m": None},
    }


PRESETS: dict[str, dict] = {
    # ensemble members: each trained as plain DDPG, pooled at evaluation time
    "pku": {
        "algorithm": "ddpg",
        "agent": {"hidden": [800, 400], "activation": "selu", "critic_hidden": [800, 400],
                  "critic_activation": "selu", "actor_lr": 3e-4, "critic_lr": 3e-4, "gamma": 0.96},
        "training": {"batch_size": 128},
        "replay": {"capacity": 2_000_000},
        "env": {"repeat": 4},
    },
    "reason8": {
        "algorithm": "ddpg",
        "agent": {"hidden": [64, 64], "activation": "elu", "critic_hidden": [64, 32], "critic_activation": "tanh",
                  "actor_lr": 1e-3, "actor_lr_end": 5e-5, "critic_lr": 2e-3, "critic_lr_end": 5e-5,
                  "lr_decay_steps": 10_000_000, "gamma": 0.9, "layer_norm": True},
        "training": {"batch_size": 200},
        "replay": {"capacity": 5_000_000, "reflect_augment": True},
        "shaping": {"enabled": True, "step_bonus": 0.0, "reward_scale": 10.0},
        "noise": {"p_parameter": 0.3, "mode": "ou",
                  "ou": {"theta": 0.1, "mu": 0.0, "sigma": 0.2, "sigma_min": 0.05, "dt": 1e-2,
                         "sigma_decay_steps": 1_000_000}},
        "env": {"repeat": 5},
        "cluster": {"n_samplers": 6},
    },
    "dbddpg": {
        "algorithm": "dbddpg",
        "agent": {"n_heads": 10, "activation": "elu", "actor_lr": 1e-4, "critic_lr": 3e-4, "gamma": 0.99,
                  "tau": 1e-3, "body": [128, 64], "head": [64, 32]},
        "shaping": {"enabled": True, "velocity_reward": True, "step_bonus": 0.0},
        "replay": {"prioritized": True},
        "env": {"repeat": 4},
    },
    "anton": {
        "algorithm": "ddpg",
        "agent": {"hidden": [512] * 5, "actor_lr": 1e-4, "critic_lr": 1e-4, "gamma": 0.99},
        "training": {"batch_size": 64, "optimizer_schedule": "two_stage", "stage1_lr": 1e-4, "stage2_lr": 5e-5},
        "replay": {"capacity": 1_000_000},
        "noise": {"mode": "ou", "p_parameter": 0.0, "warm_start_samplers": 3, "warm_start_range": [20, 40]},
        "env": {"obstacle_free_probability": 0.3, "layout": "enriched", "first_person": True},
        "cluster": {"n_samplers": 7},
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _path(error: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in error.absolute_path) or "<root>"


def _validate(doc: dict, schema: dict) -> None:
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigurationError(f"{_path(e)}: {e.message}")


def resolve_config(user: dict | None = None, preset: str | None = None, seed: int | None = None) -> dict:
    """Defaults, then the preset, then the user document; validated at each layer."""
    if user is not None and not isinstance(user, dict):
        raise ConfigurationError("<root>: config must be a JSON object")
    user = user or {}
    layered: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        layered = copy.deepcopy(PRESETS[preset])
    algorithm = user.get("algorithm", layered.get("algorithm", "ddpg"))
    if algorithm not in ALGORITHMS:
        raise ConfigurationError(f"algorithm: {algorithm!r} is not one of {list(ALGORITHMS)}")
    _validate(user, schema_for(algorithm))
    if preset is not None and layered.get("algorithm", algorithm) != algorithm:
        # a preset for another algorithm keeps only its algorithm-independent sections
        layered.pop("agent", None)
    layered = deep_merge(layered, user)
    layered["algorithm"] = algorithm
    if seed is not None:
        layered["seed"] = seed
    cfg = deep_merge(defaults(algorithm), layered)
    _validate(cfg, schema_for(algorithm, complete=True))
    check_consistency(cfg)
    return cfg


def load_config(path: str | Path | None, preset: str | None = None, seed: int | None = None) -> dict:
    user = None
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"<root>: config is not valid JSON ({exc})") from None
    return resolve_config(user, preset, seed)


def check_consistency(cfg: dict) -> None:
    """Cross-field rules a schema cannot express."""
    lo, hi = cfg["noise"]["warm_start_range"]
    if lo > hi:
        raise ConfigurationError("noise.warm_start_range: lower bound exceeds upper bound")
    a = cfg["agent"]
    if cfg["algorithm"] in ("ddpg", "ace", "pattern-dqn"):
        ends = (a["actor_lr_end"], a["critic_lr_end"])
        if any(e is not None for e in ends) and a["lr_decay_steps"] is None:
            raise ConfigurationError("agent.lr_decay_steps: required when a final learning rate is set")
    if cfg["algorithm"] == "pattern-dqn" and not cfg["patterns"]["file"]:
        raise ConfigurationError("patterns.file: pattern-dqn needs a mined patterns.csv")
    if cfg["algorithm"] in ("dbddpg", "ppo") and cfg["cluster"]["mode"] != "single":
        raise ConfigurationError(f"cluster.mode: {cfg['algorithm']} trains in a single process only")
    lo_k, hi_k = cfg["shaping"]["knee_interval"]
    if not lo_k < hi_k:
        raise ConfigurationError("shaping.knee_interval: needs lo < hi")


# --------------------------------------------------------------- builders


def build_env(cfg: dict) -> RunnerEnv:
    e = cfg["env"]
    env_cfg = EnvConfig(n_obstacles=e["n_obstacles"], obstacle_ceiling=e["obstacle_ceiling"],
                        obstacle_free_probability=e["obstacle_free_probability"], max_substeps=e["max_substeps"])
    return RunnerEnv(env_cfg, repeat=e["repeat"], layout=e["layout"], first_person=e["first_person"],
                     shaping=build_shaping(cfg), normalizer="default" if e["normalize"] else None)


def build_shaping(cfg: dict) -> ShapingConfig | None:
    s = dict(cfg["shaping"])
    if not s.pop("enabled"):
        return None
    s["knee_interval"] = tuple(s["knee_interval"])
    return ShapingConfig(**s)


def _lr(start: float, end: float | None, steps: int | None):
    return start if end is None else nn.LinearDecay(start, end, steps)


def build_ddpg_config(cfg: dict) -> DDPGConfig:
    a = cfg["agent"]
    return DDPGConfig(gamma=a["gamma"], tau=a["tau"], actor_lr=_lr(a["actor_lr"], a["actor_lr_end"], a["lr_decay_steps"]),
                      critic_lr=_lr(a["critic_lr"], a["critic_lr_end"], a["lr_decay_steps"]),
                      trot_repeats=a["trot_repeats"], trot_lr_scale=a["trot_lr_scale"], hidden=tuple(a["hidden"]),
                      activation=a["activation"],
                      critic_hidden=None if a["critic_hidden"] is None else tuple(a["critic_hidden"]),
                      critic_activation=a["critic_activation"], layer_norm=a["layer_norm"],
                      final_scale=a["final_scale"])


def build_dbddpg_config(cfg: dict) -> DBDDPGConfig:
    a = dict(cfg["agent"])
    a["body"], a["head"] = tuple(a["body"]), tuple(a["head"])
    return DBDDPGConfig(**a)


def build_ppo_config(cfg: dict) -> PPOConfig:
    a = dict(cfg["agent"])
    a["hidden"] = tuple(a["hidden"])
    return PPOConfig(**a)


def build_noise_policy(cfg: dict) -> NoisePolicy:
    n = cfg["noise"]
    on_above = math.inf if n["on_above"] is None else n["on_above"]
    return NoisePolicy(mode=n["mode"], p_action=1.0 - n["p_parameter"], p_parameter=n["p_parameter"],
                       scale=n["scale"], decay=n["decay"], off_below=n["off_below"], on_above=on_above,
                       enabled=n["enabled"], random_walk_sigma=n["random_walk_sigma"],
                       random_walk_clip=n["random_walk_clip"])


def build_ou(cfg: dict, act_dim: int) -> OUState:
    return OUState.zeros(act_dim, **cfg["noise"]["ou"])


def build_replay(cfg: dict, obs_dim: int, act_dim: int, n_heads: int = 1, p_mask: float = 0.5,
                 mask_rng: np.random.Generator | None = None) -> ReplayBuffer:
    r = cfg["replay"]
    adm = AdmissionFilter(**r["admission"])
    return ReplayBuffer(r["capacity"], obs_dim, act_dim, n_heads=n_heads, p_mask=p_mask, layout=cfg["env"]["layout"],
                        prioritized=r["prioritized"], alpha=r["alpha"], admission=adm, mask_rng=mask_rng)


def eval_seeds(cfg: dict) -> list[int]:
    e = cfg["eval"]
    if e["seeds"] is not None:
        return list(e["seeds"])
    return list(range(e["first_seed"], e["first_seed"] + e["episodes"]))
