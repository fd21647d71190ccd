from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from l2run import nncore as nn
from l2run.agents import create_ddpg, evaluate
from l2run.agents.common import actor_spec, critic_spec
from l2run.cli import main
from l2run.cli.checkpoint import load_checkpoint, save_checkpoint
from l2run.cli.config import PRESETS, build_ddpg_config, build_env, resolve_config
from l2run.cli.runner import load_patterns, sampler_settings
from l2run.errors import ConfigurationError, NumericError
from l2run.orchestrator import DDPGModel, PolicySnapshot

TINY = {"env": {"max_substeps": 150}, "agent": {"hidden": [16, 16]}, "training": {"learning_starts": 64},
        "budget": {"episodes": 8}, "checkpoint_every": 4, "eval": {"episodes": 2}}


def write_cfg(tmp_path, overrides=None, name="cfg.json"):
    cfg = json.loads(json.dumps(TINY))
    for k, v in (overrides or {}).items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict) and k != "agent":
            cfg[k].update(v)
        else:
            cfg[k] = v
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A small DDPG run shared by the evaluation tests."""
    d = tmp_path_factory.mktemp("trained")
    cfg = write_cfg(d)
    assert main(["-q", "train", "--config", cfg, "--out", str(d / "run")]) == 0
    return d / "run"


# ------------------------------------------------------------------ config


def test_reason8_preset_values():
    cfg = resolve_config(None, "reason8")
    a = cfg["agent"]
    assert cfg["algorithm"] == "ddpg"
    assert a["gamma"] == 0.9 and cfg["replay"]["capacity"] == 5_000_000
    assert cfg["noise"]["ou"] == {"theta": 0.1, "mu": 0.0, "sigma": 0.2, "sigma_min": 0.05, "dt": 1e-2,
                                  "sigma_decay_steps": 1_000_000}
    assert a["hidden"] == [64, 64] and a["activation"] == "elu"
    assert a["critic_hidden"] == [64, 32] and a["critic_activation"] == "tanh"
    assert (a["actor_lr"], a["actor_lr_end"], a["critic_lr"], a["critic_lr_end"]) == (1e-3, 5e-5, 2e-3, 5e-5)
    assert a["lr_decay_steps"] == 10_000_000 and a["layer_norm"]
    assert cfg["training"]["batch_size"] == 200 and cfg["shaping"]["reward_scale"] == 10
    assert cfg["noise"]["p_parameter"] == 0.3 and cfg["replay"]["reflect_augment"]
    assert cfg["env"]["repeat"] == 5
    d = build_ddpg_config(cfg)
    assert d.actor_lr(0) == 1e-3 and d.actor_lr(10_000_000) == pytest.approx(5e-5, rel=1e-12)


def test_pku_preset_values():
    cfg = resolve_config(None, "pku")
    a = cfg["agent"]
    assert a["hidden"] == [800, 400] and a["critic_hidden"] == [800, 400]
    assert a["activation"] == "selu" and a["critic_activation"] == "selu"
    assert a["actor_lr"] == a["critic_lr"] == 3e-4 and a["gamma"] == 0.96
    assert cfg["training"]["batch_size"] == 128 and cfg["replay"]["capacity"] == 2_000_000


def test_dbddpg_preset_values():
    cfg = resolve_config(None, "dbddpg")
    a = cfg["agent"]
    assert cfg["algorithm"] == "dbddpg" and a["n_heads"] == 10 and a["activation"] == "elu"
    assert (a["actor_lr"], a["critic_lr"], a["gamma"], a["tau"]) == (1e-4, 3e-4, 0.99, 1e-3)
    assert a["body"] == [128, 64] and a["head"] == [64, 32]
    assert cfg["shaping"]["velocity_reward"] and cfg["replay"]["prioritized"] and cfg["env"]["repeat"] == 4


def test_anton_preset_values():
    cfg = resolve_config(None, "anton")
    assert cfg["agent"]["hidden"] == [512] * 5 and cfg["agent"]["gamma"] == 0.99
    assert cfg["replay"]["capacity"] == 1_000_000 and cfg["training"]["batch_size"] == 64
    assert cfg["cluster"]["n_samplers"] == 7 and cfg["env"]["obstacle_free_probability"] == 0.3
    t = cfg["training"]
    assert (t["optimizer_schedule"], t["stage1_lr"], t["stage2_lr"]) == ("two_stage", 1e-4, 5e-5)
    warm = [sampler_settings(cfg, i, 4).warm_start_probability for i in range(7)]
    assert warm == [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]
    assert sampler_settings(cfg, 0, 4).warm_start_range == (20, 40)


def test_user_document_overrides_preset():
    cfg = resolve_config({"agent": {"gamma": 0.5}, "seed": 3}, "reason8", seed=9)
    assert cfg["agent"]["gamma"] == 0.5 and cfg["agent"]["activation"] == "elu" and cfg["seed"] == 9


def test_unknown_key_exit_2_names_key(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"agent": {"gama": 0.9}}))
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "gama" in err and "agent" in err


@pytest.mark.parametrize("doc", [
    {"algorithm": "sarsa"},
    {"agent": {"n_heads": 3}},  # a DB-DDPG key under DDPG
    {"env": {"repeat": 0}},
    {"noise": {"warm_start_range": [40, 20]}},
    {"algorithm": "pattern-dqn"},
    {"algorithm": "ppo", "cluster": {"mode": "tcp"}},
    {"agent": {"actor_lr_end": 1e-5}},
    [1, 2],
])
def test_invalid_documents(doc):
    with pytest.raises(ConfigurationError):
        resolve_config(doc)


def test_unreadable_config_exit_2(tmp_path):
    (tmp_path / "x.json").write_text("{not json")
    assert main(["train", "--config", str(tmp_path / "x.json"), "--out", str(tmp_path / "o")]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 2


def test_every_preset_builds_its_environment():
    for name in PRESETS:
        env = build_env(resolve_config(None, name))
        assert env.obs_dim > 0


# ------------------------------------------------------------------- train


def test_metrics_layout(trained):
    rows = read_csv(trained / "metrics.csv")
    assert list(rows[0]) == ["wall_seconds", "episode", "env_steps", "return_raw", "return_shaped", "distance_m",
                             "fell", "weights_version", "noise_mode", "stage"]
    eps = [int(r["episode"]) for r in rows]
    assert eps == list(range(1, 9))
    assert all(float(r["distance_m"]) >= 0 for r in rows)
    assert all(r["fell"] in ("0", "1") for r in rows)
    steps = [int(r["env_steps"]) for r in rows]
    assert steps == sorted(steps)


def test_same_config_and_seed_reproduce_metrics(tmp_path):
    cfg = write_cfg(tmp_path, {"cluster": {"n_samplers": 2}, "eval": {"every_episodes": 4}})
    for name in ("a", "b"):
        assert main(["-q", "train", "--config", cfg, "--seed", "5", "--out", str(tmp_path / name)]) == 0
    a, b = (read_csv(tmp_path / n / "metrics.csv") for n in ("a", "b"))
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_seconds"} for r in rows]
    assert strip(a) == strip(b)
    assert (tmp_path / "a" / "checkpoint.bin").read_bytes() == (tmp_path / "b" / "checkpoint.bin").read_bytes()


def test_different_seed_changes_run(tmp_path):
    cfg = write_cfg(tmp_path)
    for seed in ("1", "2"):
        assert main(["-q", "train", "--config", cfg, "--seed", seed, "--out", str(tmp_path / seed)]) == 0
    assert read_csv(tmp_path / "1" / "metrics.csv") != read_csv(tmp_path / "2" / "metrics.csv")


def test_numeric_abort_exit_3_keeps_checkpoint(tmp_path, monkeypatch):
    calls = {"n": 0}
    original = DDPGModel.update

    def flaky(self, batch, weights=None):
        calls["n"] += 1
        if calls["n"] > 200:
            raise NumericError("non-finite critic loss", layer=1, digest="0" * 16)
        return original(self, batch, weights)

    monkeypatch.setattr(DDPGModel, "update", flaky)
    cfg = write_cfg(tmp_path, {"checkpoint_every": 2, "budget": {"episodes": 20}})
    out = tmp_path / "run"
    assert main(["-q", "train", "--config", cfg, "--out", str(out)]) == 3
    snap, doc = load_checkpoint(out)
    assert doc["episode"] % 2 == 0 and doc["episode"] >= 2
    rows = read_csv(out / "metrics.csv")
    assert len(rows) >= doc["episode"]


def test_two_stage_schedule_switches_optimizers(tmp_path):
    cfg = write_cfg(tmp_path, {"training": {"optimizer_schedule": "two_stage", "plateau_window": 2,
                                            "plateau_eps": 1e9, "learning_starts": 64},
                               "eval": {"every_episodes": 2}, "budget": {"episodes": 10}})
    assert main(["-q", "train", "--config", cfg, "--out", str(tmp_path / "r")]) == 0
    stages = [int(r["stage"]) for r in read_csv(tmp_path / "r" / "metrics.csv")]
    assert stages[0] == 1 and stages[-1] == 2 and stages == sorted(stages)


@pytest.mark.parametrize("overrides", [
    {"algorithm": "ace", "agent": {"hidden": [16, 16], "n_pairs": 2}},
    {"algorithm": "dbddpg", "agent": {"n_heads": 2, "body": [16], "head": [16], "warmup_episodes": 1},
     "training": {"batch_size": 16}, "eval": {"every_episodes": 4}},
    {"algorithm": "ppo", "agent": {"hidden": [16], "rollout_steps": 64, "epochs": 1}},
])
def test_other_algorithms_train_and_evaluate(tmp_path, overrides):
    cfg = write_cfg(tmp_path, overrides)
    out = tmp_path / "run"
    assert main(["-q", "train", "--config", cfg, "--out", str(out)]) == 0
    rows = read_csv(out / "metrics.csv")
    assert [int(r["episode"]) for r in rows] == list(range(1, 9))
    assert main(["-q", "eval", "--checkpoint", str(out), "--episodes", "2", "--out", str(out)]) == 0
    assert int(read_csv(out / "eval.csv")[0]["tests"]) == 2


def test_tcp_mode_trains_with_spawned_samplers(tmp_path):
    cfg = write_cfg(tmp_path, {"cluster": {"mode": "tcp", "n_samplers": 2}, "budget": {"episodes": 6}})
    out = tmp_path / "run"
    assert main(["-q", "train", "--config", cfg, "--out", str(out)]) == 0
    assert len(read_csv(out / "metrics.csv")) == 6
    load_checkpoint(out)


# -------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip_bitwise(tmp_path):
    cfg = resolve_config(TINY)
    env = build_env(cfg)
    model = DDPGModel(create_ddpg(env.obs_dim, env.act_dim, build_ddpg_config(cfg), np.random.default_rng(0)))
    snap = model.snapshot(7)
    save_checkpoint(tmp_path, snap, {**model.state_arrays(), **snap.arrays()}, {"config": cfg})
    back, doc = load_checkpoint(tmp_path / "checkpoint.bin")
    assert back.version == 7 and doc["meta"] == snap.meta()
    for a, b in zip(snap.actors + snap.critics, back.actors + back.critics):
        assert a.arrays.keys() == b.arrays.keys()
        for k in a.arrays:
            assert a.arrays[k].dtype == b.arrays[k].dtype
            assert a.arrays[k].tobytes() == b.arrays[k].tobytes()
    r1 = [r.raw_return for r in evaluate(env, snap.act, range(3))]
    r2 = [r.raw_return for r in evaluate(env, back.act, range(3))]
    assert r1 == r2


def test_corrupt_checkpoint_exit_4(trained, tmp_path):
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "checkpoint.json").write_bytes((trained / "checkpoint.json").read_bytes())
    (bad / "checkpoint.bin").write_bytes((trained / "checkpoint.bin").read_bytes()[:-10])
    assert main(["-q", "eval", "--checkpoint", str(bad), "--out", str(tmp_path)]) == 4
    assert main(["-q", "eval", "--checkpoint", str(tmp_path / "nowhere"), "--out", str(tmp_path)]) == 4
    assert main(["-q", "mine", "--checkpoint", str(bad), "--out", str(tmp_path)]) == 4


# -------------------------------------------------------------------- eval


def test_eval_zero_episodes_is_empty(trained, tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(trained), "--episodes", "0", "--out", str(tmp_path)]) == 0
    assert read_csv(tmp_path / "eval.csv") == []
    assert "no episodes" in capsys.readouterr().out


def test_eval_is_deterministic(trained, tmp_path):
    for name in ("a", "b"):
        assert main(["-q", "eval", "--checkpoint", str(trained), "--episodes", "4", "--seed", "3",
                     "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a" / "eval.csv").read_text()
    assert a == (tmp_path / "b" / "eval.csv").read_text()
    row = read_csv(tmp_path / "a" / "eval.csv")[0]
    assert list(row) == ["composition", "tests", "mean_return", "max_return", "falls", "mean_distance_m"]
    assert int(row["tests"]) == 4


def test_eval_compositions_on_pooled_checkpoints(trained, tmp_path):
    args = ["-q", "eval", "--checkpoint", str(trained), "--checkpoint", str(trained), "--episodes", "3",
            "--composition", "A2C2", "--composition", "A1C0", "--out", str(tmp_path)]
    assert main(args) == 0
    rows = read_csv(tmp_path / "eval.csv")
    assert [r["composition"] for r in rows] == ["A2C2", "A1C0"]
    # identical members: every composition picks the same actions
    assert rows[0]["mean_return"] == rows[1]["mean_return"]
    episodes = read_csv(tmp_path / "eval_episodes.csv")
    assert [int(r["seed"]) for r in episodes] == [0, 1, 2, 0, 1, 2]
    too_many = ["-q", "eval", "--checkpoint", str(trained), "--checkpoint", str(trained), "--episodes", "1",
                "--composition", "A3C0", "--out", str(tmp_path)]
    assert main(too_many) == 2


# ------------------------------------------------------------ mine / blend


def _constant_checkpoint(tmp_path, cfg, value_bits, act_dim=4, name="const"):
    """DDPG checkpoint whose actor ignores the observation."""
    env = build_env(cfg)
    a_spec = actor_spec(env.obs_dim, act_dim, (8,), "selu")
    c_spec = critic_spec(env.obs_dim, act_dim, (8,), "selu")
    rng = np.random.default_rng(0)
    actor = nn.init_params(a_spec, rng)
    for k, v in actor.arrays.items():
        actor.arrays[k] = np.zeros_like(v)
    last = sorted(k for k in actor.arrays if k.endswith("b"))[-1]
    actor.arrays[last] = np.where(np.array(value_bits) > 0, 5.0, -5.0).astype(np.float32)
    snap = PolicySnapshot("ddpg", a_spec, c_spec, [actor], [nn.init_params(c_spec, rng)])
    out = tmp_path / name
    save_checkpoint(out, snap, snap.arrays(), {"config": cfg})
    return out


def test_mine_constant_policy_single_row(tmp_path, capsys):
    ck = _constant_checkpoint(tmp_path, resolve_config(TINY), [1, 0, 1, 0])
    assert main(["mine", "--checkpoint", str(ck), "--episodes", "2", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "patterns.csv")
    assert len(rows) == 1 and rows[0]["pattern"] == "1010"
    assert float(rows[0]["frequency_pct"]) == 100.0 and float(rows[0]["cumulative_pct"]) == 100.0
    assert "saturation" in capsys.readouterr().out


def test_mine_trained_policy_prefix_sums(trained, tmp_path):
    assert main(["-q", "mine", "--checkpoint", str(trained), "--episodes", "3", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "patterns.csv")
    freq = [float(r["frequency_pct"]) for r in rows]
    cum = [float(r["cumulative_pct"]) for r in rows]
    assert abs(sum(freq) - 100.0) <= 0.1
    assert np.allclose(np.cumsum(freq), cum)
    assert [int(r["count"]) for r in rows] == sorted((int(r["count"]) for r in rows), reverse=True)
    table = load_patterns(tmp_path / "patterns.csv")
    assert table.total == sum(int(r["count"]) for r in rows)


def test_blend_endpoints_equal_plain_eval(trained, tmp_path):
    other = _constant_checkpoint(tmp_path, json.loads((trained / "checkpoint.json").read_text())["config"],
                                 [1, 1, 0, 0])
    base = ["-q", "blend", "--checkpoint", str(trained), "--checkpoint", str(other), "--episodes", "3"]
    assert main(base + ["--alpha", "1", "--out", str(tmp_path / "b1")]) == 0
    assert main(base + ["--alpha", "0", "--out", str(tmp_path / "b0")]) == 0
    assert main(["-q", "eval", "--checkpoint", str(trained), "--episodes", "3", "--out", str(tmp_path / "e1")]) == 0
    assert main(["-q", "eval", "--checkpoint", str(other), "--episodes", "3", "--out", str(tmp_path / "e0")]) == 0
    keys = ("tests", "mean_return", "max_return", "falls", "mean_distance_m")
    for b, e in (("b1", "e1"), ("b0", "e0")):
        rb, re_ = read_csv(tmp_path / b / "eval.csv")[0], read_csv(tmp_path / e / "eval.csv")[0]
        assert [rb[k] for k in keys] == [re_[k] for k in keys]
    assert main(base + ["--switch-n", "150", "--out", str(tmp_path / "sw")]) == 0
    assert read_csv(tmp_path / "sw" / "eval.csv")[0]["composition"].startswith("switch")


def test_blend_incompatible_action_dims_exit_2(trained, tmp_path):
    cfg = json.loads((trained / "checkpoint.json").read_text())["config"]
    three = _constant_checkpoint(tmp_path, cfg, [1, 0, 1], act_dim=3)
    assert main(["-q", "blend", "--checkpoint", str(trained), "--checkpoint", str(three), "--alpha", "0.5",
                 "--out", str(tmp_path)]) == 2


def test_pattern_dqn_trains_on_mined_table(trained, tmp_path):
    assert main(["-q", "mine", "--checkpoint", str(trained), "--episodes", "2", "--out", str(tmp_path)]) == 0
    cfg = write_cfg(tmp_path, {"algorithm": "pattern-dqn", "patterns": {"file": str(tmp_path / "patterns.csv")}})
    assert main(["-q", "train", "--config", cfg, "--out", str(tmp_path / "pd")]) == 0
    snap, _ = load_checkpoint(tmp_path / "pd")
    assert snap.kind == "pattern-dqn"
    modes = {r["noise_mode"] for r in read_csv(tmp_path / "pd" / "metrics.csv")}
    assert modes == {"epsilon"}


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["eval"])
    assert exc.value.code == 2
