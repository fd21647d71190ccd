"""Training, evaluation, mining and blending runs behind the command line."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import nncore as nn
from ..agents import (PatternTable, SwitchingPolicy, TwoStageSchedule, blended_policy, collect_rollout,
                      create_dbddpg, create_ddpg, create_ppo, dbddpg_run_episode, evaluate, mine_patterns,
                      parse_composition, ppo_update, two_stage_finetune)
from ..agents.dbddpg import warmup_episodes_total
from ..agents.finetune import start_stage_one
from ..errors import ConfigurationError
from ..explore import ActionNoise, uncertainty_from_returns
from ..orchestrator import (ACEModel, DDPGModel, InMemoryChannel, Learner, LearnerServer, LearnerSettings,
                            PatternDQNModel, PolicySnapshot, RemoteLearner, SamplerCore, SamplerSettings,
                            evaluate_policy, learner_address, run_sampler, sampler_seeds)
from ..orchestrator.sampler import ADDR_ENV
from .checkpoint import atomic_write, load_checkpoint, save_checkpoint
from .config import (build_dbddpg_config, build_ddpg_config, build_env, build_noise_policy, build_ou,
                     build_ppo_config, build_replay, eval_seeds)

log = logging.getLogger(__name__)

METRICS_FIELDS = ("wall_seconds", "episode", "env_steps", "return_raw", "return_shaped", "distance_m", "fell",
                  "weights_version", "noise_mode", "stage")
EVAL_FIELDS = ("composition", "tests", "mean_return", "max_return", "falls", "mean_distance_m")
EVAL_EPISODE_FIELDS = ("composition", "seed", "return_raw", "distance_m", "fell", "steps")
PATTERN_FIELDS = ("pattern", "count", "frequency_pct", "cumulative_pct")
UNCERTAINTY_WINDOW = 5


class MetricsWriter:
    """Append-only CSV; each row is written and flushed whole."""

    def __init__(self, path: Path):
        self._file = open(path, "w", newline="")
        self._csv = csv.writer(self._file)
        self._csv.writerow(METRICS_FIELDS)
        self._file.flush()
        self.last_episode = 0

    def write(self, row: dict) -> None:
        if row["episode"] <= self.last_episode:
            raise ConfigurationError("metrics episodes must increase")
        self.last_episode = row["episode"]
        self._csv.writerow([_fmt(row[k]) for k in METRICS_FIELDS])
        self._file.flush()

    def close(self) -> None:
        self._file.close()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ------------------------------------------------------------------ training


def sampler_settings(cfg: dict, sampler_id: int, act_dim: int) -> SamplerSettings:
    n = cfg["noise"]
    prob = n["warm_start_probability"]
    if n["warm_start_samplers"] is not None:
        prob = 1.0 if sampler_id < n["warm_start_samplers"] else 0.0
    return SamplerSettings(noise=build_noise_policy(cfg), ou=build_ou(cfg, act_dim), param_sigma=n["param_sigma"],
                           warm_start_probability=prob, warm_start_range=tuple(n["warm_start_range"]),
                           epsilon=n["epsilon"])


def load_patterns(path: str | Path) -> PatternTable:
    """Read a mined ``patterns.csv`` back into a table."""
    try:
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as exc:
        raise ConfigurationError(f"patterns.file: cannot read {path}: {exc.strerror}") from None
    try:
        patterns = [tuple(int(c) for c in r["pattern"]) for r in rows]
        counts = [int(r["count"]) for r in rows]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"patterns.file: {path} is not a patterns table ({exc})") from None
    if not patterns or any(set(p) - {0, 1} for p in patterns):
        raise ConfigurationError(f"patterns.file: {path} has no valid bit patterns")
    return PatternTable(patterns, counts, (str(path),))


def build_offpolicy_model(cfg: dict, obs_dim: int, act_dim: int, rng: np.random.Generator):
    dcfg = build_ddpg_config(cfg)
    alg = cfg["algorithm"]
    if alg == "ddpg":
        return DDPGModel(create_ddpg(obs_dim, act_dim, dcfg, rng))
    if alg == "ace":
        return ACEModel([create_ddpg(obs_dim, act_dim, dcfg, rng) for _ in range(cfg["agent"]["n_pairs"])])
    table = load_patterns(cfg["patterns"]["file"])
    if len(table.patterns[0]) != act_dim:
        raise ConfigurationError(f"patterns.file: patterns have {len(table.patterns[0])} bits, actions {act_dim}")
    return PatternDQNModel(create_ddpg(obs_dim, act_dim, dcfg, rng), table, cfg["patterns"]["top_m"])


class TrainingRun:
    """Bookkeeping shared by every training loop: budget, metrics, evaluation, checkpoints."""

    def __init__(self, cfg: dict, out: Path, agents: list):
        self.cfg = cfg
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        atomic_write(self.out / "config.json", json.dumps(cfg, indent=1).encode())
        self.metrics = MetricsWriter(self.out / "metrics.csv")
        self.started = time.monotonic()
        self.episodes = 0
        self.env_steps = 0
        self.env_substeps = 0
        self.eval_env = build_env(cfg)
        self.eval_seeds = eval_seeds(cfg)
        self.eval_means: list[float] = []
        self.agents = agents
        t = cfg["training"]
        self.schedule = None
        if t["optimizer_schedule"] == "two_stage":
            self.schedule = TwoStageSchedule(t["stage1_lr"], t["stage2_lr"], t["plateau_eps"], t["plateau_window"])
            for a in agents:
                start_stage_one(a, self.schedule)

    @property
    def stage(self) -> int:
        return 1 if self.schedule is None else self.schedule.stage

    @property
    def elapsed(self) -> float:
        return time.monotonic() - self.started

    def budget_reached(self) -> bool:
        b = self.cfg["budget"]
        return ((b["episodes"] is not None and self.episodes >= b["episodes"])
                or (b["env_substeps"] is not None and self.env_substeps >= b["env_substeps"])
                or (b["wall_seconds"] is not None and self.elapsed >= b["wall_seconds"]))

    def record(self, return_raw: float, return_shaped: float, distance: float, fell: bool, steps: int,
               substeps: int, version: int, noise_mode: str) -> None:
        self.episodes += 1
        self.env_steps += steps
        self.env_substeps += substeps
        self.metrics.write({"wall_seconds": round(self.elapsed, 3), "episode": self.episodes,
                            "env_steps": self.env_steps, "return_raw": float(return_raw),
                            "return_shaped": float(return_shaped), "distance_m": max(0.0, float(distance)),
                            "fell": bool(fell), "weights_version": version, "noise_mode": noise_mode,
                            "stage": self.stage})

    def eval_due(self) -> bool:
        every = self.cfg["eval"]["every_episodes"]
        return bool(every) and self.episodes % every == 0 and bool(self.eval_seeds)

    def evaluate(self, snapshot: PolicySnapshot) -> dict:
        """Noise-free evaluation; feeds the optimizer schedule and returns the summary."""
        result = evaluate_policy(self.eval_env, snapshot, self.eval_seeds)
        self.eval_means.append(result["mean_return"])
        log.info("episode %d: eval mean %.3f max %.3f falls %d", self.episodes, result["mean_return"],
                 result["max_return"], result["falls"])
        if self.schedule is not None:
            before = self.schedule.stage
            two_stage_finetune(self.agents[0], self.schedule, result["mean_return"])
            if self.schedule.stage != before:
                for a in self.agents[1:]:
                    for opt in ("actor_opt", "critic_opt", "policy_opt", "value_opt"):
                        if hasattr(a, opt):
                            getattr(a, opt).reset("sgd", self.schedule.stage2_lr)
                log.info("plateau after %d evaluations: switched to SGD", self.schedule.evaluations)
        return result

    @property
    def uncertainty(self) -> float:
        return uncertainty_from_returns(self.eval_means[-UNCERTAINTY_WINDOW:])

    def checkpoint_due(self) -> bool:
        every = self.cfg["checkpoint_every"]
        return bool(every) and self.episodes % every == 0

    def checkpoint(self, snapshot: PolicySnapshot, arrays: dict) -> None:
        save_checkpoint(self.out, snapshot, arrays, {"algorithm": self.cfg["algorithm"], "episode": self.episodes,
                                                     "env_steps": self.env_steps, "config": self.cfg})

    def close(self) -> None:
        self.metrics.close()


class OffPolicyTrainer:
    """Replay-based learners (one pair, an ensemble of pairs, or Q-learning over patterns)."""

    def __init__(self, cfg: dict, out: Path):
        self.cfg = cfg
        seed = cfg["seed"]
        self.env_template = build_env(cfg)
        obs_dim, act_dim = self.env_template.obs_dim, self.env_template.act_dim
        self.model = build_offpolicy_model(cfg, obs_dim, act_dim, np.random.default_rng([seed, 0]))
        replay = build_replay(cfg, obs_dim, act_dim, mask_rng=np.random.default_rng([seed, 1]))
        t, r = cfg["training"], cfg["replay"]
        settings = LearnerSettings(batch_size=t["batch_size"], updates_per_step=t["updates_per_step"],
                                   reflect_augment=r["reflect_augment"], prioritized_beta=r["beta"],
                                   learning_starts=t["learning_starts"])
        self.learner = Learner(self.model, replay, settings, np.random.default_rng([seed, 2]))
        self.run = TrainingRun(cfg, out, self.model.agents)

    def _checkpoint(self) -> None:
        snap = self.learner.snapshot()
        self.run.checkpoint(snap, {**self.model.state_arrays(), **snap.arrays()})

    def _after_episode(self, record) -> None:
        run = self.run
        run.record(record.return_raw, record.return_shaped, record.distance, record.fell, record.steps,
                   record.substeps, record.weights_version, record.noise_mode)
        if run.eval_due():
            result = run.evaluate(self.learner.snapshot())
            self.learner.record_eval(result)
        if run.checkpoint_due():
            self._checkpoint()

    def train_single(self) -> dict:
        cfg = self.cfg
        n = cfg["cluster"]["n_samplers"]
        act_dim = self.env_template.act_dim
        cores = [SamplerCore(build_env(cfg), sampler_settings(cfg, i, act_dim), i, cfg["seed"]) for i in range(n)]
        seeds = [iter(sampler_seeds(i, n)) for i in range(n)]
        channel = InMemoryChannel(self.learner)
        i = 0
        while not self.run.budget_reached():
            core = cores[i % n]
            record = core.run(channel.get_weights(), next(seeds[i % n]))
            channel.send_episode(record)
            self._after_episode(record)
            if self.run.eval_means:
                for c in cores:
                    c.uncertainty = self.run.uncertainty
            i += 1
        return self._finish()

    def train_tcp(self, addr: str | None = None, spawn: bool = True) -> dict:
        cfg = self.cfg
        server = LearnerServer(self.learner, addr or cfg["cluster"]["addr"]).start()
        log.info("learner listening on %s", server.address)
        procs = []
        try:
            if spawn:
                procs = spawn_samplers(self.run.out / "config.json", server.address, cfg["cluster"]["n_samplers"])

            def on_episode(record, _info):
                self._after_episode(record)
                if self.run.budget_reached():
                    server.stop()

            b = cfg["budget"]
            server.serve(on_episode, max_episodes=b["episodes"], wall_seconds=b["wall_seconds"])
        finally:
            for p in procs:
                p.terminate()
            for p in procs:
                try:
                    p.wait(timeout=10)
                except subprocess.TimeoutExpired:
                    p.kill()
            server.close()
        return self._finish()

    def _finish(self) -> dict:
        self._checkpoint()
        self.run.close()
        stats = self.learner.stats
        return {"episodes": self.run.episodes, "env_steps": self.run.env_steps, "updates": stats.updates,
                "admitted": stats.admitted, "version": self.learner.version}


def spawn_samplers(config_path: Path, addr: str, n: int) -> list[subprocess.Popen]:
    env = {**os.environ, ADDR_ENV: addr}
    src = str(Path(__file__).resolve().parents[2])
    env["PYTHONPATH"] = os.pathsep.join(p for p in (src, env.get("PYTHONPATH")) if p)
    return [subprocess.Popen([sys.executable, "-m", "l2run", "-q", "sample", "--config", str(config_path),
                              "--sampler-id", str(i), "--n-samplers", str(n), "--give-up-after", "30"], env=env)
            for i in range(n)]


def train_dbddpg(cfg: dict, out: Path) -> dict:
    """Single-process K-headed training with per-step updates of the active head."""
    seed = cfg["seed"]
    env = build_env(cfg)
    agent = create_dbddpg(env.obs_dim, env.act_dim, build_dbddpg_config(cfg), np.random.default_rng([seed, 0]))
    replay = build_replay(cfg, env.obs_dim, env.act_dim, n_heads=agent.n_heads, p_mask=agent.config.p_mask,
                          mask_rng=np.random.default_rng([seed, 1]))
    rng = np.random.default_rng([seed, 2])
    run = TrainingRun(cfg, out, [agent])
    policy = build_noise_policy(cfg)
    ou = build_ou(cfg, env.act_dim)
    t, r = cfg["training"], cfg["replay"]
    beta = r["beta"] if r["prioritized"] else None
    warm_total = warmup_episodes_total(agent)

    def snapshot() -> PolicySnapshot:
        return PolicySnapshot("dbddpg", agent.actor_spec, agent.critic_spec, [agent.actor], [agent.critic],
                              agent.config.box, version=agent.updates)

    def arrays(snap: PolicySnapshot) -> dict:
        return {**snap.arrays(), **nn.params_to_arrays(agent.actor_target, "actor_target0/"),
                **nn.params_to_arrays(agent.critic_target, "critic_target0/")}

    for ep in itertools.count():
        if run.budget_reached():
            break
        noise = ActionNoise(policy.mode, env.act_dim, policy, ou) if policy.enabled else None
        version = agent.updates
        res = dbddpg_run_episode(agent, env, noise, replay, rng, ep, batch_size=t["batch_size"],
                                 updates_per_step=int(round(t["updates_per_step"])),
                                 warmup_episode=ep if ep < warm_total else None, prioritized_beta=beta)
        if noise is not None:
            ou = replace(ou, t=noise.ou.t)
        run.record(res["return_raw"], res["return_shaped"], res["distance"], res["fell"], res["steps"],
                   res["substeps"], version, policy.mode if noise is not None else "none")
        if run.eval_due():
            run.evaluate(snapshot())
        if run.checkpoint_due():
            snap = snapshot()
            run.checkpoint(snap, arrays(snap))
    snap = snapshot()
    run.checkpoint(snap, arrays(snap))
    run.close()
    return {"episodes": run.episodes, "env_steps": run.env_steps, "updates": agent.updates,
            "admitted": replay.stats.admitted, "version": agent.updates}


def train_ppo(cfg: dict, out: Path) -> dict:
    """On-policy loop: fixed-length rollouts, then clipped-surrogate epochs."""
    seed = cfg["seed"]
    env = build_env(cfg)
    agent = create_ppo(env.obs_dim, env.act_dim, build_ppo_config(cfg), np.random.default_rng([seed, 0]))
    rng = np.random.default_rng([seed, 2])
    run = TrainingRun(cfg, out, [agent])
    seeds = itertools.count()
    iteration = 0

    def snapshot() -> PolicySnapshot:
        return PolicySnapshot("ppo", agent.policy_spec, None, [agent.policy], [], agent.config.box,
                              version=iteration)

    while not run.budget_reached():
        rollout, finished = collect_rollout(agent, env, agent.config.rollout_steps, rng, seeds)
        ppo_update(agent, rollout, rng)
        for ep in finished:
            if run.budget_reached():
                break
            run.record(ep["return_raw"], ep["return_shaped"], ep["distance"], ep["fell"], ep["steps"],
                       ep["substeps"], iteration, "gaussian")
            if run.eval_due():
                run.evaluate(snapshot())
            if run.checkpoint_due():
                snap = snapshot()
                run.checkpoint(snap, snap.arrays())
        iteration += 1
    snap = snapshot()
    run.checkpoint(snap, snap.arrays())
    run.close()
    return {"episodes": run.episodes, "env_steps": run.env_steps, "updates": iteration, "version": iteration}


def train(cfg: dict, out: Path) -> dict:
    alg = cfg["algorithm"]
    if alg == "dbddpg":
        return train_dbddpg(cfg, out)
    if alg == "ppo":
        return train_ppo(cfg, out)
    trainer = OffPolicyTrainer(cfg, out)
    if cfg["cluster"]["mode"] == "tcp":
        return trainer.train_tcp()
    return trainer.train_single()


def serve(cfg: dict, out: Path, addr: str | None) -> dict:
    """Learner only: samplers connect from elsewhere."""
    if cfg["algorithm"] in ("dbddpg", "ppo"):
        raise ConfigurationError(f"algorithm: {cfg['algorithm']} trains in a single process only")
    return OffPolicyTrainer(cfg, out).train_tcp(addr, spawn=False)


def sample(cfg: dict, addr: str | None, sampler_id: int, n_samplers: int, episodes: int | None,
           give_up_after: float | None) -> int:
    """Sampler only: fetch weights, roll out, ship whole episodes until told to stop."""
    if not 0 <= sampler_id < n_samplers:
        raise ConfigurationError("sampler-id must lie in [0, n-samplers)")
    configured = addr or (cfg["cluster"]["addr"] if not cfg["cluster"]["addr"].endswith(":0") else None)
    client = RemoteLearner(learner_address(configured), give_up_after=give_up_after,
                           hello_info={"sampler_id": sampler_id})
    env = build_env(cfg)
    core = SamplerCore(env, sampler_settings(cfg, sampler_id, env.act_dim), sampler_id, cfg["seed"])
    try:
        return run_sampler(client, core, sampler_seeds(sampler_id, n_samplers), max_episodes=episodes)
    except ConnectionError as exc:
        log.info("sampler %d stopping: %s", sampler_id, exc)
        return 0
    finally:
        client.close()


# ------------------------------------------------------------- evaluation


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def summarize(label: str, results) -> dict:
    returns = [r.raw_return for r in results]
    return {"composition": label, "tests": len(results),
            "mean_return": float(np.mean(returns)) if returns else float("nan"),
            "max_return": float(np.max(returns)) if returns else float("nan"),
            "falls": int(sum(r.fell for r in results)),
            "mean_distance_m": float(np.mean([max(0.0, r.distance) for r in results])) if results else float("nan")}


def write_eval(out: Path, evaluated: list[tuple[str, list, list[int]]]) -> list[dict]:
    """``eval.csv`` (one summary row per evaluated policy) and ``eval_episodes.csv``."""
    out.mkdir(parents=True, exist_ok=True)
    summaries = [summarize(label, results) for label, results, _ in evaluated if results]
    _write_rows(out / "eval.csv", EVAL_FIELDS, ([s[k] for k in EVAL_FIELDS] for s in summaries))
    _write_rows(out / "eval_episodes.csv", EVAL_EPISODE_FIELDS,
                ((label, seed, r.raw_return, max(0.0, r.distance), r.fell, r.steps)
                 for label, results, seeds in evaluated for seed, r in zip(seeds, results)))
    return summaries


def pool_snapshots(snaps: list[PolicySnapshot]) -> PolicySnapshot:
    """Concatenate the actors and critics of compatible checkpoints into one ensemble."""
    if len(snaps) == 1:
        return snaps[0]
    first = snaps[0]
    for s in snaps:
        if s.kind not in ("ddpg", "ace"):
            raise ConfigurationError(f"only actor-critic checkpoints can be pooled, got {s.kind}")
        if s.actor_spec.to_dict() != first.actor_spec.to_dict() or s.critic_spec.to_dict() != first.critic_spec.to_dict():
            raise ConfigurationError("pooled checkpoints must share network shapes")
    return PolicySnapshot("ace", first.actor_spec, first.critic_spec, [a for s in snaps for a in s.actors],
                          [c for s in snaps for c in s.critics], first.box, version=first.version)


def _check_env(env, snap: PolicySnapshot) -> None:
    if env.obs_dim != snap.obs_dim or env.act_dim != snap.act_dim:
        raise ConfigurationError(f"policy expects obs {snap.obs_dim} / act {snap.act_dim}, environment has "
                                 f"{env.obs_dim} / {env.act_dim}")


def run_eval(checkpoints: list[str], episodes: int, seed: int, compositions: list[str] | None,
             out: Path) -> list[dict]:
    loaded = [load_checkpoint(p) for p in checkpoints]
    pool = pool_snapshots([s for s, _ in loaded])
    env = build_env(loaded[0][1]["config"])
    _check_env(env, pool)
    seeds = list(range(seed, seed + episodes))
    if compositions:
        policies = [(c, pool.compose(*parse_composition(c))) for c in compositions]
    else:
        label = f"A{len(pool.actors)}C{len(pool.critics)}" if len(loaded) > 1 else pool.kind
        policies = [(label, pool)]
    evaluated = [(label, evaluate(env, p.act, seeds), seeds) for label, p in policies]
    return write_eval(out, evaluated)


def run_blend(checkpoints: list[str], alpha: float | None, switch_n: int | None, switch_start: int,
              episodes: int, seed: int, out: Path) -> list[dict]:
    if len(checkpoints) != 2:
        raise ConfigurationError("blend needs exactly two checkpoints")
    (pi, pi_doc), (eta, _) = (load_checkpoint(p) for p in checkpoints)
    if pi.act_dim != eta.act_dim or pi.obs_dim != eta.obs_dim:
        raise ConfigurationError(f"incompatible policies: obs {pi.obs_dim}/{eta.obs_dim}, "
                                 f"action dims {pi.act_dim}/{eta.act_dim}")
    env = build_env(pi_doc["config"])
    _check_env(env, pi)
    seeds = list(range(seed, seed + episodes))
    low, high = env.action_low, env.action_high
    if (alpha is None) == (switch_n is None):
        raise ConfigurationError("give exactly one of alpha or a switching length")
    if alpha is not None:
        label = f"blend:alpha={alpha:g}"
        results = evaluate(env, blended_policy(pi.act, eta.act, alpha, low, high), seeds)
    else:
        label = f"switch:n={switch_n}:start={switch_start}"
        switching = SwitchingPolicy(pi.act, eta.act, switch_n, switch_start, low, high)
        results = []
        for s in seeds:
            switching.reset()
            results.extend(evaluate(env, switching, [s]))
    return write_eval(out, [(label, results, seeds)])


def run_mine(checkpoint: str, episodes: int, seed: int, threshold: float, out: Path) -> PatternTable:
    snap, doc = load_checkpoint(checkpoint)
    env = build_env(doc["config"])
    _check_env(env, snap)
    table = mine_patterns(snap.act, env, range(seed, seed + episodes), threshold, (str(checkpoint),))
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "patterns.csv", PATTERN_FIELDS, table.rows())
    return table
