"""Acceptance suite: one PASS/FAIL line per criterion, echoed in the terminal summary.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
The ablation and ensemble criteria train real agents and take most of the runtime.
"""

from __future__ import annotations

import csv
import math
import socket
import statistics
import sys
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from l2run import nncore as nn
from l2run.agents import (DBDDPGConfig, DDPGConfig, EnsembleAgent, PPOConfig, ace_training_target,
                          collect_rollout, create_dbddpg, create_ddpg, create_ppo, dbddpg_update, ddpg_targets,
                          ddpg_update, ensemble_action, ppo_update, run_episode, transition_schedule)
from l2run.cli import main as cli_main
from l2run.cli import resolve_config, runner
from l2run.env import EnvConfig, RunnerEnv
from l2run.env import symrunner as sr
from l2run.env.bandit import QuadraticBandit
from l2run.env.observation import reflect_transition
from l2run.explore import OUState, ou_sequence
from l2run.orchestrator import (Backoff, DDPGModel, InMemoryChannel, Learner, LearnerServer, LearnerSettings,
                                Message, MsgType, RemoteLearner, SamplerCore, decode_message, encode_message,
                                run_sampler, sampler_seeds)
from l2run.replay import AdmissionFilter, ReplayBuffer
from l2run.transition import Batch, Transition

from conftest import max_rel_error, numeric_grads, random_spec

# ----------------------------------------------------------------- settings

ABLATION_SEEDS = range(5)
ABLATION_SUBSTEPS = 200_000
ABLATION_BUDGET_S = 2 * 3600
ABLATION_EVAL_EPISODES = 20
ABLATION_EVAL_SEED = 10_000
# every ablation shares the tuned base configuration; each row switches one component off
ABLATIONS = {
    "LN+noise+flip": {},
    "noise+flip": {"agent": {"layer_norm": False}},
    "LN+flip": {"noise": {"p_parameter": 0.0}},
    "LN+noise": {"replay": {"reflect_augment": False}},
}
ABLATION_BASE = {
    "training": {"batch_size": 128},
    "replay": {"capacity": 250_000},
    "budget": {"episodes": 10 ** 9, "env_substeps": ABLATION_SUBSTEPS},
    "checkpoint_every": 10 ** 9,
}

N_MEMBERS = 10
MEMBER_SUBSTEPS = 100_000
MEMBER_CONFIG = {
    "agent": {"hidden": [64, 64], "critic_hidden": [64, 64]},
    "replay": {"capacity": 250_000},
    "budget": {"episodes": 10 ** 9, "env_substeps": MEMBER_SUBSTEPS},
    "checkpoint_every": 10 ** 9,
}
PAIRED_SEEDS = 100


def _train(user: dict, preset: str, seed: int, out: Path) -> float:
    cfg = resolve_config(user, preset, seed)
    t0 = time.perf_counter()
    runner.train(cfg, out)
    return time.perf_counter() - t0


# ------------------------------------------------------------- criterion 1


def test_gradient_suite(acceptance_report):
    t0 = time.perf_counter()
    worst, kinds = 0.0, set()
    n_nets = 24
    for i in range(n_nets):
        rng = np.random.default_rng(5000 + i)
        spec = random_spec(rng, i)
        kinds.update((layer.kind, layer.activation) for layer in spec.body + spec.head)
        params = nn.init_params(spec, rng, dtype=np.float64)
        for k in params.arrays:
            params.arrays[k] = params.arrays[k] + rng.normal(0, 0.1, size=params.arrays[k].shape)
        x = rng.normal(size=(3, spec.input_dim))
        up = rng.normal(size=(3, spec.output_dim))
        head = i % spec.n_heads
        grads, dx = nn.backward(spec, params, x, up, head=head)
        num, num_dx = numeric_grads(spec, params, x, up, head=head, h=1e-5)
        worst = max([worst, max_rel_error(dx, num_dx)] + [max_rel_error(g, num[name]) for name, g in grads.items()])
    elapsed = time.perf_counter() - t0
    all_kinds = {k for k, _ in kinds} >= {"dense", "conv1d", "residual"}
    all_acts = {a for _, a in kinds} >= set(nn.ACTIVATIONS)
    ok = worst < 1e-4 and elapsed < 30 and all_kinds and all_acts
    acceptance_report(1, ok, f"{n_nets} nets, max rel error {worst:.2e} (< 1e-4), {elapsed:.1f} s (< 30 s), "
                             f"all layer kinds {all_kinds}, all activations {all_acts}")
    assert ok


# ------------------------------------------------------------- criterion 2


def test_ou_statistics(acceptance_report):
    t0 = time.perf_counter()
    theta, sigma, dt = 0.1, 0.2, 1e-2
    rng = np.random.default_rng(2)
    proto = OUState.zeros(4, theta=theta, sigma=sigma, dt=dt)
    st = OUState(rng.normal(size=4) * proto.stationary_std(), theta=theta, sigma=sigma, dt=dt)
    xs, _ = ou_sequence(st, 1_000_000, rng)
    a = 1 - theta * dt
    expected_std = math.sqrt(sigma ** 2 * dt / (1 - a * a))
    std_err = abs(math.sqrt(np.mean(xs ** 2)) / expected_std - 1)
    ac_err = max(abs(np.corrcoef(xs[:-1, i], xs[1:, i])[0, 1] - a) for i in range(xs.shape[1]))
    elapsed = time.perf_counter() - t0
    ok = std_err < 0.03 and ac_err < 0.01 and elapsed < 10
    acceptance_report(2, ok, f"std rel error {std_err:.4f} (< 0.03), lag-1 autocorr error {ac_err:.5f} (< 0.01), "
                             f"{elapsed:.1f} s (< 10 s)")
    assert ok


# ------------------------------------------------------------- criterion 3


def _filled_buffer(obs, act, seed=0, n=400):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(1000, obs, act, n_heads=1, p_mask=1.0, mask_rng=np.random.default_rng(seed))
    buf.push_episode([Transition(rng.normal(size=obs), rng.uniform(size=act), float(rng.normal()),
                                 rng.normal(size=obs), bool(rng.random() < 0.1)) for _ in range(n)])
    return buf


def test_reduction_oracles(acceptance_report):
    t0 = time.perf_counter()
    obs, act = 13, 4
    body, head = (16, 12), (8,)
    db = create_dbddpg(obs, act, DBDDPGConfig(n_heads=1, p_mask=1.0, body=body, head=head, activation="elu",
                                              layer_norm=True, actor_lr=1e-4, critic_lr=3e-4),
                       np.random.default_rng(3))
    dd = create_ddpg(obs, act, DDPGConfig(hidden=body + head, activation="elu", layer_norm=True, actor_lr=1e-4,
                                          critic_lr=3e-4), np.random.default_rng(3))
    buf = _filled_buffer(obs, act)
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    bitwise = True
    for _ in range(500):
        dbddpg_update(db, buf.sample_uniform(32, r1), 0)
        ddpg_update(dd, buf.sample_uniform(32, r2))
        for x, y in ((db.actor, dd.actor), (db.critic, dd.critic)):
            xs, ys = list(x.arrays.values()), list(y.arrays.values())
            bitwise &= len(xs) == len(ys) and all(u.tobytes() == v.tobytes() for u, v in zip(xs, ys))
    for x, y in ((db.actor_target, dd.actor_target), (db.critic_target, dd.critic_target)):
        bitwise &= all(u.tobytes() == v.tobytes() for u, v in zip(x.arrays.values(), y.arrays.values()))

    env = RunnerEnv(EnvConfig(), repeat=5)
    agent = create_ddpg(env.obs_dim, env.act_dim, DDPGConfig(final_scale=1.0), np.random.default_rng(4))
    single = EnsembleAgent.from_agents([agent]).compose("A1C0")
    same_stream, n_actions = True, 0
    for seed in range(5):
        a = run_episode(env, agent.act, seed).transitions
        b = run_episode(env, single.act, seed).transitions
        same_stream &= len(a) == len(b) and all(u.a.tobytes() == v.a.tobytes() for u, v in zip(a, b))
        n_actions += len(a)

    rng = np.random.default_rng(11)
    target_err = 0.0
    for _ in range(20):
        ag = create_ddpg(obs, act, DDPGConfig(gamma=0.9, final_scale=1.0), rng)
        n = 64
        batch = Batch(rng.normal(size=(n, obs)).astype(np.float32), rng.uniform(size=(n, act)).astype(np.float32),
                      rng.normal(size=n).astype(np.float32), rng.normal(size=(n, obs)).astype(np.float32),
                      (rng.random(n) < 0.2).astype(np.float32), np.ones((n, 1), np.float32))
        y = ace_training_target(batch, ag.actor_spec, [ag.actor_target], ag.critic_spec, [ag.critic_target], 0.9)
        target_err = max(target_err, float(np.max(np.abs(y - ddpg_targets(ag, batch)))))
    elapsed = time.perf_counter() - t0
    ok = bitwise and same_stream and target_err <= 1e-12 and elapsed < 120
    acceptance_report(3, ok, f"(a) 500-update bitwise {bitwise}; (b) action stream equal {same_stream} "
                             f"over {n_actions} actions; (c) target max diff {target_err:.1e} (<= 1e-12); "
                             f"{elapsed:.1f} s (< 120 s)")
    assert ok


# ------------------------------------------------------------- criterion 4


def _to64(p):
    return nn.NetworkParams({k: v.astype(np.float64) for k, v in p.arrays.items()})


def _column_sums(agent, S):
    """Column sums of every state's K x K matrix, one (critic head, actor head) pair at a time."""
    K = agent.n_heads
    sums = np.zeros((len(S), K))
    for j in range(K):
        a_j = agent.config.box.from_unit(nn.forward(agent.actor_spec, agent.actor, S, j))
        x = np.concatenate([S, a_j], axis=1)
        for i in range(K):
            sums[:, j] += nn.forward(agent.critic_spec, agent.critic, x, i)[:, 0]
    return sums


def test_column_sum_selection_exhaustive(acceptance_report):
    t0 = time.perf_counter()
    obs, act, n_states = 13, 4, 10_000
    misses, checked = 0, 0
    for K in range(1, 6):
        agent = create_dbddpg(obs, act, DBDDPGConfig(n_heads=K, body=(16,), head=(8,), final_scale=1.0),
                              np.random.default_rng(40 + K))
        agent.actor, agent.critic = _to64(agent.actor), _to64(agent.critic)
        S = np.random.default_rng(400 + K).normal(size=(n_states, obs))
        sums = _column_sums(agent, S)
        for s, row in zip(S, sums):
            _, j = ensemble_action(agent, s)
            misses += row[j] < row.max() - 1e-12 * max(1.0, abs(row.max()))
            checked += 1
    elapsed = time.perf_counter() - t0
    ok = misses == 0 and elapsed < 60
    acceptance_report(4, ok, f"K=1..5, {n_states} states each: {misses} of {checked} selections miss the maximal "
                             f"column sum; {elapsed:.1f} s (< 60 s)")
    assert ok


# ------------------------------------------------------------- criterion 5


def _rollout(state, actions, repeat):
    states, rewards = [state], []
    for a in actions:
        if state.done:
            break
        state, _, r, _ = sr.step(state, a, repeat, sr.EnvConfig())
        states.append(state)
        rewards.append(r)
    return states, rewards


def test_symmetry(acceptance_report):
    worst, flags_ok = 0.0, True
    for ep in range(100):
        rng = np.random.default_rng(ep)
        s, _ = sr.reset(int(rng.integers(2 ** 62)))
        repeat = int(rng.integers(1, 7))
        actions = rng.uniform(-0.2, 1.2, size=(1000 // repeat + 1, 4))
        a_states, a_rew = _rollout(s, actions, repeat)
        b_states, b_rew = _rollout(sr.mirror_state(s), sr.mirror_action(actions), repeat)
        flags_ok &= len(a_states) == len(b_states)
        for x, y in zip(a_states, b_states):
            xm = sr.mirror_state(x)
            worst = max(worst, float(np.max(np.abs(sr.observe(xm) - sr.observe(y)))))
            flags_ok &= xm.fallen == y.fallen and xm.done == y.done
        worst = max(worst, float(np.max(np.abs(np.subtract(a_rew, b_rew)))))

    env = RunnerEnv(EnvConfig(), repeat=5)
    buf = ReplayBuffer(10_000, env.obs_dim, env.act_dim)
    rng = np.random.default_rng(5)
    for seed in range(5):
        res = run_episode(env, lambda o: rng.uniform(size=env.act_dim), seed)
        buf.push_episode(res.transitions)
    involution = all(reflect_transition(reflect_transition(buf.get(i))).equals(buf.get(i)) for i in range(len(buf)))
    lengths = all(len(buf.sample_uniform(n, rng, reflect_augment=True)) == 2 * n for n in (1, 7, 64, 200))
    pbuf = ReplayBuffer(10_000, env.obs_dim, env.act_dim, prioritized=True)
    pbuf.push_episode(run_episode(env, lambda o: rng.uniform(size=env.act_dim), 9).transitions)
    lengths &= all(len(pbuf.sample_prioritized(n, rng, reflect_augment=True)[0]) == 2 * n for n in (1, 33))
    ok = worst <= 1e-12 and flags_ok and involution and lengths
    acceptance_report(5, ok, f"100 episodes max mirror error {worst:.1e} (<= 1e-12), flags equal {flags_ok}; "
                             f"reflection involution {involution}; augmented length 2n {lengths}")
    assert ok


# ------------------------------------------------------------- criterion 6


def _ddpg_bandit(seed: int) -> float:
    rng = np.random.default_rng(seed)
    env = QuadraticBandit()
    agent = create_ddpg(1, 1, DDPGConfig(gamma=0.0, tau=0.05, actor_lr=1e-3, critic_lr=1e-3, hidden=(32, 32)), rng)
    buf = ReplayBuffer(10_000, 1, 1, layout="bandit")
    for ep in range(1500):
        res = run_episode(env, agent.act, ep, noise=lambda r: r.normal(0, 0.2, 1), rng=rng)
        buf.push_episode(res.transitions)
        if len(buf) >= 32:
            ddpg_update(agent, buf.sample_uniform(32, rng))
    return float(agent.act(np.ones(1, np.float32))[0])


def _ppo_bandit(seed: int) -> float:
    rng = np.random.default_rng(seed)
    agent = create_ppo(1, 1, PPOConfig(rollout_steps=256, epochs=5, policy_lr=1e-3), rng)
    env, seeds = QuadraticBandit(), iter(range(10 ** 9))
    for _ in range(60):
        ro, _ = collect_rollout(agent, env, 256, rng, seeds)
        ppo_update(agent, ro, rng)
    return float(agent.act(np.ones(1, np.float32))[0])


def test_bandit_convergence(acceptance_report):
    t0 = time.perf_counter()
    ddpg = [_ddpg_bandit(s) for s in range(3)]
    ppo = [_ppo_bandit(s) for s in range(3)]
    elapsed = time.perf_counter() - t0
    hits = [abs(a - 0.3) <= 0.05 for a in ddpg + ppo]
    ok = all(hits) and elapsed < 300
    acceptance_report(6, ok, f"DDPG actions {[round(a, 3) for a in ddpg]}, PPO actions {[round(a, 3) for a in ppo]} "
                             f"(target 0.3 +- 0.05), {sum(hits)}/6 seed runs; {elapsed:.1f} s (< 300 s)")
    assert ok


# ------------------------------------------------------------- criterion 7


def test_ablation_ordering(acceptance_report, tmp_path_factory):
    root = tmp_path_factory.mktemp("ablation")
    t0 = time.perf_counter()
    scores: dict[str, list[float]] = {name: [] for name in ABLATIONS}
    for seed in ABLATION_SEEDS:
        for name, override in ABLATIONS.items():
            out = root / f"{name.replace('+', '_')}_{seed}"
            user = {k: dict(v) if isinstance(v, dict) else v for k, v in ABLATION_BASE.items()}
            for section, values in override.items():
                user[section] = {**user.get(section, {}), **values}
            _train(user, "reason8", seed, out)
            summary = runner.run_eval([str(out)], ABLATION_EVAL_EPISODES, ABLATION_EVAL_SEED, None, out)[0]
            scores[name].append(summary["mean_return"])
    elapsed = time.perf_counter() - t0
    medians = {name: statistics.median(v) for name, v in scores.items()}
    full = medians["LN+noise+flip"]
    ordered = all(full >= m for m in medians.values())
    ok = ordered and elapsed <= ABLATION_BUDGET_S
    header = "config           " + " ".join(f"seed{s:<5}" for s in ABLATION_SEEDS) + "  median"
    rows = [header] + [f"{name:<16} " + " ".join(f"{v:9.2f}" for v in vals) + f"  {medians[name]:8.2f}"
                       for name, vals in scores.items()]
    acceptance_report(7, ok, f"full-combination median {full:.2f} >= every ablation median: {ordered}; "
                             f"{elapsed / 60:.1f} min (<= 120 min)", rows)
    assert ok


# --------------------------------------------------------- criteria 8-10


@pytest.fixture(scope="module")
def members(tmp_path_factory):
    """Independently trained actors, one run directory each."""
    root = tmp_path_factory.mktemp("members")
    dirs = []
    for i in range(N_MEMBERS):
        out = root / f"member{i}"
        _train(MEMBER_CONFIG, "pku", 100 + i, out)
        dirs.append(out)
    return dirs


def test_pooled_actors_beat_single_actor(acceptance_report, members, tmp_path):
    ckpts = [str(d) for d in members]
    ens, single = runner.run_eval(ckpts, PAIRED_SEEDS, 0, [f"A{N_MEMBERS}C{N_MEMBERS}", "A1C0"], tmp_path)
    ok = ens["falls"] <= single["falls"] and ens["mean_return"] >= single["mean_return"]
    acceptance_report(8, ok, f"{PAIRED_SEEDS} paired seeds: A{N_MEMBERS}C{N_MEMBERS} falls {ens['falls']} "
                             f"mean {ens['mean_return']:.2f}; A1C0 falls {single['falls']} "
                             f"mean {single['mean_return']:.2f}")
    assert ok


def test_blending_endpoints(acceptance_report, members, tmp_path):
    pi, eta = str(members[0]), str(members[1])
    keys = ("tests", "mean_return", "max_return", "falls", "mean_distance_m")
    n = 20
    plain_pi = runner.run_eval([pi], n, 0, None, tmp_path / "pi")[0]
    plain_eta = runner.run_eval([eta], n, 0, None, tmp_path / "eta")[0]
    at_one = runner.run_blend([pi, eta], 1.0, None, 0, n, 0, tmp_path / "a1")[0]
    at_zero = runner.run_blend([pi, eta], 0.0, None, 0, n, 0, tmp_path / "a0")[0]
    ends = all(at_one[k] == plain_pi[k] and at_zero[k] == plain_eta[k] for k in keys)
    sched = [transition_schedule(k, 150) for k in (0, 75, 150)]
    ok = ends and sched == [1.0, 0.5, 0.0]
    acceptance_report(9, ok, f"alpha=1 and alpha=0 metrics identical to the constituents over {n} seeds: {ends}; "
                             f"schedule at k=0,75,150 -> {sched}")
    assert ok


def test_pattern_mining_format(acceptance_report, members, tmp_path, capsys):
    code = cli_main(["-q", "mine", "--checkpoint", str(members[0]), "--episodes", "10", "--out", str(tmp_path)])
    printed = capsys.readouterr().out
    with open(tmp_path / "patterns.csv", newline="") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    well_formed = header == list(runner.PATTERN_FIELDS) and len(body) > 0 and all(len(r) == 4 for r in body)
    patterns = [r[0] for r in body]
    well_formed &= all(set(p) <= {"0", "1"} and len(p) == 4 for p in patterns) and len(set(patterns)) == len(body)
    counts = [int(r[1]) for r in body]
    freq = np.array([float(r[2]) for r in body])
    cum = np.array([float(r[3]) for r in body])
    well_formed &= all(c > 0 for c in counts) and counts == sorted(counts, reverse=True)
    total_ok = abs(freq.sum() - 100.0) <= 0.1
    prefix_ok = bool(np.allclose(np.cumsum(freq), cum, rtol=0, atol=1e-9))
    sat_line = next((line for line in printed.splitlines() if "saturation" in line), "")
    ok = code == 0 and well_formed and total_ok and prefix_ok and sat_line != ""
    acceptance_report(10, ok, f"{len(body)} unique patterns, well-formed {well_formed}, frequencies sum "
                              f"{freq.sum():.4f}, cumulative is prefix sum {prefix_ok}; reported: {sat_line!r}")
    assert ok


# ------------------------------------------------------------ criterion 11


def _small_learner(seed=0, settings=LearnerSettings(batch_size=16), admission=None):
    env = RunnerEnv(EnvConfig(), repeat=5)
    agent = create_ddpg(env.obs_dim, env.act_dim, DDPGConfig(hidden=(16, 16)), np.random.default_rng(seed))
    replay = ReplayBuffer(10_000, env.obs_dim, env.act_dim, admission=admission)
    return Learner(DDPGModel(agent), replay, settings, np.random.default_rng(seed + 1))


def _small_env(max_substeps):
    return RunnerEnv(EnvConfig(max_substeps=max_substeps), repeat=5)


def _serve_in_thread(srv, **kw):
    t = threading.Thread(target=srv.serve, kwargs=kw, daemon=True)
    t.start()
    return t


def _admission_counts() -> tuple[int, int]:
    adm = AdmissionFilter(min_step_reward=0.02)
    settings = LearnerSettings(batch_size=16, updates_per_step=0.0)
    n_samplers, per_sampler = 4, 3
    single = _small_learner(settings=settings, admission=adm)
    ch = InMemoryChannel(single)
    cores = [SamplerCore(_small_env(200), sampler_id=i) for i in range(n_samplers)]
    seeds = [sampler_seeds(i, n_samplers) for i in range(n_samplers)]
    for _ in range(per_sampler):
        for i in range(n_samplers):
            run_sampler(ch, cores[i], seeds[i], max_episodes=1)

    dist = _small_learner(settings=settings, admission=adm)
    srv = LearnerServer(dist, "127.0.0.1:0").start()
    t = _serve_in_thread(srv, max_episodes=n_samplers * per_sampler)

    def work(i):
        client = RemoteLearner(srv.address, give_up_after=10)
        run_sampler(client, SamplerCore(_small_env(200), sampler_id=i), sampler_seeds(i, n_samplers),
                    max_episodes=per_sampler)
        client.close()

    ws = [threading.Thread(target=work, args=(i,)) for i in range(n_samplers)]
    for w in ws:
        w.start()
    for w in ws:
        w.join(60)
    t.join(60)
    srv.close()
    assert dist.stats.episodes == single.stats.episodes == n_samplers * per_sampler
    return single.stats.admitted, dist.stats.admitted


def _survives_restart() -> bool:
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    addr = f"127.0.0.1:{port}"
    first = LearnerServer(_small_learner(), addr).start()
    t1 = _serve_in_thread(first, max_episodes=1)
    client = RemoteLearner(addr, backoff=Backoff(base=0.05, cap=0.2), give_up_after=20)
    core = SamplerCore(_small_env(50))
    run_sampler(client, core, [0], max_episodes=1)
    t1.join(10)
    first.close()
    second = _small_learner(seed=9)
    box = {}

    def restart():
        time.sleep(0.3)
        box["srv"] = LearnerServer(second, addr).start()
        box["srv"].serve(max_episodes=2)

    t2 = threading.Thread(target=restart, daemon=True)
    t2.start()
    run_sampler(client, core, [1, 2], max_episodes=2)
    t2.join(20)
    box["srv"].close()
    client.close()
    return client.reconnects >= 1 and second.stats.episodes == 2


def test_protocol(acceptance_report):
    rng = np.random.default_rng(11)
    tags = list(MsgType)
    mismatches = 0
    n_msgs = 100_000
    for _ in range(n_msgs):
        msg = Message(tags[int(rng.integers(len(tags)))], rng.bytes(int(rng.integers(0, 512))))
        mismatches += decode_message(encode_message(msg)) != msg
    single, dist = _admission_counts()
    survived = _survives_restart()
    ok = mismatches == 0 and single == dist and single > 0 and survived
    acceptance_report(11, ok, f"{n_msgs} random round trips, {mismatches} mismatches; admitted transitions "
                              f"single-process {single} vs 4 TCP samplers {dist}; sampler survives restart {survived}")
    assert ok


# ------------------------------------------------------------ criterion 12


def test_replay(acceptance_report):
    obs, act = 13, 4
    rng = np.random.default_rng(12)
    buf = ReplayBuffer(512, obs, act, prioritized=True, alpha=0.6)
    worst, n_ops = 0.0, 100_000

    def tr():
        return Transition(rng.normal(size=obs), rng.uniform(size=act), float(rng.normal()), rng.normal(size=obs),
                          False)

    for _ in range(n_ops):
        kind = rng.integers(3)
        if kind == 0 or not len(buf):
            buf.push_episode([tr() for _ in range(int(rng.integers(1, 4)))])
        elif kind == 1:
            ids = rng.integers(max(0, buf.inserted - 2 * len(buf)), buf.inserted, size=int(rng.integers(1, 8)))
            buf.update_priorities(ids, rng.exponential(10.0, size=len(ids)))
        else:
            buf.sample_prioritized(int(rng.integers(1, 16)), rng)
        expected = buf.priority_sum()
        worst = max(worst, abs(buf.tree.total - expected) / max(expected, 1e-300))

    two = ReplayBuffer(2, obs, act, prioritized=True, alpha=1.0)
    two.push_episode([tr(), tr()])
    two.update_priorities([0, 1], [3.0 - 1e-6, 1.0 - 1e-6])
    _, _, ids = two.sample_prioritized(100_000, np.random.default_rng(0), alpha=1.0, beta=0.0)
    freq = np.bincount(ids, minlength=2) / len(ids)
    freq_ok = abs(freq[0] - 0.75) <= 0.01 and abs(freq[1] - 0.25) <= 0.01
    ok = worst < 1e-6 and freq_ok
    acceptance_report(12, ok, f"{n_ops} random ops, max root rel error {worst:.1e} (< 1e-6); "
                              f"frequencies ({freq[0]:.4f}, {freq[1]:.4f}) vs (0.75, 0.25) +- 0.01")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
