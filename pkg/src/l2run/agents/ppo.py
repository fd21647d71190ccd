"""Clipped-surrogate policy optimization with a diagonal Gaussian policy and GAE."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import nncore as nn
from ..errors import ConfigurationError, NumericError
from .common import ActionBox
from .rollout import terminal

LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 10
    minibatch: int = 64
    rollout_steps: int = 2048
    policy_lr: float = 3e-4
    value_lr: float = 1e-3
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    layer_norm: bool = False
    init_log_std: float = -1.0
    normalize_advantages: bool = True
    box: ActionBox = field(default_factory=ActionBox)

    def __post_init__(self):
        if not 0 <= self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ConfigurationError("gamma and gae_lambda must lie in [0, 1]")
        if self.clip_eps <= 0 or self.epochs < 1 or self.minibatch < 1:
            raise ConfigurationError("clip_eps, epochs and minibatch must be positive")


@dataclass
class PPOAgent:
    """Policy net (tanh mean mapped into the action box) with a state-independent ``log_std`` array."""

    config: PPOConfig
    policy_spec: nn.NetworkSpec
    value_spec: nn.NetworkSpec
    policy: nn.NetworkParams
    value: nn.NetworkParams
    policy_opt: nn.OptimizerState
    value_opt: nn.OptimizerState

    @property
    def act_dim(self) -> int:
        return self.policy_spec.output_dim

    def mean(self, s) -> np.ndarray:
        return self.config.box.from_unit(nn.forward(self.policy_spec, self.policy, s))

    def act(self, s) -> np.ndarray:
        """Deterministic action (the Gaussian mean)."""
        return self.mean(s)

    def sample(self, s, rng: np.random.Generator) -> tuple[np.ndarray, float]:
        mu = self.mean(s)
        log_std = self.policy["log_std"].astype(np.float64)
        a = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
        return a, float(log_prob(a, mu, log_std))

    def values(self, s) -> np.ndarray:
        return nn.forward(self.value_spec, self.value, np.atleast_2d(s))[:, 0]


def create_ppo(obs_dim: int, act_dim: int, config: PPOConfig, rng: np.random.Generator) -> PPOAgent:
    p_spec = nn.mlp(obs_dim, config.hidden, act_dim, config.activation, "tanh", config.layer_norm)
    v_spec = nn.mlp(obs_dim, config.hidden, 1, config.activation, "linear", config.layer_norm)
    policy = nn.init_params(p_spec, rng, final_scale=0.01)
    policy.arrays["log_std"] = np.full(act_dim, config.init_log_std, dtype=np.float32)
    value = nn.init_params(v_spec, rng)
    return PPOAgent(config, p_spec, v_spec, policy, value,
                    nn.OptimizerState("adam", config.policy_lr), nn.OptimizerState("adam", config.value_lr))


def log_prob(a, mu, log_std) -> np.ndarray:
    z = (a - mu) / np.exp(log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * a.shape[-1] * LOG_2PI


@dataclass
class Rollout:
    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    next_values: np.ndarray
    terminals: np.ndarray  # no bootstrap past this step
    ends: np.ndarray  # episode boundary (terminal or truncated)

    def __len__(self) -> int:
        return len(self.rewards)


def _fresh_summary() -> dict:
    return {"return_raw": 0.0, "return_shaped": 0.0, "distance": 0.0, "fell": False, "steps": 0, "substeps": 0}


def collect_rollout(agent: PPOAgent, env, n_steps: int, rng: np.random.Generator, seeds) -> tuple[Rollout, list]:
    """Run the stochastic policy for ``n_steps``; ``seeds`` is an iterator of episode seeds.

    Returns the rollout and a summary dict per episode finished in it
    (``return_raw``, ``return_shaped``, ``distance``, ``fell``, ``steps``, ``substeps``).
    """
    obs_l, act_l, logp_l, rew_l, term_l, end_l, nxt_l = [], [], [], [], [], [], []
    finished = []
    obs = env.reset(next(seeds))
    ep = _fresh_summary()
    for t in range(n_steps):
        a, lp = agent.sample(obs, rng)
        nxt, r, done, info = env.step(np.clip(a, env.action_low, env.action_high))
        ep["return_raw"] += info["raw_reward"]
        ep["return_shaped"] += float(r)
        ep["steps"] += 1
        ep["substeps"] += int(info.get("substeps", 0))
        ep["distance"] = float(info.get("distance", 0.0))
        ep["fell"] = bool(info.get("fell", False))
        obs_l.append(obs)
        act_l.append(a)
        logp_l.append(lp)
        rew_l.append(r)
        nxt_l.append(nxt)
        term_l.append(terminal(done, info))
        end_l.append(done or t == n_steps - 1)
        if done:
            finished.append(ep)
            ep = _fresh_summary()
            if t < n_steps - 1:
                obs = env.reset(next(seeds))
        else:
            obs = nxt
    obs_a = np.array(obs_l)
    values = agent.values(obs_a).astype(np.float64)
    next_values = agent.values(np.array(nxt_l)).astype(np.float64)
    return Rollout(obs_a, np.array(act_l), np.array(logp_l), np.array(rew_l, dtype=np.float64), values,
                   next_values, np.array(term_l), np.array(end_l)), finished


def compute_gae(rewards, values, next_values, terminals, ends, gamma: float, lam: float
                ) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets (``adv + values``)."""
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        boot = 0.0 if terminals[t] else gamma * next_values[t]
        delta = rewards[t] + boot - values[t]
        if ends[t]:
            running = 0.0
        running = delta + gamma * lam * running
        adv[t] = running
    return adv, adv + np.asarray(values)


def normalize_advantages(adv) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + 1e-12)


def surrogate_and_grads(agent: PPOAgent, s, a, logp_old, adv, clip_eps: float):
    """Clipped surrogate loss ``-mean(min(r A, clip(r) A))`` and its policy gradients.

    Returns ``(loss, grads, ratio)``.
    """
    box = agent.config.box
    u, tape = nn.forward_tape(agent.policy_spec, agent.policy, s)
    mu = box.from_unit(u.astype(np.float64))
    log_std = agent.policy["log_std"].astype(np.float64)
    std = np.exp(log_std)
    z = (a - mu) / std
    logp = -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) - 0.5 * a.shape[1] * LOG_2PI
    ratio = np.exp(logp - logp_old)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * adv
    n = len(adv)
    loss = -float(np.mean(np.minimum(surr1, surr2)))
    g_logp = np.where(surr1 <= surr2, -adv * ratio / n, 0.0)
    upstream = g_logp[:, None] * (z / std) * box.half_width
    grads, _ = nn.backward(agent.policy_spec, agent.policy, s, upstream, tape=tape)
    grads["log_std"] = np.sum(g_logp[:, None] * (z * z - 1.0), axis=0).astype(np.float32)
    return loss, grads, ratio


def ppo_update(agent: PPOAgent, rollout: Rollout, rng: np.random.Generator, clip_eps: float | None = None,
               gae_lambda: float | None = None, epochs: int | None = None, minibatch: int | None = None) -> dict:
    """GAE, then ``epochs`` shuffled passes of clipped-surrogate and value-regression steps."""
    cfg = agent.config
    clip_eps = cfg.clip_eps if clip_eps is None else clip_eps
    lam = cfg.gae_lambda if gae_lambda is None else gae_lambda
    epochs = cfg.epochs if epochs is None else epochs
    minibatch = cfg.minibatch if minibatch is None else minibatch
    adv, returns = compute_gae(rollout.rewards, rollout.values, rollout.next_values, rollout.terminals,
                               rollout.ends, cfg.gamma, lam)
    if not np.isfinite(adv).all():
        bad = np.flatnonzero(~np.isfinite(adv))
        raise NumericError(f"non-finite advantages at rollout steps {bad[:5].tolist()} "
                           f"(reward range {np.nanmin(rollout.rewards)}..{np.nanmax(rollout.rewards)})")
    if cfg.normalize_advantages and len(adv) > 1:
        adv = normalize_advantages(adv)
    n = len(rollout)
    s = rollout.obs.astype(np.float32)
    pol_losses, val_losses, kls, clips = [], [], [], []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, minibatch):
            idx = order[start:start + minibatch]
            loss, grads, ratio = surrogate_and_grads(agent, s[idx], rollout.actions[idx], rollout.logp[idx],
                                                     adv[idx], clip_eps)
            agent.policy = nn.optimizer_step(agent.policy, grads, agent.policy_opt)
            v, tape = nn.forward_tape(agent.value_spec, agent.value, s[idx])
            err = v[:, 0] - returns[idx]
            grads_v, _ = nn.backward(agent.value_spec, agent.value, s[idx], (2.0 * err / len(idx))[:, None],
                                     tape=tape)
            agent.value = nn.optimizer_step(agent.value, grads_v, agent.value_opt)
            pol_losses.append(loss)
            val_losses.append(float(np.mean(err * err)))
            kls.append(float(np.mean(-np.log(ratio))))
            clips.append(float(np.mean(np.abs(ratio - 1) > clip_eps)))
    return {"policy_loss": float(np.mean(pol_losses)), "value_loss": float(np.mean(val_losses)),
            "kl": float(np.mean(kls)), "clip_fraction": float(np.mean(clips))}
