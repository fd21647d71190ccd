"""Double-bootstrapped DDPG: shared bodies, K actor/critic heads, ensemble action by column sums."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import nncore as nn
from ..errors import ConfigurationError, ContractError, NumericError
from ..transition import Batch
from .common import ActionBox, actor_action, batch_digest, critic_value, headed_spec
from .ddpg import actor_step, bootstrap_targets, critic_step


@dataclass(frozen=True)
class DBDDPGConfig:
    n_heads: int = 10
    p_mask: float = 0.5
    gamma: float = 0.99
    tau: float = 1e-3
    actor_lr: float = 1e-4
    critic_lr: float = 3e-4
    body: tuple[int, ...] = (128, 64)
    head: tuple[int, ...] = (64, 32)
    activation: str = "elu"
    layer_norm: bool = False
    final_scale: float = 1e-3
    warmup_episodes: int = 20
    warmup_order: str = "round_robin"  # or "random"
    debug_check: bool = False
    box: ActionBox = field(default_factory=ActionBox)

    def __post_init__(self):
        if self.n_heads < 1:
            raise ConfigurationError("DB-DDPG needs at least one head")
        if not 0 <= self.gamma < 1 or not 0 < self.tau <= 1:
            raise ConfigurationError("gamma must lie in [0, 1) and tau in (0, 1]")
        if self.warmup_order not in ("round_robin", "random"):
            raise ConfigurationError("warmup_order must be 'round_robin' or 'random'")


@dataclass
class DBDDPGAgent:
    config: DBDDPGConfig
    actor_spec: nn.NetworkSpec
    critic_spec: nn.NetworkSpec
    actor: nn.NetworkParams
    critic: nn.NetworkParams
    actor_target: nn.NetworkParams
    critic_target: nn.NetworkParams
    actor_opt: nn.OptimizerState
    critic_opt: nn.OptimizerState
    active_head: int = 0
    updates: int = 0

    @property
    def n_heads(self) -> int:
        return self.config.n_heads

    @property
    def obs_dim(self) -> int:
        return self.actor_spec.input_dim

    @property
    def act_dim(self) -> int:
        return self.actor_spec.output_dim

    def head_action(self, s, head: int) -> np.ndarray:
        return actor_action(self.actor_spec, self.actor, s, self.config.box, head)

    def act(self, s) -> np.ndarray:
        return ensemble_action(self, s)[0]

    def head_names(self, head: int) -> list[str]:
        """Shared-body parameters plus those of one head."""
        return [n for n in self.actor.names() if n.startswith("body.") or n.startswith(f"head{head}.")]


def create_dbddpg(obs_dim: int, act_dim: int, config: DBDDPGConfig, rng: np.random.Generator) -> DBDDPGAgent:
    K = config.n_heads
    a_spec = headed_spec(obs_dim, act_dim, config.body, config.head, K, config.activation, "tanh",
                         config.layer_norm)
    c_spec = headed_spec(obs_dim + act_dim, 1, config.body, config.head, K, config.activation, "linear",
                         config.layer_norm)
    actor = nn.init_params(a_spec, rng, final_scale=config.final_scale)
    critic = nn.init_params(c_spec, rng, final_scale=config.final_scale)
    return DBDDPGAgent(config, a_spec, c_spec, actor, critic, actor.copy(), critic.copy(),
                       nn.OptimizerState("adam", config.actor_lr), nn.OptimizerState("adam", config.critic_lr))


# ---------------------------------------------------------- ensemble action


def eq_matrix(agent: DBDDPGAgent, s) -> tuple[np.ndarray, np.ndarray]:
    """``(E, proposals)`` where ``E[i, j] = Q_i(s, a_j)`` and ``proposals[j] = mu_j(s)``."""
    s = np.asarray(s)
    if s.ndim != 1:
        raise ConfigurationError("eq_matrix takes a single state")
    box = agent.config.box
    proposals = box.from_unit(nn.forward_heads(agent.actor_spec, agent.actor, s[None, :])[:, 0])
    K = len(proposals)
    x = np.concatenate([np.tile(s, (K, 1)), proposals.astype(s.dtype)], axis=1)
    E = nn.forward_heads(agent.critic_spec, agent.critic, x)[:, :, 0]
    return E, proposals


def brute_force_eq_matrix(agent: DBDDPGAgent, s) -> np.ndarray:
    """Same matrix evaluated one head and one proposal at a time."""
    K = agent.n_heads
    E = np.empty((K, K))
    for j in range(K):
        a_j = agent.head_action(s, j)
        for i in range(K):
            E[i, j] = critic_value(agent.critic_spec, agent.critic, s, a_j, head=i)[0]
    return E


def select_column(E: np.ndarray) -> int:
    """Column with the largest sum over critic heads; lowest index on ties."""
    return int(np.argmax(E.sum(axis=0)))


def ensemble_action(agent: DBDDPGAgent, s) -> tuple[np.ndarray, int]:
    E, proposals = eq_matrix(agent, s)
    j = select_column(E)
    if agent.config.debug_check:
        brute = brute_force_eq_matrix(agent, s)
        sums = brute.sum(axis=0)
        if sums[j] < sums.max() - 1e-5 * max(1.0, abs(sums.max())):
            raise ContractError(f"ensemble column {j} does not attain the maximal Q sum")
    return proposals[j], j


# ------------------------------------------------------------------- update


def head_targets(agent: DBDDPGAgent, batch: Batch, head: int) -> np.ndarray:
    box = agent.config.box
    a_next = actor_action(agent.actor_spec, agent.actor_target, batch.s_next, box, head)
    q_next = critic_value(agent.critic_spec, agent.critic_target, batch.s_next, a_next, head)
    return bootstrap_targets(batch.r, batch.done, agent.config.gamma, q_next)


def dbddpg_update(agent: DBDDPGAgent, batch: Batch, head: int | None = None, importance_weights=None) -> dict:
    """Train one head pair (plus the shared bodies) on a minibatch.

    The critic loss is ``sum(m_k * (y - Q_k)^2) / N`` with ``m_k`` the stored
    bootstrap mask column of the head. A minibatch whose mask column is all
    zero leaves the critic untouched. Only the trained head's targets (and
    the shared bodies') are soft-updated.
    """
    k = agent.active_head if head is None else head
    if not 0 <= k < agent.n_heads:
        raise ConfigurationError(f"head {k} out of range for K={agent.n_heads}")
    cfg = agent.config
    mask = batch.mask[:, k]
    try:
        y = head_targets(agent, batch, k)
        if mask.any():
            critic, loss, td, q = critic_step(agent.critic_spec, agent.critic, agent.critic_opt, batch.s, batch.a,
                                              y, importance_weights, mask, head=k)
        else:
            critic, loss, td, q = agent.critic, 0.0, np.zeros(len(batch)), np.zeros(len(batch))
        actor, objective = actor_step(agent.actor_spec, agent.actor, agent.actor_opt, agent.critic_spec, critic,
                                      batch.s, cfg.box, head=k)
    except NumericError as exc:
        digest = batch_digest(batch)
        raise NumericError(f"{exc}; batch digest {digest}", layer=exc.layer, digest=digest) from exc
    names_a = agent.head_names(k)
    names_c = [n for n in critic.names() if n.startswith("body.") or n.startswith(f"head{k}.")]
    agent.actor, agent.critic = actor, critic
    agent.actor_target = nn.soft_update(agent.actor_target, actor, cfg.tau, names_a)
    agent.critic_target = nn.soft_update(agent.critic_target, critic, cfg.tau, names_c)
    agent.updates += 1
    return {"critic_loss": loss, "actor_objective": objective, "mean_q": float(np.mean(q)), "td_errors": td,
            "head": k}


def draw_active_head(agent: DBDDPGAgent, rng: np.random.Generator) -> int:
    """Uniform head for the coming episode."""
    agent.active_head = int(rng.integers(agent.n_heads))
    return agent.active_head


def warmup_head(agent: DBDDPGAgent, episode: int, rng: np.random.Generator) -> int:
    """Head that acts and trains alone during warm-up episode ``episode``."""
    if agent.config.warmup_order == "round_robin":
        return episode % agent.n_heads
    return int(rng.integers(agent.n_heads))


def warmup_episodes_total(agent: DBDDPGAgent) -> int:
    return agent.config.warmup_episodes * agent.n_heads


def dbddpg_run_episode(agent: DBDDPGAgent, env, noise, replay, rng: np.random.Generator, seed: int,
                       batch_size: int = 64, updates_per_step: int = 1, warmup_episode: int | None = None,
                       prioritized_beta: float | None = None) -> dict:
    """One training episode.

    Normal episodes draw the active head uniformly, act with the ensemble
    action plus noise and train only the active head after every step.
    During warm-up (``warmup_episode`` given) one head acts alone, as a plain
    actor-critic pair, and is the one trained. The episode's transitions
    enter replay at the end, where their bootstrap masks are drawn.
    """
    from .rollout import run_episode

    if warmup_episode is not None:
        k = agent.active_head = warmup_head(agent, warmup_episode, rng)
        policy = lambda obs: agent.head_action(obs, k)
    else:
        k = draw_active_head(agent, rng)
        policy = agent.act
    losses = []

    def learn(_t):
        if len(replay) < batch_size:
            return
        for _ in range(updates_per_step):
            if prioritized_beta is None:
                batch = replay.sample_uniform(batch_size, rng)
                m = dbddpg_update(agent, batch, k)
            else:
                batch, w, ids = replay.sample_prioritized(batch_size, rng, beta=prioritized_beta)
                m = dbddpg_update(agent, batch, k, w)
                replay.update_priorities(ids, m["td_errors"])
            losses.append(m["critic_loss"])

    ep = run_episode(env, policy, seed, noise=noise, rng=rng, on_step=learn)
    admitted = replay.push_episode(ep.transitions)
    return {"head": k, "return_raw": ep.raw_return, "return_shaped": ep.shaped_return, "distance": ep.distance,
            "fell": ep.fell, "steps": ep.steps, "substeps": ep.substeps, "admitted": admitted,
            "critic_loss": float(np.mean(losses)) if losses else float("nan")}
