"""Deterministic actor-critic with target networks and repeated-minibatch ("trot") updates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import nncore as nn
from ..errors import ConfigurationError, NumericError
from ..transition import Batch
from .common import ActionBox, actor_action, actor_spec, batch_digest, critic_spec, critic_value


@dataclass(frozen=True)
class DDPGConfig:
    gamma: float = 0.99
    tau: float = 1e-3
    actor_lr: float | nn.LinearDecay = 1e-4
    critic_lr: float | nn.LinearDecay = 1e-3
    trot_repeats: int = 1
    trot_lr_scale: float | None = None  # default 0.1 when trot_repeats > 1
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "selu"
    critic_hidden: tuple[int, ...] | None = None  # defaults to ``hidden``
    critic_activation: str | None = None  # defaults to ``activation``
    layer_norm: bool = False
    final_scale: float = 1e-3
    box: ActionBox = field(default_factory=ActionBox)

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ConfigurationError("gamma must lie in [0, 1)")
        if not 0 < self.tau <= 1:
            raise ConfigurationError("tau must lie in (0, 1]")
        if self.trot_repeats < 1:
            raise ConfigurationError("trot_repeats must be a positive integer")

    @property
    def lr_scale(self) -> float:
        if self.trot_repeats == 1:
            return 1.0
        return 0.1 if self.trot_lr_scale is None else self.trot_lr_scale


@dataclass
class DDPGAgent:
    config: DDPGConfig
    actor_spec: nn.NetworkSpec
    critic_spec: nn.NetworkSpec
    actor: nn.NetworkParams
    critic: nn.NetworkParams
    actor_target: nn.NetworkParams
    critic_target: nn.NetworkParams
    actor_opt: nn.OptimizerState
    critic_opt: nn.OptimizerState
    updates: int = 0

    @property
    def obs_dim(self) -> int:
        return self.actor_spec.input_dim

    @property
    def act_dim(self) -> int:
        return self.actor_spec.output_dim

    def act(self, s, params: nn.NetworkParams | None = None) -> np.ndarray:
        """Deterministic action in the action box (``params`` overrides the online actor)."""
        return actor_action(self.actor_spec, self.actor if params is None else params, s, self.config.box)

    def q(self, s, a) -> np.ndarray:
        return critic_value(self.critic_spec, self.critic, s, a)


def create_ddpg(obs_dim: int, act_dim: int, config: DDPGConfig, rng: np.random.Generator) -> DDPGAgent:
    a_spec = actor_spec(obs_dim, act_dim, config.hidden, config.activation, config.layer_norm)
    c_spec = critic_spec(obs_dim, act_dim, config.critic_hidden or config.hidden,
                         config.critic_activation or config.activation, config.layer_norm)
    actor = nn.init_params(a_spec, rng, final_scale=config.final_scale)
    critic = nn.init_params(c_spec, rng, final_scale=config.final_scale)
    return DDPGAgent(config, a_spec, c_spec, actor, critic, actor.copy(), critic.copy(),
                     nn.OptimizerState("adam", config.actor_lr), nn.OptimizerState("adam", config.critic_lr))


# ------------------------------------------------------------ shared pieces


def bootstrap_targets(r, done, gamma: float, q_next) -> np.ndarray:
    """``r + gamma (1 - done) q_next``; exactly ``r`` on terminal rows or when gamma is 0."""
    r = np.asarray(r)
    return np.where(np.asarray(done) > 0, r, r + gamma * q_next)


def critic_step(spec: nn.NetworkSpec, params: nn.NetworkParams, opt: nn.OptimizerState, s, a, y,
                weights=None, mask=None, head: int = 0, lr_scale: float = 1.0):
    """One regression step of ``Q(s, a)`` toward ``y``.

    Loss is ``sum(w * m * (Q - y)^2) / N`` with ``w`` importance weights and
    ``m`` the bootstrap mask column (both default to ones). Returns
    ``(params', loss, td_errors, q)``.
    """
    x = np.concatenate([s, a.astype(s.dtype)], axis=1)
    q, tape = nn.forward_tape(spec, params, x, head)
    q = q[:, 0]
    err = q - y
    n = len(err)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    masked = err if mask is None else mask * err
    loss = float(np.sum(w * masked * err) / n)
    if not np.isfinite(loss):
        raise NumericError("non-finite critic loss")
    coef = w * 2.0 / n
    grads, _ = nn.backward(spec, params, x, (coef * masked)[:, None], head, tape)
    return nn.optimizer_step(params, grads, opt, lr_scale), loss, -err, q


def actor_step(a_spec: nn.NetworkSpec, actor: nn.NetworkParams, opt: nn.OptimizerState,
               c_spec: nn.NetworkSpec, critic: nn.NetworkParams, s, box: ActionBox,
               head: int = 0, lr_scale: float = 1.0):
    """Ascend ``mean Q(s, mu(s))`` by chaining the critic's input gradient into the actor."""
    u, a_tape = nn.forward_tape(a_spec, actor, s, head)
    a = box.from_unit(u)
    x = np.concatenate([s, a.astype(s.dtype)], axis=1)
    q, c_tape = nn.forward_tape(c_spec, critic, x, head)
    n = len(s)
    objective = float(np.mean(q))
    if not np.isfinite(objective):
        raise NumericError("non-finite actor objective")
    _, dx = nn.backward(c_spec, critic, x, np.full((n, 1), -1.0 / n), head, c_tape, param_grads=False)
    du = dx[:, s.shape[1]:] * box.half_width
    grads, _ = nn.backward(a_spec, actor, s, du, head, a_tape)
    return nn.optimizer_step(actor, grads, opt, lr_scale), objective


# ------------------------------------------------------------------- update


def ddpg_targets(agent: DDPGAgent, batch: Batch) -> np.ndarray:
    a_next = actor_action(agent.actor_spec, agent.actor_target, batch.s_next, agent.config.box)
    q_next = critic_value(agent.critic_spec, agent.critic_target, batch.s_next, a_next)
    return bootstrap_targets(batch.r, batch.done, agent.config.gamma, q_next)


def ddpg_update(agent: DDPGAgent, batch: Batch, importance_weights=None,
                target_fn: Callable[[DDPGAgent, Batch], np.ndarray] | None = None) -> dict:
    """Critic step, actor step and soft target update, repeated ``trot_repeats`` times on one batch.

    ``target_fn`` replaces the critic targets (the ensemble trainer uses it).
    On a numeric failure the agent is left as it was before the call and the
    raised :class:`NumericError` carries the batch digest.
    """
    if len(batch) == 0:
        raise ConfigurationError("empty batch")
    cfg = agent.config
    target_fn = target_fn or ddpg_targets
    scale = cfg.lr_scale
    actor, critic, actor_t, critic_t = agent.actor, agent.critic, agent.actor_target, agent.critic_target
    saved = (actor, critic, actor_t, critic_t, _opt_copy(agent.actor_opt), _opt_copy(agent.critic_opt))
    metrics = {}
    try:
        for rep in range(cfg.trot_repeats):
            y = target_fn(agent, batch)
            critic, loss, td, q = critic_step(agent.critic_spec, critic, agent.critic_opt, batch.s, batch.a,
                                              y, importance_weights, lr_scale=scale)
            actor, objective = actor_step(agent.actor_spec, actor, agent.actor_opt, agent.critic_spec, critic,
                                          batch.s, cfg.box, lr_scale=scale)
            actor_t = nn.soft_update(actor_t, actor, cfg.tau)
            critic_t = nn.soft_update(critic_t, critic, cfg.tau)
            agent.actor, agent.critic, agent.actor_target, agent.critic_target = actor, critic, actor_t, critic_t
            if rep == 0:
                metrics = {"critic_loss": loss, "actor_objective": objective, "mean_q": float(np.mean(q)),
                           "td_errors": td}
    except NumericError as exc:
        (agent.actor, agent.critic, agent.actor_target, agent.critic_target,
         agent.actor_opt, agent.critic_opt) = saved
        digest = batch_digest(batch)
        raise NumericError(f"{exc}; batch digest {digest}", layer=exc.layer, digest=digest) from exc
    agent.updates += 1
    return metrics


def _opt_copy(opt: nn.OptimizerState) -> nn.OptimizerState:
    return nn.OptimizerState(opt.kind, opt.lr, opt.beta1, opt.beta2, opt.eps, opt.step,
                             dict(opt.m), dict(opt.v), dict(opt.t))
