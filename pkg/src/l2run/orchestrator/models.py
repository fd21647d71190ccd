"""Learner-side models and the read-only policies samplers and evaluators act with.

A learner model trains on replay batches and publishes its networks as named
arrays (``actor0/<param>``, ``critic0/<param>``, ...). The matching
:class:`PolicySnapshot` is rebuilt from those arrays plus a JSON description
of the network shapes, so samplers never need the training configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import nncore as nn
from ..agents.ace import ACETrainer, ace_select_action
from ..agents.common import ActionBox, actor_action
from ..agents.dbddpg import DBDDPGAgent, DBDDPGConfig, ensemble_action
from ..agents.ddpg import DDPGAgent, _opt_copy, critic_step, ddpg_update
from ..agents.patterns import PatternTable, pattern_dqn_select, pattern_dqn_targets
from ..errors import CheckpointError, ConfigurationError, NumericError
from ..transition import Batch

POLICY_KINDS = ("ddpg", "ace", "pattern-dqn", "dbddpg", "ppo")


def _prefixed(prefix: str, params: nn.NetworkParams) -> dict[str, np.ndarray]:
    return nn.params_to_arrays(params, prefix)


def _take(arrays, prefix: str, version: int = 0) -> nn.NetworkParams:
    params = nn.params_from_arrays(arrays, prefix, version)
    if not params.arrays:
        raise CheckpointError(f"checkpoint has no arrays under {prefix!r}")
    return params


@dataclass
class PolicySnapshot:
    """Frozen networks of one published version plus how to turn them into actions.

    ``kind`` selects the action rule: a single actor (``ddpg``), the critic-scored
    choice among actor proposals (``ace``), the critic-scored choice among
    mined patterns (``pattern-dqn``), the K-head column-sum rule (``dbddpg``)
    or the Gaussian mean (``ppo``).
    """

    kind: str
    actor_spec: nn.NetworkSpec | None
    critic_spec: nn.NetworkSpec | None
    actors: list[nn.NetworkParams]
    critics: list[nn.NetworkParams]
    box: ActionBox = field(default_factory=ActionBox)
    table: PatternTable | None = None
    top_m: int | None = None
    version: int = 0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigurationError(f"unknown policy kind {self.kind!r}")
        if self.kind == "pattern-dqn" and (self.table is None or not self.critics):
            raise ConfigurationError("a pattern policy needs a pattern table and a critic")
        if self.kind != "pattern-dqn" and not self.actors:
            raise ConfigurationError(f"a {self.kind} policy needs at least one actor")

    @property
    def act_dim(self) -> int:
        if self.actor_spec is not None:
            return self.actor_spec.output_dim
        return len(self.table.patterns[0])

    @property
    def obs_dim(self) -> int:
        if self.actor_spec is not None:
            return self.actor_spec.input_dim
        return self.critic_spec.input_dim - self.act_dim

    def act(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float32)
        if self.kind == "ace":
            return ace_select_action(self.actor_spec, self.actors, self.critic_spec, self.critics, obs, self.box)[0]
        if self.kind == "pattern-dqn":
            return pattern_dqn_select(self.critic_spec, self.critics[0], obs, self.table, self.top_m,
                                      self.box.low, self.box.high)
        if self.kind == "dbddpg":
            return ensemble_action(self._dbddpg_agent(), obs)[0]
        return actor_action(self.actor_spec, self.actors[0], obs[None, :], self.box)[0]

    def _dbddpg_agent(self) -> DBDDPGAgent:
        k = self.actor_spec.n_heads
        opt = nn.OptimizerState()
        return DBDDPGAgent(DBDDPGConfig(n_heads=k, box=self.box), self.actor_spec, self.critic_spec,
                           self.actors[0], self.critics[0], self.actors[0], self.critics[0], opt, opt)

    def perturbed(self, sigma: float, rng: np.random.Generator) -> "PolicySnapshot":
        """Copy whose actors carry N(0, sigma^2) parameter noise (critics untouched)."""
        return PolicySnapshot(self.kind, self.actor_spec, self.critic_spec,
                              [nn.perturb_parameters(a, sigma, rng) for a in self.actors], self.critics,
                              self.box, self.table, self.top_m, self.version)

    def action_distance(self, other: "PolicySnapshot", states) -> float:
        """Mean over states of the RMS action difference of the first actors, in action units."""
        s = np.atleast_2d(np.asarray(states, dtype=np.float32))
        a = actor_action(self.actor_spec, self.actors[0], s, self.box)
        b = actor_action(other.actor_spec, other.actors[0], s, other.box)
        return float(np.mean(np.sqrt(np.mean((a - b) ** 2, axis=1))))

    def compose(self, n_actors: int, n_critics: int) -> "PolicySnapshot":
        """Sub-ensemble of the first ``n_actors`` actors and ``n_critics`` critics."""
        if self.kind not in ("ddpg", "ace"):
            raise ConfigurationError(f"ensemble composition does not apply to {self.kind} checkpoints")
        if n_actors > len(self.actors) or n_critics > len(self.critics):
            raise ConfigurationError(f"A{n_actors}C{n_critics} needs {n_actors} actors and {n_critics} critics; "
                                     f"checkpoint has {len(self.actors)} and {len(self.critics)}")
        return PolicySnapshot("ace", self.actor_spec, self.critic_spec, self.actors[:n_actors],
                              self.critics[:n_critics], self.box, None, None, self.version)

    # ------------------------------------------------------------ (de)serialize

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "actor_spec": None if self.actor_spec is None else self.actor_spec.to_dict(),
            "critic_spec": None if self.critic_spec is None else self.critic_spec.to_dict(),
            "n_actors": len(self.actors),
            "n_critics": len(self.critics),
            "box": [self.box.low, self.box.high],
            "patterns": None if self.table is None else {"patterns": [list(p) for p in self.table.patterns],
                                                         "counts": self.table.counts},
            "top_m": self.top_m,
        }

    def arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, a in enumerate(self.actors):
            out.update(_prefixed(f"actor{i}/", a))
        for i, c in enumerate(self.critics):
            out.update(_prefixed(f"critic{i}/", c))
        return out

    @classmethod
    def from_arrays(cls, meta: dict, arrays, version: int = 0) -> "PolicySnapshot":
        try:
            a_spec = None if meta["actor_spec"] is None else nn.NetworkSpec.from_dict(meta["actor_spec"])
            c_spec = None if meta["critic_spec"] is None else nn.NetworkSpec.from_dict(meta["critic_spec"])
            actors = [_take(arrays, f"actor{i}/", version) for i in range(meta["n_actors"])]
            critics = [_take(arrays, f"critic{i}/", version) for i in range(meta["n_critics"])]
            table = None
            if meta.get("patterns"):
                table = PatternTable([tuple(p) for p in meta["patterns"]["patterns"]], meta["patterns"]["counts"])
            low, high = meta.get("box", (0.0, 1.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"checkpoint description is invalid: {exc}") from None
        for spec, nets in ((a_spec, actors), (c_spec, critics)):
            for p in nets:
                shapes = nn.param_shapes(spec)
                for name, shape in shapes.items():
                    if name not in p.arrays or tuple(p.arrays[name].shape) != tuple(shape):
                        raise CheckpointError(f"array {name!r} is missing or has the wrong shape")
        return cls(meta["kind"], a_spec, c_spec, actors, critics, ActionBox(low, high), table,
                   meta.get("top_m"), version)


# ------------------------------------------------------------------- learners


class DDPGModel:
    """One actor-critic pair."""

    kind = "ddpg"

    def __init__(self, agent: DDPGAgent):
        self.agent = agent

    @property
    def agents(self) -> list:
        return [self.agent]

    @property
    def updates(self) -> int:
        return self.agent.updates

    def update(self, batch: Batch, weights=None) -> dict:
        return ddpg_update(self.agent, batch, weights)

    def snapshot(self, version: int = 0) -> PolicySnapshot:
        a = self.agent
        return PolicySnapshot("ddpg", a.actor_spec, a.critic_spec, [a.actor], [a.critic], a.config.box,
                              version=version)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Everything needed to resume training: online and target networks."""
        out = {}
        for i, a in enumerate(self.agents):
            out.update(_prefixed(f"actor{i}/", a.actor))
            out.update(_prefixed(f"critic{i}/", a.critic))
            out.update(_prefixed(f"actor_target{i}/", a.actor_target))
            out.update(_prefixed(f"critic_target{i}/", a.critic_target))
        return out

    def load_state(self, arrays) -> None:
        for i, a in enumerate(self.agents):
            a.actor = _take(arrays, f"actor{i}/")
            a.critic = _take(arrays, f"critic{i}/")
            tgt_a = nn.params_from_arrays(arrays, f"actor_target{i}/")
            tgt_c = nn.params_from_arrays(arrays, f"critic_target{i}/")
            a.actor_target = tgt_a if tgt_a.arrays else a.actor.copy()
            a.critic_target = tgt_c if tgt_c.arrays else a.critic.copy()


class ACEModel(DDPGModel):
    """``M`` pairs trained on shared batches toward ensemble bootstrap targets."""

    kind = "ace"

    def __init__(self, agents: list[DDPGAgent]):
        self.trainer = ACETrainer(agents)
        self.agent = agents[0]
        self._updates = 0

    @property
    def agents(self) -> list:
        return self.trainer.agents

    @property
    def updates(self) -> int:
        return self._updates

    def update(self, batch: Batch, weights=None) -> dict:
        saved = [(a.actor, a.critic, a.actor_target, a.critic_target, _opt_copy(a.actor_opt),
                  _opt_copy(a.critic_opt), a.updates) for a in self.agents]
        try:
            metrics = self.trainer.update(batch, weights)
        except NumericError:
            for a, s in zip(self.agents, saved):
                (a.actor, a.critic, a.actor_target, a.critic_target, a.actor_opt, a.critic_opt, a.updates) = s
            raise
        self._updates += 1
        td = np.mean([m["td_errors"] for m in metrics], axis=0)
        return {"critic_loss": float(np.mean([m["critic_loss"] for m in metrics])),
                "actor_objective": float(np.mean([m["actor_objective"] for m in metrics])),
                "mean_q": float(np.mean([m["mean_q"] for m in metrics])), "td_errors": td}

    def snapshot(self, version: int = 0) -> PolicySnapshot:
        a0 = self.agent
        return PolicySnapshot("ace", a0.actor_spec, a0.critic_spec, [a.actor for a in self.agents],
                              [a.critic for a in self.agents], a0.config.box, version=version)


class PatternDQNModel(DDPGModel):
    """Critic-only Q-learning over a fixed set of mined action patterns."""

    kind = "pattern-dqn"

    def __init__(self, agent: DDPGAgent, table: PatternTable, top_m: int | None = None):
        super().__init__(agent)
        if len(table) == 0:
            raise ConfigurationError("pattern table is empty")
        self.table = table
        self.top_m = top_m

    def update(self, batch: Batch, weights=None) -> dict:
        a = self.agent
        box = a.config.box
        y = pattern_dqn_targets(a.critic_spec, a.critic_target, batch, self.table, a.config.gamma, self.top_m,
                                box.low, box.high)
        critic, loss, td, q = critic_step(a.critic_spec, a.critic, a.critic_opt, batch.s, batch.a, y, weights)
        a.critic = critic
        a.critic_target = nn.soft_update(a.critic_target, critic, a.config.tau)
        a.updates += 1
        return {"critic_loss": loss, "actor_objective": float("nan"), "mean_q": float(np.mean(q)), "td_errors": td}

    def snapshot(self, version: int = 0) -> PolicySnapshot:
        a = self.agent
        return PolicySnapshot("pattern-dqn", None, a.critic_spec, [], [a.critic], a.config.box, self.table,
                              self.top_m, version)
