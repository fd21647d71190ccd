"""Actor-critic ensembles: pick the proposal that the averaged critics score highest."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .. import nncore as nn
from ..errors import ConfigurationError
from ..transition import Batch
from .common import ActionBox, actor_action
from .ddpg import DDPGAgent, bootstrap_targets, ddpg_update

_AXCY = re.compile(r"^A(\d+)C(\d+)$")


def parse_composition(text: str) -> tuple[int, int]:
    """``"A10C10"`` -> ``(10, 10)``: number of actors and critics to use."""
    m = _AXCY.match(text.strip())
    if not m:
        raise ConfigurationError(f"ensemble composition must look like A<m>C<n>, got {text!r}")
    n_actors, n_critics = int(m.group(1)), int(m.group(2))
    if n_actors < 1:
        raise ConfigurationError("an ensemble needs at least one actor")
    return n_actors, n_critics


def _proposal_scores(a_spec, actors, c_spec, critics, s, box):
    """Actions ``(M, B, act)`` and averaged critic scores ``(M, B)``."""
    s = np.atleast_2d(s)
    props = np.stack([actor_action(a_spec, p, s, box) for p in actors])
    m, b = props.shape[:2]
    x = np.concatenate([np.tile(s, (m, 1)), props.reshape(m * b, -1).astype(s.dtype)], axis=1)
    q = np.stack([nn.forward(c_spec, c, x)[:, 0] for c in critics])
    return props, q.mean(axis=0).reshape(m, b)


def ace_select_action(a_spec: nn.NetworkSpec, actors, c_spec: nn.NetworkSpec, critics, s,
                      box: ActionBox = ActionBox()) -> tuple[np.ndarray, int]:
    """Return ``(action, actor index)`` for one state.

    Every actor proposes an action, each proposal is scored by the mean of
    the critics and the best proposal wins; ties go to the lowest index. With
    no critics the first actor's action is returned.
    """
    if not actors:
        raise ConfigurationError("an ensemble needs at least one actor")
    if not critics:
        return actor_action(a_spec, actors[0], s, box), 0
    props, scores = _proposal_scores(a_spec, actors, c_spec, critics, s, box)
    j = int(np.argmax(scores[:, 0]))
    return props[j, 0], j


def ace_training_target(batch: Batch, a_spec: nn.NetworkSpec, target_actors, c_spec: nn.NetworkSpec,
                        target_critics, gamma: float, box: ActionBox = ActionBox()) -> np.ndarray:
    """``y = r + gamma (1 - done) Qbar'(s', mu'_i(s'))`` with ``i`` the best proposal at ``s'``.

    ``Qbar'`` is the mean of the target critics and the proposals come from
    the target actors. Identical to the single-pair target when there is one
    actor and one critic.
    """
    if not target_actors or not target_critics:
        raise ConfigurationError("training targets need at least one actor and one critic")
    _, scores = _proposal_scores(a_spec, target_actors, c_spec, target_critics, batch.s_next, box)
    best = np.argmax(scores, axis=0)
    q_next = scores[best, np.arange(scores.shape[1])]
    return bootstrap_targets(batch.r, batch.done, gamma, q_next)


@dataclass
class EnsembleAgent:
    """``M`` actors and ``N`` critics used together at inference time."""

    actor_spec: nn.NetworkSpec
    critic_spec: nn.NetworkSpec
    actors: list[nn.NetworkParams]
    critics: list[nn.NetworkParams]
    box: ActionBox = ActionBox()

    def __post_init__(self):
        if not self.actors:
            raise ConfigurationError("an ensemble needs at least one actor")

    @classmethod
    def from_agents(cls, agents: list[DDPGAgent]) -> "EnsembleAgent":
        if not agents:
            raise ConfigurationError("an ensemble needs at least one agent")
        a0 = agents[0]
        for ag in agents[1:]:
            if ag.actor_spec != a0.actor_spec or ag.critic_spec != a0.critic_spec:
                raise ConfigurationError("ensemble members must share network shapes")
        return cls(a0.actor_spec, a0.critic_spec, [a.actor for a in agents], [a.critic for a in agents],
                   a0.config.box)

    def compose(self, text: str) -> "EnsembleAgent":
        """Sub-ensemble of the first ``m`` actors and ``n`` critics (``"A10C1"``)."""
        m, n = parse_composition(text)
        if m > len(self.actors) or n > len(self.critics):
            raise ConfigurationError(f"{text} needs {m} actors and {n} critics; have "
                                     f"{len(self.actors)} and {len(self.critics)}")
        return EnsembleAgent(self.actor_spec, self.critic_spec, self.actors[:m], self.critics[:n], self.box)

    def act(self, s) -> np.ndarray:
        return ace_select_action(self.actor_spec, self.actors, self.critic_spec, self.critics, s, self.box)[0]


class ACETrainer:
    """Trains ``M`` actor-critic pairs on shared batches with ensemble bootstrap targets.

    Every pair's critic regresses to the same ensemble target and every
    actor ascends its own critic, on every update.
    """

    def __init__(self, agents: list[DDPGAgent]):
        if not agents:
            raise ConfigurationError("ACE training needs at least one pair")
        self.agents = agents

    def targets(self, batch: Batch) -> np.ndarray:
        a0 = self.agents[0]
        return ace_training_target(batch, a0.actor_spec, [a.actor_target for a in self.agents], a0.critic_spec,
                                   [a.critic_target for a in self.agents], a0.config.gamma, a0.config.box)

    def update(self, batch: Batch, importance_weights=None) -> list[dict]:
        y = self.targets(batch)
        return [ddpg_update(ag, batch, importance_weights, target_fn=lambda _a, _b: y) for ag in self.agents]

    def ensemble(self) -> EnsembleAgent:
        return EnsembleAgent.from_agents(self.agents)
