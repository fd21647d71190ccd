"""Mining the binary action patterns of a saturated actor and picking among them with a critic."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .. import nncore as nn
from ..errors import ConfigurationError
from .ddpg import bootstrap_targets
from .rollout import Policy, run_episode

SATURATION_BAND = 0.05


@dataclass
class PatternTable:
    """Unique binarized actions with occurrence counts, most frequent first."""

    patterns: list[tuple[int, ...]]
    counts: list[int]
    sources: tuple[str, ...] = ()
    saturation: float = float("nan")
    total: int = field(init=False)

    def __post_init__(self):
        if len(self.patterns) != len(self.counts):
            raise ConfigurationError("patterns and counts differ in length")
        if len(set(self.patterns)) != len(self.patterns):
            raise ConfigurationError("patterns must be unique")
        if any(c < 1 for c in self.counts):
            raise ConfigurationError("pattern counts must be positive")
        order = sorted(range(len(self.patterns)), key=lambda i: (-self.counts[i], self.patterns[i]))
        self.patterns = [self.patterns[i] for i in order]
        self.counts = [self.counts[i] for i in order]
        self.total = sum(self.counts)

    def __len__(self) -> int:
        return len(self.patterns)

    @classmethod
    def from_actions(cls, actions, threshold: float = 0.5, low: float = 0.0, high: float = 1.0,
                     sources: tuple[str, ...] = ()) -> "PatternTable":
        acts = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        unit = (acts - low) / (high - low)
        bits = (unit >= threshold).astype(int)
        counter = Counter(tuple(int(b) for b in row) for row in bits)
        near = np.minimum(np.abs(unit), np.abs(unit - 1.0)) <= SATURATION_BAND
        saturation = float(near.mean()) if acts.size else float("nan")
        return cls(list(counter), list(counter.values()), sources, saturation)

    def as_array(self, top_m: int | None = None) -> np.ndarray:
        rows = self.patterns if top_m is None else self.patterns[:top_m]
        return np.array(rows, dtype=np.float64)

    def rows(self) -> list[tuple[str, int, float, float]]:
        """``(bitstring, count, frequency %, cumulative %)`` per pattern."""
        out, cum = [], 0.0
        for p, c in zip(self.patterns, self.counts):
            freq = 100.0 * c / self.total
            cum += freq
            out.append(("".join(map(str, p)), c, freq, cum))
        return out


def mine_patterns(policy: Policy, env, seeds, threshold: float = 0.5,
                  sources: tuple[str, ...] = ()) -> PatternTable:
    """Roll out the deterministic policy on every seed and tabulate its binarized actions."""
    actions = []
    for seed in seeds:
        ep = run_episode(env, policy, int(seed), record=False, keep_actions=True)
        actions.extend(ep.actions)
    if not actions:
        raise ConfigurationError("no actions were produced")
    return PatternTable.from_actions(actions, threshold, env.action_low, env.action_high, sources)


def pattern_dqn_select(critic_spec: nn.NetworkSpec, critic: nn.NetworkParams, s, table: PatternTable,
                       top_m: int | None = None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    """The table pattern (mapped into the action box) with the highest ``Q(s, p)``.

    Only the ``top_m`` most frequent patterns are considered when given;
    ties go to the more frequent pattern.
    """
    if len(table) == 0:
        raise ConfigurationError("pattern table is empty")
    if top_m is not None and top_m < 1:
        raise ConfigurationError("top_m must be positive")
    cands = low + (high - low) * table.as_array(top_m)
    s = np.asarray(s)
    x = np.concatenate([np.tile(s, (len(cands), 1)), cands.astype(s.dtype)], axis=1)
    q = nn.forward(critic_spec, critic, x)[:, 0]
    return cands[int(np.argmax(q))]


def pattern_q_values(critic_spec: nn.NetworkSpec, critic: nn.NetworkParams, states, candidates) -> np.ndarray:
    """``Q(s_b, p_m)`` for every state and candidate action, shape ``(B, M)``."""
    s = np.atleast_2d(states)
    cands = np.asarray(candidates)
    b, m = len(s), len(cands)
    x = np.concatenate([np.repeat(s, m, axis=0), np.tile(cands, (b, 1)).astype(s.dtype)], axis=1)
    return nn.forward(critic_spec, critic, x)[:, 0].reshape(b, m)


def pattern_dqn_targets(critic_spec: nn.NetworkSpec, critic_target: nn.NetworkParams, batch, table: PatternTable,
                        gamma: float, top_m: int | None = None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    """Q-learning targets over the pattern set: ``r + gamma (1 - done) max_p Q'(s', p)``."""
    cands = low + (high - low) * table.as_array(top_m)
    q_next = pattern_q_values(critic_spec, critic_target, batch.s_next, cands).max(axis=1)
    return bootstrap_targets(batch.r, batch.done, gamma, q_next.astype(np.float32))
