"""Experience replay: ring storage, proportional prioritization, masks and admission."""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env.observation import get_layout
from .errors import ConfigurationError, ContractError
from .transition import Batch, Transition

PRIORITY_EPS = 1e-6


class SumTree:
    """Binary tree of non-negative leaves; every internal node is the sum of its children.

    Parents are recomputed as ``left + right`` instead of being patched with
    deltas, so the root never accumulates drift.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigurationError("sum-tree capacity must be positive")
        self.capacity = capacity
        size = 1
        while size < capacity:
            size *= 2
        self._leaves = size
        self._tree = np.zeros(2 * size, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self._tree[1])

    def get(self, idx) -> np.ndarray:
        return self._tree[self._leaves + np.asarray(idx)]

    def set(self, idx: int, value: float) -> None:
        if not value >= 0 or not np.isfinite(value):
            raise ContractError(f"sum-tree leaf must be finite and non-negative, got {value}")
        i = self._leaves + idx
        self._tree[i] = value
        i //= 2
        while i >= 1:
            self._tree[i] = self._tree[2 * i] + self._tree[2 * i + 1]
            i //= 2

    def set_many(self, idx: Sequence[int], values: Sequence[float]) -> None:
        for i, v in zip(idx, values):
            self.set(int(i), float(v))

    def find(self, mass: np.ndarray) -> np.ndarray:
        """Leaf index whose cumulative range contains each ``mass`` value (vectorized descent)."""
        mass = np.array(mass, dtype=np.float64)
        node = np.ones(mass.shape, dtype=np.int64)
        while True:
            inner = node < self._leaves
            if not inner.any():
                break
            left = 2 * node
            left_sum = self._tree[np.where(inner, left, 0)]
            go_right = inner & (mass >= left_sum) & (self._tree[np.where(inner, left + 1, 0)] > 0)
            mass = np.where(go_right, mass - left_sum, mass)
            node = np.where(inner, np.where(go_right, left + 1, left), node)
        return np.minimum(node - self._leaves, self.capacity - 1)


@dataclass(frozen=True)
class AdmissionFilter:
    """Which transitions of an episode enter replay.

    ``top_fraction`` admits an episode when its return is at least the
    ``1 - top_fraction`` quantile of the last ``window`` episode returns
    (the first episode is always admitted). ``min_step_reward`` admits single
    steps whose reward is at least the threshold. Both rules apply together
    when both are set; with neither set every transition is admitted.
    """

    top_fraction: float | None = None
    min_step_reward: float | None = None
    window: int = 100

    def __post_init__(self):
        if self.top_fraction is not None and not 0.0 < self.top_fraction <= 1.0:
            raise ConfigurationError("top_fraction must lie in (0, 1]")
        if self.window < 1:
            raise ConfigurationError("admission window must be positive")

    @classmethod
    def all(cls) -> "AdmissionFilter":
        return cls()


@dataclass
class ReplayStats:
    pushed: int = 0
    admitted: int = 0
    episodes: int = 0
    stale_priority_updates: int = 0


class ReplayBuffer:
    """Fixed-capacity FIFO store of transitions with optional priorities.

    Transitions are addressed by their insertion id (0, 1, 2, ...); the ring
    slot is ``id % capacity``. Ids returned by sampling stay valid until the
    entry is overwritten, after which priority updates for them are skipped.

    Bootstrap masks are drawn from ``mask_rng`` when an episode is pushed and
    never change afterwards. With one head the mask is always ``[1]``.
    """

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, *, n_heads: int = 1,
                 p_mask: float = 0.5, layout: str = "raw", prioritized: bool = False,
                 alpha: float = 0.6, admission: AdmissionFilter | None = None,
                 mask_rng: np.random.Generator | None = None):
        if capacity < 1:
            raise ConfigurationError("replay capacity must be positive")
        if n_heads < 1 or not 0.0 <= p_mask <= 1.0:
            raise ConfigurationError("n_heads must be >= 1 and p_mask in [0, 1]")
        if alpha < 0:
            raise ConfigurationError("alpha must be non-negative")
        lay = get_layout(layout)
        if lay.dim != obs_dim:
            raise ConfigurationError(f"layout {layout!r} has {lay.dim} channels, buffer expects {obs_dim}")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.n_heads = n_heads
        self.p_mask = p_mask
        self.layout = layout
        self.prioritized = prioritized
        self.alpha = alpha
        self.admission = admission or AdmissionFilter()
        self.mask_rng = mask_rng if mask_rng is not None else np.random.default_rng(0)
        self.stats = ReplayStats()

        self.s = np.zeros((capacity, obs_dim), np.float32)
        self.a = np.zeros((capacity, act_dim), np.float32)
        self.r = np.zeros(capacity, np.float32)
        self.s_next = np.zeros((capacity, obs_dim), np.float32)
        self.done = np.zeros(capacity, np.float32)
        self.mask = np.ones((capacity, n_heads), np.float32)
        self.priority = np.zeros(capacity, np.float64)
        self.inserted = 0
        self.max_priority = 1.0
        self.tree = SumTree(capacity) if prioritized else None
        self._returns: deque[float] = deque(maxlen=self.admission.window)
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    # ------------------------------------------------------------------ writes

    def draw_masks(self, n: int) -> np.ndarray:
        if self.n_heads == 1:
            return np.ones((n, 1), np.float32)
        return (self.mask_rng.random((n, self.n_heads)) < self.p_mask).astype(np.float32)

    def _episode_admitted(self, ret: float) -> bool:
        frac = self.admission.top_fraction
        if frac is None or not self._returns:
            return True
        return ret >= float(np.quantile(np.fromiter(self._returns, float), 1.0 - frac))

    def push_episode(self, episode: Sequence[Transition]) -> int:
        """Store the admitted transitions of one episode; returns how many were stored."""
        if not episode:
            return 0
        for t in episode:
            if t.layout != self.layout:
                raise ConfigurationError(f"transition layout {t.layout!r} does not match buffer {self.layout!r}")
        masks = self.draw_masks(len(episode))
        ret = float(sum(t.r for t in episode))
        keep_episode = self._episode_admitted(ret)
        self._returns.append(ret)
        thresh = self.admission.min_step_reward
        rows = [i for i, t in enumerate(episode)
                if keep_episode and (thresh is None or t.r >= thresh)]
        with self._lock:
            for i in rows:
                t = episode[i]
                slot = self.inserted % self.capacity
                self.s[slot] = t.s
                self.a[slot] = t.a
                self.r[slot] = t.r
                self.s_next[slot] = t.s_next
                self.done[slot] = float(t.done)
                self.mask[slot] = masks[i]
                self.priority[slot] = self.max_priority
                if self.tree is not None:
                    self.tree.set(slot, self.max_priority ** self.alpha)
                self.inserted += 1
            self.stats.pushed += len(episode)
            self.stats.admitted += len(rows)
            self.stats.episodes += 1
        return len(rows)

    def update_priorities(self, ids, td_errors) -> None:
        """Set ``priority = |td| + 1e-6`` for live ids; evicted ids are skipped and counted."""
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        td = np.abs(np.asarray(td_errors, dtype=np.float64).reshape(-1))
        if ids.shape != td.shape:
            raise ContractError("ids and td_errors must have the same length")
        with self._lock:
            oldest = self.inserted - len(self)
            for i, d in zip(ids, td):
                if i < oldest or i >= self.inserted:
                    self.stats.stale_priority_updates += 1
                    continue
                p = float(d) + PRIORITY_EPS
                slot = int(i) % self.capacity
                self.priority[slot] = p
                self.max_priority = max(self.max_priority, p)
                if self.tree is not None:
                    self.tree.set(slot, p ** self.alpha)

    # ------------------------------------------------------------------- reads

    def _slot_ids(self, slots: np.ndarray) -> np.ndarray:
        """Insertion ids of ring slots."""
        base = self.inserted - self.inserted % self.capacity
        ids = base + slots
        return np.where(ids >= self.inserted, ids - self.capacity, ids)

    def _gather(self, slots: np.ndarray, reflect: bool) -> Batch:
        batch = Batch(self.s[slots], self.a[slots], self.r[slots], self.s_next[slots],
                      self.done[slots], self.mask[slots], self.layout)
        if not reflect:
            return batch
        lay = get_layout(self.layout)
        n = len(slots)

        def interleave(x, perm=None):
            out = np.empty((2 * n,) + x.shape[1:], x.dtype)
            out[0::2] = x
            out[1::2] = x if perm is None else x[:, perm]
            return out

        return Batch(interleave(batch.s, lay.obs_perm), interleave(batch.a, lay.act_perm),
                     interleave(batch.r), interleave(batch.s_next, lay.obs_perm),
                     interleave(batch.done), interleave(batch.mask), self.layout)

    def sample_uniform(self, n: int, rng: np.random.Generator, reflect_augment: bool = False) -> Batch:
        """``n`` draws with replacement; with augmentation every draw is followed by its mirror image."""
        with self._lock:
            if len(self) == 0:
                raise ContractError("cannot sample from an empty replay buffer")
            slots = rng.integers(0, len(self), size=n)
            return self._gather(slots, reflect_augment)

    def sample_prioritized(self, n: int, rng: np.random.Generator, alpha: float | None = None,
                           beta: float = 0.4, reflect_augment: bool = False
                           ) -> tuple[Batch, np.ndarray, np.ndarray]:
        """Stratified proportional sampling: ``P(i) = p_i^alpha / sum_j p_j^alpha``.

        Importance weights ``(N P(i))^-beta`` are divided by their maximum
        over the batch. Returns ``(batch, weights, ids)``; with augmentation
        weights and ids are repeated for each mirrored row.
        """
        if not 0.0 <= beta <= 1.0:
            raise ConfigurationError("beta must lie in [0, 1]")
        with self._lock:
            if len(self) == 0:
                raise ContractError("cannot sample from an empty replay buffer")
            if self.tree is None:
                raise ContractError("buffer was built without prioritization")
            if alpha is not None and alpha != self.alpha:
                self._rebuild(alpha)
            total = self.tree.total
            seg = total / n
            mass = (np.arange(n) + rng.random(n)) * seg
            slots = np.minimum(self.tree.find(np.minimum(mass, np.nextafter(total, 0))), len(self) - 1)
            probs = self.tree.get(slots) / total
            weights = (len(self) * probs) ** (-beta)
            weights = weights / weights.max()
            ids = self._slot_ids(slots)
            batch = self._gather(slots, reflect_augment)
        if reflect_augment:
            weights, ids = np.repeat(weights, 2), np.repeat(ids, 2)
        return batch, weights, ids

    def _rebuild(self, alpha: float) -> None:
        if alpha < 0:
            raise ConfigurationError("alpha must be non-negative")
        self.alpha = alpha
        self.tree = SumTree(self.capacity)
        for slot in range(len(self)):
            self.tree.set(slot, self.priority[slot] ** alpha)

    def contains(self, transition_id: int) -> bool:
        return self.inserted - len(self) <= transition_id < self.inserted

    def get(self, transition_id: int) -> Transition:
        if not self.contains(transition_id):
            raise ContractError(f"transition {transition_id} is not stored")
        slot = transition_id % self.capacity
        return Transition(self.s[slot].copy(), self.a[slot].copy(), float(self.r[slot]),
                          self.s_next[slot].copy(), bool(self.done[slot]), self.mask[slot].copy(),
                          float(self.priority[slot]), self.layout)

    def priority_sum(self) -> float:
        """Sum of the stored (alpha-scaled) priorities recomputed from scratch."""
        return float(np.sum(self.priority[:len(self)] ** self.alpha))
