from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Transition:
    """One replay unit: (s, a, r, s', done) plus the bootstrap mask."""

    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool
    mask: np.ndarray = field(default_factory=lambda: np.ones(1, np.float32))
    priority: float = 1.0
    layout: str = "raw"

    def equals(self, other: "Transition") -> bool:
        return (self.layout == other.layout and self.r == other.r and self.done == other.done
                and self.priority == other.priority
                and all(np.asarray(x).tobytes() == np.asarray(y).tobytes() for x, y in
                        ((self.s, other.s), (self.a, other.a), (self.s_next, other.s_next),
                         (self.mask, other.mask))))


@dataclass
class Batch:
    """Stacked transitions; row ``i`` of every array belongs to the same sample."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    mask: np.ndarray
    layout: str = "raw"

    def __len__(self) -> int:
        return len(self.r)

    def transition(self, i: int) -> Transition:
        return Transition(self.s[i], self.a[i], float(self.r[i]), self.s_next[i], bool(self.done[i]),
                          self.mask[i], 1.0, self.layout)

    @classmethod
    def from_transitions(cls, ts: list[Transition]) -> "Batch":
        return cls(np.stack([t.s for t in ts]).astype(np.float32),
                   np.stack([t.a for t in ts]).astype(np.float32),
                   np.array([t.r for t in ts], np.float32),
                   np.stack([t.s_next for t in ts]).astype(np.float32),
                   np.array([t.done for t in ts], np.float32),
                   np.stack([np.asarray(t.mask) for t in ts]).astype(np.float32),
                   ts[0].layout if ts else "raw")
