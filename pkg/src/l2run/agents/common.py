"""Helpers shared by the actor-critic agents."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .. import nncore as nn
from ..errors import ConfigurationError
from ..transition import Batch


@dataclass(frozen=True)
class ActionBox:
    """Affine map from the actor's tanh range [-1, 1] onto ``[low, high]``."""

    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if not self.high > self.low:
            raise ConfigurationError("action box needs high > low")

    @property
    def half_width(self) -> float:
        return 0.5 * (self.high - self.low)

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        return self.low + self.half_width * (u + 1.0)

    def clip(self, a: np.ndarray) -> np.ndarray:
        return np.clip(a, self.low, self.high)


def actor_spec(obs_dim: int, act_dim: int, hidden=(64, 64), activation: str = "selu",
               layer_norm: bool = False) -> nn.NetworkSpec:
    return nn.mlp(obs_dim, tuple(hidden), act_dim, activation, "tanh", layer_norm)


def critic_spec(obs_dim: int, act_dim: int, hidden=(64, 64), activation: str = "selu",
                layer_norm: bool = False) -> nn.NetworkSpec:
    """The critic reads ``concat(s, a)``."""
    return nn.mlp(obs_dim + act_dim, tuple(hidden), 1, activation, "linear", layer_norm)


def headed_spec(input_dim: int, output_dim: int, body=(128, 64), head=(64, 32), n_heads: int = 1,
                activation: str = "selu", output_activation: str = "linear",
                layer_norm: bool = False) -> nn.NetworkSpec:
    """Shared body plus ``n_heads`` identical heads."""
    b = tuple(nn.dense(w, activation, layer_norm) for w in body)
    h = tuple(nn.dense(w, activation, layer_norm) for w in head) + (nn.dense(output_dim, output_activation),)
    return nn.NetworkSpec(input_dim, b, h, n_heads)


def actor_action(spec: nn.NetworkSpec, params: nn.NetworkParams, s, box: ActionBox, head: int = 0) -> np.ndarray:
    return box.from_unit(nn.forward(spec, params, s, head))


def critic_value(spec: nn.NetworkSpec, params: nn.NetworkParams, s, a, head: int = 0) -> np.ndarray:
    """``Q(s, a)`` as a flat array over the batch."""
    s, a = np.atleast_2d(s), np.atleast_2d(a)
    return nn.forward(spec, params, np.concatenate([s, a.astype(s.dtype)], axis=1), head)[:, 0]


def batch_digest(batch: Batch) -> str:
    h = hashlib.sha256()
    for arr in (batch.s, batch.a, batch.r, batch.s_next, batch.done, batch.mask):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]
