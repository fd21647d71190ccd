"""Convex blending of two policies and the linear hand-over schedule."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from .rollout import Policy


def blend_policies(a_pi, a_eta, alpha: float, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    """``alpha * a_pi + (1 - alpha) * a_eta`` clamped to ``[low, high]``."""
    a_pi = np.asarray(a_pi, dtype=np.float64)
    a_eta = np.asarray(a_eta, dtype=np.float64)
    if a_pi.shape != a_eta.shape:
        raise ConfigurationError(f"action shapes differ: {a_pi.shape} vs {a_eta.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError("alpha must lie in [0, 1]")
    if alpha == 1.0:
        mixed = a_pi
    elif alpha == 0.0:
        mixed = a_eta
    else:
        mixed = alpha * a_pi + (1.0 - alpha) * a_eta
    return np.clip(mixed, low, high)


def transition_schedule(k: int, n: int) -> float:
    """Weight of the outgoing policy at step ``k`` of an ``n``-step hand-over: ``1 - k/n``."""
    if n <= 0:
        raise ConfigurationError("hand-over length must be positive")
    if not 0 <= k <= n:
        raise ConfigurationError(f"step {k} outside [0, {n}]")
    return 1.0 - k / n


def blended_policy(pi: Policy, eta: Policy, alpha: float, low: float = 0.0, high: float = 1.0) -> Policy:
    return lambda obs: blend_policies(pi(obs), eta(obs), alpha, low, high)


class SwitchingPolicy:
    """Hands control from ``outgoing`` to ``incoming`` over ``n`` steps starting at ``start``.

    Before ``start`` only ``outgoing`` acts; after ``start + n`` only
    ``incoming``. Call :meth:`reset` between episodes.
    """

    def __init__(self, outgoing: Policy, incoming: Policy, n: int = 150, start: int = 0,
                 low: float = 0.0, high: float = 1.0):
        if n <= 0 or start < 0:
            raise ConfigurationError("switching needs n > 0 and start >= 0")
        self.outgoing, self.incoming, self.n, self.start = outgoing, incoming, n, start
        self.low, self.high = low, high
        self.t = 0

    def reset(self) -> None:
        self.t = 0

    def __call__(self, obs) -> np.ndarray:
        k = min(max(self.t - self.start, 0), self.n)
        self.t += 1
        return blend_policies(self.outgoing(obs), self.incoming(obs), transition_schedule(k, self.n),
                              self.low, self.high)
