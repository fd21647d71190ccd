"""Samplers: roll out episodes with a per-episode weights snapshot and ship them whole."""

from __future__ import annotations

import logging
import os
import socket
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .. import nncore as nn
from ..agents.rollout import evaluate, run_episode
from ..errors import ConfigurationError, ProtocolError
from ..explore import ActionNoise, NoisePolicy, OUState, noise_schedule_step, select_noise_mode
from .learner import parse_addr
from .models import PolicySnapshot
from .protocol import (EpisodeRecord, Message, MsgType, StreamDecoder, encode_message, episode_message,
                       json_message, parse_json, parse_weights)

log = logging.getLogger(__name__)

ADDR_ENV = "L2R_LEARNER_ADDR"
PROBE_STATES = 64


def learner_address(configured: str | None) -> str:
    """The environment variable wins over the configured address."""
    addr = os.environ.get(ADDR_ENV) or configured
    if not addr:
        raise ConfigurationError(f"no learner address: set {ADDR_ENV} or the cluster address")
    return addr


@dataclass
class Backoff:
    """Exponential retry delays: base, 2 base, 4 base, ... capped."""

    base: float = 0.5
    cap: float = 30.0
    attempt: int = 0

    def next_delay(self) -> float:
        delay = min(self.cap, self.base * 2 ** self.attempt)
        self.attempt += 1
        return delay

    def reset(self) -> None:
        self.attempt = 0


class RemoteLearner:
    """Blocking TCP client; every call reconnects with backoff until it succeeds.

    ``give_up_after`` bounds the total time spent retrying one call (``None``
    retries forever). An episode whose send failed is sent again after the
    reconnect, so nothing produced by the sampler is lost.
    """

    def __init__(self, addr: str, backoff: Backoff | None = None, give_up_after: float | None = None,
                 sleep: Callable[[float], None] = time.sleep, hello_info: dict | None = None):
        self.host, self.port = parse_addr(addr)
        self.backoff = backoff or Backoff()
        self.give_up_after = give_up_after
        self.sleep = sleep
        self.hello_info = hello_info or {}
        self.meta: dict | None = None
        self.reconnects = 0
        self._sock: socket.socket | None = None
        self._decoder = StreamDecoder()

    def _connect(self) -> None:
        sock = socket.create_connection((self.host, self.port), timeout=30.0)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._decoder = StreamDecoder()
        self.meta = parse_json(self._request(json_message(MsgType.HELLO, self.hello_info)))

    def _request(self, msg: Message, expect_reply: bool = True) -> Message | None:
        self._sock.sendall(encode_message(msg))
        if not expect_reply:
            return None
        while True:
            reply = self._decoder.next()
            if reply is not None:
                return reply
            data = self._sock.recv(1 << 20)
            if not data:
                raise ConnectionError("learner closed the connection")
            self._decoder.feed(data)

    def _call(self, msg: Message, expect_reply: bool = True) -> Message | None:
        started = time.monotonic()
        while True:
            try:
                if self._sock is None:
                    self._connect()
                    if self.reconnects or self.backoff.attempt:
                        log.info("reconnected to %s:%d", self.host, self.port)
                reply = self._request(msg, expect_reply)
                self.backoff.reset()
                return reply
            except (OSError, ConnectionError, ProtocolError) as exc:
                self._close_socket()
                if self.give_up_after is not None and time.monotonic() - started > self.give_up_after:
                    raise ConnectionError(f"learner at {self.host}:{self.port} unreachable: {exc}") from exc
                delay = self.backoff.next_delay()
                self.reconnects += 1
                log.info("learner unreachable (%s); retrying in %.1fs", exc, delay)
                self.sleep(delay)

    def _close_socket(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        self._sock = None

    def hello(self, info: dict | None = None) -> dict:
        if info:
            self.hello_info = info
        self.meta = parse_json(self._call(json_message(MsgType.HELLO, self.hello_info)))
        return self.meta

    def get_weights(self) -> PolicySnapshot:
        reply = self._call(Message(MsgType.GET_WEIGHTS))
        version, blob = parse_weights(reply)
        return PolicySnapshot.from_arrays(self.meta, nn.load_arrays(blob), version)

    def send_episode(self, record: EpisodeRecord) -> None:
        self._call(episode_message(record), expect_reply=False)

    def send_eval(self, result: dict) -> None:
        self._call(json_message(MsgType.EVAL_RESULT, result), expect_reply=False)

    def shutdown(self) -> None:
        self._call(Message(MsgType.SHUTDOWN), expect_reply=False)

    def close(self) -> None:
        self._close_socket()


# -------------------------------------------------------------------- core


@dataclass
class SamplerSettings:
    noise: NoisePolicy = field(default_factory=NoisePolicy)
    ou: OUState | None = None  # template; x is reset to mu every episode, t carries over
    param_sigma: float = 0.05  # initial parameter-noise scale
    warm_start_probability: float = 0.0
    warm_start_range: tuple[int, int] = (20, 40)
    epsilon: float = 0.1  # random-pattern probability for pattern policies

    def __post_init__(self):
        lo, hi = self.warm_start_range
        if not 0 <= lo <= hi:
            raise ConfigurationError("warm_start_range needs 0 <= lo <= hi")
        if not 0.0 <= self.warm_start_probability <= 1.0 or not 0.0 <= self.epsilon <= 1.0:
            raise ConfigurationError("probabilities must lie in [0, 1]")


class SamplerCore:
    """Everything a sampler does between fetching weights and sending an episode.

    The random stream of an episode depends only on ``(master_seed, seed)``,
    so the same seed produces the same episode whichever sampler runs it and
    whatever the transport. State that persists across episodes (the OU
    sigma schedule position, the adaptive parameter-noise scale, probe
    states and the noise on/off schedule) belongs to this sampler.
    """

    def __init__(self, env, settings: SamplerSettings = SamplerSettings(), sampler_id: int = 0,
                 master_seed: int = 0):
        self.env = env
        self.settings = settings
        self.sampler_id = sampler_id
        self.master_seed = master_seed
        self.noise_policy = settings.noise
        self.ou_t = 0
        self.param_sigma = settings.param_sigma
        self.probes: deque[np.ndarray] = deque(maxlen=PROBE_STATES)
        self.uncertainty = 0.0

    def _ou_template(self) -> OUState:
        base = self.settings.ou or OUState.zeros(self.env.act_dim)
        return replace(base, x=np.full(self.env.act_dim, base.mu, dtype=np.float64), t=self.ou_t)

    def run(self, policy: PolicySnapshot, seed: int) -> EpisodeRecord:
        rng = np.random.default_rng([self.master_seed, seed])
        mode = select_noise_mode(self.noise_policy, rng) if self.noise_policy.enabled else "none"
        warm = 0
        if rng.random() < self.settings.warm_start_probability:
            lo, hi = self.settings.warm_start_range
            warm = int(rng.integers(lo, hi + 1))
        acting = policy
        noise = None
        extra: dict = {"warm_start": warm}
        if policy.kind == "pattern-dqn":
            mode = "epsilon" if self.noise_policy.enabled else "none"
            table = policy.box.low + (policy.box.high - policy.box.low) * policy.table.as_array(policy.top_m)
            eps = self.settings.epsilon

            def act(obs):
                if mode == "epsilon" and rng.random() < eps:
                    return table[int(rng.integers(len(table)))]
                return policy.act(obs)
        else:
            if mode == "parameter":
                acting = policy.perturbed(self.param_sigma, rng)
                extra["param_sigma"] = self.param_sigma
            elif mode != "none":
                action_noise = ActionNoise(mode, self.env.act_dim, self.noise_policy, self._ou_template())
                noise = action_noise
            act = acting.act
        ep = run_episode(self.env, act, seed, noise=noise, rng=rng, warm_start=warm)
        if noise is not None:
            self.ou_t = noise.ou.t
        if mode == "parameter" and self.probes:
            probes = np.stack(self.probes)
            target = self._ou_template().current_sigma()
            dist = policy.action_distance(acting, probes)
            self.param_sigma = nn.adapt_param_noise_sigma(self.param_sigma, dist, target)
            extra["param_distance"] = dist
        for t in ep.transitions:
            self.probes.append(np.asarray(t.s))
        self.noise_policy = noise_schedule_step(self.noise_policy, self.uncertainty)
        return EpisodeRecord(ep.transitions, self.env.obs_dim, self.env.act_dim, self.env.layout, policy.version,
                             seed, self.sampler_id, mode, ep.raw_return, ep.shaped_return, ep.distance, ep.fell,
                             ep.steps, ep.substeps, extra)


def sampler_seeds(sampler_id: int, n_samplers: int, first_seed: int = 0) -> Iterable[int]:
    """Sampler ``i`` of ``n`` runs seeds ``first + i, first + i + n, ...``."""
    s = first_seed + sampler_id
    while True:
        yield s
        s += n_samplers


def run_sampler(channel, core: SamplerCore, seeds: Iterable[int], max_episodes: int | None = None,
                should_stop: Callable[[], bool] = lambda: False) -> int:
    """Fetch weights at each episode boundary, roll out, ship; returns episodes sent."""
    sent = 0
    it = iter(seeds)
    while not ((max_episodes is not None and sent >= max_episodes) or should_stop()):
        seed = next(it, None)
        if seed is None:
            break
        policy = channel.get_weights()
        record = core.run(policy, int(seed))
        channel.send_episode(record)
        sent += 1
    return sent


def evaluate_policy(env, policy: PolicySnapshot, seeds) -> dict:
    """Noise-free summary: episodes, mean/max return, falls, mean distance."""
    results = evaluate(env, policy.act, seeds)
    returns = [r.raw_return for r in results]
    return {
        "version": policy.version,
        "episodes": len(results),
        "mean_return": float(np.mean(returns)) if returns else float("nan"),
        "max_return": float(np.max(returns)) if returns else float("nan"),
        "falls": int(sum(r.fell for r in results)),
        "mean_distance": float(np.mean([r.distance for r in results])) if results else float("nan"),
        "returns": returns,
    }
