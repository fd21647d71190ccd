"""Learner: owns replay and the update loop; serves weights and ingests whole episodes."""

from __future__ import annotations

import logging
import queue
import selectors
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .. import nncore as nn
from ..errors import ConfigurationError, ProtocolError
from ..replay import ReplayBuffer
from .models import PolicySnapshot
from .protocol import (EpisodeRecord, Message, MsgType, StreamDecoder, decode_message, encode_message,
                       episode_message, json_message, parse_episode, parse_json, parse_weights, weights_message)

log = logging.getLogger(__name__)


@dataclass
class LearnerSettings:
    batch_size: int = 64
    updates_per_step: float = 1.0  # updates per environment step of an ingested episode
    reflect_augment: bool = False
    prioritized_beta: float = 0.4
    learning_starts: int = 0  # replay size below which no updates run

    def __post_init__(self):
        if self.batch_size < 1 or self.updates_per_step < 0 or self.learning_starts < 0:
            raise ConfigurationError("batch_size must be positive, pacing and learning_starts non-negative")


@dataclass
class LearnerStats:
    episodes: int = 0
    env_steps: int = 0
    admitted: int = 0
    updates: int = 0
    max_version_skew: int = 0
    eval_results: list = field(default_factory=list)


class Learner:
    """Sequential core: ``ingest`` pushes an episode then runs its update steps.

    The published weights version is the number of update steps taken, so
    two weight requests with no update in between see the same version.
    Episodes from any weights version are accepted; the skew is only logged.
    """

    def __init__(self, model, replay: ReplayBuffer, settings: LearnerSettings = LearnerSettings(),
                 rng: np.random.Generator | None = None):
        self.model = model
        self.replay = replay
        self.settings = settings
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.stats = LearnerStats()
        self.version = 0
        self.last_metrics: dict = {}
        self._published: tuple[int, bytes] | None = None
        self._lock = threading.Lock()

    # ------------------------------------------------------------- weights

    def snapshot(self) -> PolicySnapshot:
        return self.model.snapshot(self.version)

    def meta(self) -> dict:
        return self.snapshot().meta()

    def weights(self) -> tuple[int, bytes]:
        """``(version, checkpoint bytes)`` of the latest published networks."""
        pub = self._published
        if pub is None or pub[0] != self.version:
            pub = (self.version, nn.save_arrays(self.snapshot().arrays()))
            self._published = pub
        return pub

    # -------------------------------------------------------------- ingest

    def n_updates_for(self, steps: int) -> int:
        return int(round(self.settings.updates_per_step * steps))

    def ingest(self, record: EpisodeRecord) -> dict:
        with self._lock:
            skew = self.version - record.weights_version
            if skew > self.stats.max_version_skew:
                self.stats.max_version_skew = skew
            if skew:
                log.debug("episode from version %d while at %d", record.weights_version, self.version)
            admitted = self.replay.push_episode(record.transitions)
            self.stats.episodes += 1
            self.stats.env_steps += record.steps
            self.stats.admitted += admitted
            done = 0
            if len(self.replay) > 0 and len(self.replay) >= self.settings.learning_starts:
                for _ in range(self.n_updates_for(len(record.transitions))):
                    self.update_once()
                    done += 1
            return {"admitted": admitted, "updates": done, "version": self.version}

    def update_once(self) -> dict:
        s = self.settings
        if self.replay.prioritized:
            batch, weights, ids = self.replay.sample_prioritized(s.batch_size, self.rng, beta=s.prioritized_beta,
                                                                 reflect_augment=s.reflect_augment)
            metrics = self.model.update(batch, weights)
            self.replay.update_priorities(ids, metrics["td_errors"])
        else:
            batch = self.replay.sample_uniform(s.batch_size, self.rng, reflect_augment=s.reflect_augment)
            metrics = self.model.update(batch)
        self.version += 1
        self.stats.updates += 1
        self.last_metrics = metrics
        return metrics

    def record_eval(self, result: dict) -> None:
        self.stats.eval_results.append(result)


# ---------------------------------------------------------------- in-memory


class InMemoryChannel:
    """Sampler-side client that talks to a learner in the same process.

    Every request and reply is encoded to bytes and decoded again, so this
    path exercises exactly the frames a socket would carry.
    """

    def __init__(self, learner: Learner):
        self.learner = learner
        self.meta: dict | None = None

    def _roundtrip(self, msg: Message) -> Message | None:
        request = decode_message(encode_message(msg))
        reply = handle_request(self.learner, request)
        return None if reply is None else decode_message(encode_message(reply))

    def hello(self, info: dict | None = None) -> dict:
        self.meta = parse_json(self._roundtrip(json_message(MsgType.HELLO, info or {})))
        return self.meta

    def get_weights(self) -> PolicySnapshot:
        if self.meta is None:
            self.hello()
        version, blob = parse_weights(self._roundtrip(Message(MsgType.GET_WEIGHTS)))
        return PolicySnapshot.from_arrays(self.meta, nn.load_arrays(blob), version)

    def send_episode(self, record: EpisodeRecord) -> None:
        self._roundtrip(episode_message(record))

    def send_eval(self, result: dict) -> None:
        self._roundtrip(json_message(MsgType.EVAL_RESULT, result))

    def close(self) -> None:
        pass


def handle_request(learner: Learner, msg: Message) -> Message | None:
    """Synchronous dispatch used by the in-memory channel."""
    if msg.type == MsgType.HELLO:
        return json_message(MsgType.HELLO, learner.meta())
    if msg.type == MsgType.GET_WEIGHTS:
        return weights_message(*learner.weights())
    if msg.type == MsgType.EPISODE:
        learner.ingest(parse_episode(msg))
        return None
    if msg.type == MsgType.EVAL_RESULT:
        learner.record_eval(parse_json(msg))
        return None
    if msg.type == MsgType.SHUTDOWN:
        return None
    raise ProtocolError(f"unexpected {msg.type.name} from a client", tag=int(msg.type))


# -------------------------------------------------------------------- TCP


def parse_addr(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigurationError(f"address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


@dataclass
class _Conn:
    sock: socket.socket
    decoder: StreamDecoder = field(default_factory=StreamDecoder)
    pending: list = field(default_factory=list)
    closed: bool = False


@dataclass
class ServerCounters:
    connections: int = 0
    malformed_frames: int = 0
    dropped_connections: int = 0
    episodes_received: int = 0


_SHUTDOWN = object()
SEND_TIMEOUT = 10.0


class LearnerServer:
    """TCP front end of a :class:`Learner`.

    An acceptor thread reads frames from all connections, taking at most one
    message per ready connection per round so no client can starve another.
    Weight and hello requests are answered from the latest published
    snapshot; episodes go through a bounded queue to the update loop run by
    :meth:`serve`, which blocks the acceptor when full. A malformed frame
    drops its connection and increments a counter. SHUTDOWN stops intake and
    the update loop drains the queue before returning.
    """

    def __init__(self, learner: Learner, addr: str = "127.0.0.1:0", queue_size: int = 16):
        self.learner = learner
        host, port = parse_addr(addr)
        self._listener = socket.create_server((host, port), reuse_port=False)
        self._listener.setblocking(False)
        self.address = "%s:%d" % self._listener.getsockname()[:2]
        self.counters = ServerCounters()
        self._queue: queue.Queue = queue.Queue(maxsize=queue_size)
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._listener, selectors.EVENT_READ, None)
        self._conns: list[_Conn] = []
        self._stop = threading.Event()
        self._meta = learner.meta()
        self._weights = weights_message(*learner.weights())
        self._thread = threading.Thread(target=self._acceptor, name="learner-acceptor", daemon=True)

    def start(self) -> "LearnerServer":
        self._thread.start()
        return self

    def publish(self) -> None:
        """Make the learner's current networks the answer to weight requests."""
        self._weights = weights_message(*self.learner.weights())

    def stop(self) -> None:
        self._stop.set()

    # ------------------------------------------------------------ acceptor

    def _drop(self, conn: _Conn, malformed: bool) -> None:
        if conn.closed:
            return
        conn.closed = True
        if malformed:
            self.counters.malformed_frames += 1
        self.counters.dropped_connections += 1
        try:
            self._sel.unregister(conn.sock)
        except (KeyError, ValueError):
            pass
        conn.sock.close()
        self._conns.remove(conn)

    def _send(self, conn: _Conn, msg: Message) -> None:
        try:
            conn.sock.sendall(encode_message(msg))
        except OSError:
            self._drop(conn, malformed=False)

    def _read(self, conn: _Conn) -> None:
        try:
            data = conn.sock.recv(1 << 20)
        except OSError:
            data = b""
        if not data:
            self._drop(conn, malformed=False)
            return
        conn.decoder.feed(data)
        try:
            conn.pending.extend(conn.decoder.drain())
        except ProtocolError as exc:
            log.warning("dropping connection: %s", exc)
            self._drop(conn, malformed=True)

    def _dispatch(self, conn: _Conn, msg: Message) -> bool:
        """Handle one message; returns False once SHUTDOWN was seen."""
        t = msg.type
        if t == MsgType.HELLO:
            self._send(conn, json_message(MsgType.HELLO, self._meta))
        elif t == MsgType.GET_WEIGHTS:
            self._send(conn, self._weights)
        elif t == MsgType.EPISODE:
            try:
                record = parse_episode(msg)
            except ProtocolError as exc:
                log.warning("dropping connection: %s", exc)
                self._drop(conn, malformed=True)
                return True
            self.counters.episodes_received += 1
            while not self._stop.is_set():
                try:
                    self._queue.put(record, timeout=0.1)
                    break
                except queue.Full:
                    continue
        elif t == MsgType.EVAL_RESULT:
            try:
                self._queue.put(("eval", parse_json(msg)))
            except ProtocolError:
                self._drop(conn, malformed=True)
        elif t == MsgType.SHUTDOWN:
            return False
        else:
            self._drop(conn, malformed=True)
        return True

    def _acceptor(self) -> None:
        running = True
        rotation = 0
        while running and not self._stop.is_set():
            for key, _ in self._sel.select(timeout=0.05):
                if key.fileobj is self._listener:
                    try:
                        sock, _ = self._listener.accept()
                    except BlockingIOError:
                        continue
                    sock.settimeout(SEND_TIMEOUT)
                    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                    conn = _Conn(sock)
                    self._conns.append(conn)
                    self._sel.register(sock, selectors.EVENT_READ, conn)
                    self.counters.connections += 1
                else:
                    self._read(key.data)
            # round-robin: one message per connection per pass, starting point rotates
            while running and any(c.pending for c in self._conns):
                conns = list(self._conns)
                if not conns:
                    break
                rotation = (rotation + 1) % len(conns)
                for conn in conns[rotation:] + conns[:rotation]:
                    if conn.pending and not conn.closed:
                        if not self._dispatch(conn, conn.pending.pop(0)):
                            running = False
                            break
        while True:
            try:
                self._queue.put(_SHUTDOWN, timeout=0.1)
                break
            except queue.Full:
                if self._stop.is_set():
                    break
        for conn in list(self._conns):
            self._drop(conn, malformed=False)
        self._sel.close()
        self._listener.close()

    # --------------------------------------------------------- update loop

    def serve(self, on_episode=None, max_episodes: int | None = None, wall_seconds: float | None = None) -> None:
        """Run the update loop until SHUTDOWN, ``stop``, or a budget is reached.

        ``on_episode(record, info)`` is called after each ingested episode.
        """
        start = time.monotonic()
        while True:
            if max_episodes is not None and self.learner.stats.episodes >= max_episodes:
                break
            if wall_seconds is not None and time.monotonic() - start > wall_seconds:
                break
            try:
                item = self._queue.get(timeout=0.1)
            except queue.Empty:
                if self._stop.is_set() and not self._thread.is_alive():
                    break
                continue
            if item is _SHUTDOWN:
                break
            self._handle(item, on_episode)
        self._stop.set()
        self._thread.join(timeout=5)
        while True:
            try:
                item = self._queue.get_nowait()
            except queue.Empty:
                break
            if item is not _SHUTDOWN and (max_episodes is None or self.learner.stats.episodes < max_episodes):
                self._handle(item, on_episode)

    def _handle(self, item, on_episode) -> None:
        if isinstance(item, tuple) and item[0] == "eval":
            self.learner.record_eval(item[1])
            return
        info = self.learner.ingest(item)
        self.publish()
        if on_episode is not None:
            on_episode(item, info)

    def close(self) -> None:
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(timeout=5)
