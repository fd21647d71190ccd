"""Observation engineering: layouts, mirror permutations, enrichment, normalization."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError
from ..transition import Batch, Transition
from .symrunner import NO_OBSTACLE_DX, RAW_CHANNELS

RAW_DIM = len(RAW_CHANNELS)
KINEMATIC = ("p_x", "height", "v", "phi_L", "omega_L", "phi_R", "omega_R")
ANGLE_CHANNELS = {"phi_L", "phi_R"}
N_STACK = 3
NO_PREV_DX = -NO_OBSTACLE_DX

ENRICHED_FRAME = (RAW_CHANNELS + tuple(f"vel_{c}" for c in KINEMATIC)
                  + tuple(f"acc_{c}" for c in KINEMATIC) + ("dx_prev_obstacle", "r_prev_obstacle"))
ENRICHED_DIM = N_STACK * len(ENRICHED_FRAME)


def _mirror_name(name: str) -> str:
    base, at, frame = name.partition("@")
    if base.endswith("_L"):
        base = base[:-2] + "_R"
    elif base.endswith("_R"):
        base = base[:-2] + "_L"
    return base + at + frame


def _mirror_names(names: Sequence[str]) -> np.ndarray:
    idx = {n: i for i, n in enumerate(names)}
    if len(idx) != len(names):
        raise ConfigurationError("layout channel names must be unique")
    return np.array([idx[_mirror_name(n)] for n in names])


@dataclass(frozen=True)
class Layout:
    """Channel names plus the left/right permutations of observation and action."""

    name: str
    channels: tuple[str, ...]
    obs_perm: np.ndarray = field(compare=False)
    act_perm: np.ndarray = field(compare=False)

    @property
    def dim(self) -> int:
        return len(self.channels)


ACTION_PERM = np.array([2, 3, 0, 1])

LAYOUTS: dict[str, Layout] = {}


def register_layout(name: str, channels: Sequence[str], act_perm=ACTION_PERM) -> Layout:
    layout = Layout(name, tuple(channels), _mirror_names(channels), np.asarray(act_perm))
    LAYOUTS[name] = layout
    return layout


register_layout("raw", RAW_CHANNELS)
register_layout("enriched", tuple(f"{c}@{k}" for k in range(N_STACK) for c in ENRICHED_FRAME))


def get_layout(name: str) -> Layout:
    try:
        return LAYOUTS[name]
    except KeyError:
        raise ConfigurationError(f"unknown observation layout {name!r}") from None


def reflect_obs(obs: np.ndarray, layout: str) -> np.ndarray:
    return np.asarray(obs)[..., get_layout(layout).obs_perm]


def reflect_action(action: np.ndarray, layout: str = "raw") -> np.ndarray:
    return np.asarray(action)[..., get_layout(layout).act_perm]


def reflect_transition(t: Transition) -> Transition:
    """Mirror a transition: swap left/right observation and action channels."""
    lay = get_layout(t.layout)
    return replace(t, s=np.asarray(t.s)[..., lay.obs_perm], a=np.asarray(t.a)[..., lay.act_perm],
                   s_next=np.asarray(t.s_next)[..., lay.obs_perm])


def reflect_batch(batch: Batch) -> Batch:
    lay = get_layout(batch.layout)
    return replace(batch, s=batch.s[:, lay.obs_perm], a=batch.a[:, lay.act_perm],
                   s_next=batch.s_next[:, lay.obs_perm])


# ---------------------------------------------------------------- enrichment

_IDX = {c: i for i, c in enumerate(RAW_CHANNELS)}
_KIN_IDX = np.array([_IDX[c] for c in KINEMATIC])
_ANGLE_MASK = np.array([c in ANGLE_CHANNELS for c in KINEMATIC])


def _wrap(x: np.ndarray) -> np.ndarray:
    return (x + math.pi) % (2 * math.pi) - math.pi


def _obstacle_centre(frame: np.ndarray) -> tuple[float, float] | None:
    dx = frame[_IDX["dx_next_obstacle"]]
    if dx >= NO_OBSTACLE_DX:
        return None
    return float(frame[_IDX["p_x"]] + dx), float(frame[_IDX["r_next_obstacle"]])


def enrich_observation(history: Sequence[np.ndarray], dt_frame: float = 1.0,
                       prev_obstacle: tuple[float, float] | None = None) -> tuple[np.ndarray, tuple | None]:
    """Build the enriched observation from a window of raw frames (oldest first).

    Per frame: the raw channels with ``p_x`` zeroed (first-person view), backward
    finite-difference velocities and accelerations of the kinematic channels
    (angles use wrapped differences), and the previous obstacle as
    ``(center - p_x, radius)``. The three most recent frames are stacked,
    oldest first. Windows shorter than five frames are padded by repeating the
    oldest frame, so at episode start every stacked frame equals frame 0.

    ``prev_obstacle`` is the absolute ``(center, radius)`` of the obstacle
    passed before the window started; the updated memory is returned alongside
    the observation.
    """
    frames = [np.asarray(f, dtype=np.float64) for f in history]
    if not frames:
        raise ConfigurationError("history window is empty")
    while len(frames) < N_STACK + 2:
        frames.insert(0, frames[0])
    frames = frames[-(N_STACK + 2):]
    win = np.stack(frames)
    kin = win[:, _KIN_IDX]
    diff = np.diff(kin, axis=0)
    diff[:, _ANGLE_MASK] = _wrap(diff[:, _ANGLE_MASK])
    vel = diff / dt_frame
    acc = np.diff(vel, axis=0) / dt_frame

    prev = prev_obstacle
    prev_per_frame = []
    last = _obstacle_centre(frames[0])
    for f in frames[1:]:
        cur = _obstacle_centre(f)
        if last is not None and (cur is None or cur[0] != last[0]):
            prev = last
        last = cur
        prev_per_frame.append(prev)

    out = []
    for j in range(N_STACK):
        t = j + 2
        frame = win[t].copy()
        p_x = frame[_IDX["p_x"]]
        frame[_IDX["p_x"]] = 0.0
        pv = prev_per_frame[t - 1]
        prev_feat = [NO_PREV_DX, 0.0] if pv is None else [pv[0] - p_x, pv[1]]
        out.append(np.concatenate([frame, vel[t - 1], acc[t - 2], prev_feat]))
    return np.concatenate(out), prev


class ObservationEnricher:
    """Keeps the raw-frame window and the previous-obstacle memory of one episode."""

    def __init__(self, dt_frame: float):
        self.dt_frame = dt_frame
        # (raw frame, previous-obstacle memory after that frame)
        self._frames: deque[tuple[np.ndarray, tuple | None]] = deque(maxlen=N_STACK + 1)

    def reset(self, raw: np.ndarray) -> np.ndarray:
        self._frames.clear()
        return self.push(raw)

    def push(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        frames = [f for f, _ in self._frames]
        hint = self._frames[0][1] if self._frames else None
        obs, prev = enrich_observation(frames + [raw], self.dt_frame, hint)
        self._frames.append((raw, prev))
        return obs

    @property
    def prev_obstacle(self) -> tuple[float, float] | None:
        return self._frames[-1][1] if self._frames else None


# ------------------------------------------------------------- normalization

NORM_EPS = 1e-8


@dataclass
class ObsNormalizer:
    """``(x - mean) / std`` per channel; channels with ``std < eps`` are only shifted.

    ``mode="manual"`` uses frozen statistics. ``mode="running"`` updates the
    statistics online with every observation before normalizing it, which is
    the auto-normalizing filter whose failure modes motivate manual stats.
    """

    mean: np.ndarray
    std: np.ndarray
    mode: str = "manual"
    names: tuple[str, ...] = ()
    count: int = 0
    _m2: np.ndarray | None = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape:
            raise ConfigurationError("mean and std must have the same length")
        if self.mode not in ("manual", "running"):
            raise ConfigurationError(f"unknown normalizer mode {self.mode!r}")
        if self._m2 is None:
            self._m2 = np.zeros_like(self.mean)

    @classmethod
    def identity(cls, dim: int) -> "ObsNormalizer":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def running(cls, dim: int) -> "ObsNormalizer":
        return cls(np.zeros(dim), np.zeros(dim), mode="running")

    @classmethod
    def load(cls, path: str | Path) -> "ObsNormalizer":
        names, means, stds = [], [], []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, mean, std = line.split()
            names.append(name)
            means.append(float(mean))
            stds.append(float(std))
        return cls(np.array(means), np.array(stds), names=tuple(names))

    def save(self, path: str | Path) -> None:
        names = self.names or tuple(f"c{i}" for i in range(len(self.mean)))
        Path(path).write_text("".join(f"{n} {float(m)!r} {float(s)!r}\n" for n, m, s in zip(names, self.mean, self.std)))

    def update(self, x: np.ndarray) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self._m2 = self._m2 + delta * (x - self.mean)
        self.std = np.sqrt(self._m2 / self.count)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.mean.shape[0]:
            raise ConfigurationError(f"observation has {x.shape[-1]} channels, stats have {self.mean.shape[0]}")
        if self.mode == "running":
            for row in np.atleast_2d(x):
                self.update(row)
        return normalize_observation(x, self.mean, self.std)


def normalize_observation(obs, mean, std) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if obs.shape[-1] != mean.shape[0] or mean.shape != std.shape:
        raise ConfigurationError("observation and stats channel counts differ")
    centred = obs - mean
    return np.where(std < NORM_EPS, centred, centred / np.maximum(std, NORM_EPS))
