"""SymRunner: a planar, bilaterally symmetric runner with obstacles.

Each leg is a rotating limb driven by a flexor/extensor pair. A leg pushes
the body forward while it is in the contact sector and swinging backwards.
The body height depends on how far apart the legs are, so keeping both legs
in phase ("hopping") for too long counts as a fall. Entering an obstacle
with the legs close together trips the runner.

Everything is plain Python floats: the simulator is stepped one sub-step at
a time and numpy call overhead would dominate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigurationError, ContractError
from ..prng import SplitMix64

TWO_PI = 2.0 * math.pi
NO_OBSTACLE_DX = 100.0

RAW_CHANNELS = ("p_x", "height", "v", "phi_L", "omega_L", "contact_L", "phi_R", "omega_R",
                "contact_R", "s_L", "s_R", "dx_next_obstacle", "r_next_obstacle")
ACTION_CHANNELS = ("aL_flex", "aL_ext", "aR_flex", "aR_ext")


@dataclass(frozen=True)
class EnvConfig:
    n_obstacles: int = 3
    obstacle_ceiling: float | None = None  # margin added to every radius (observed and collision)
    obstacle_free_probability: float = 0.0
    obstacle_x_range: tuple[float, float] = (3.0, 30.0)
    radius_range: tuple[float, float] = (0.05, 0.25)
    strength_range: tuple[float, float] = (0.9, 1.1)
    kappa: float = 40.0
    damping: float = 2.0
    beta: float = 1.5
    friction: float = 0.8
    height0: float = 1.0
    dt: float = 0.01
    max_substeps: int = 1000
    fall_height_frac: float = 0.35
    fall_substeps: int = 20
    contact_angle: float = math.pi / 4
    trip_clearance: float = 1.0
    trip_shock: float = 3.0
    trip_slowdown: float = 0.5
    initial_split: float = 0.5
    integrator_coarse: bool = False

    def __post_init__(self):
        if self.n_obstacles < 0:
            raise ConfigurationError("n_obstacles must be non-negative")
        if not 0.0 <= self.obstacle_free_probability <= 1.0:
            raise ConfigurationError("obstacle_free_probability must lie in [0, 1]")
        if self.obstacle_ceiling is not None and self.obstacle_ceiling < 0:
            raise ConfigurationError("obstacle_ceiling margin must be non-negative")
        if self.dt <= 0 or self.max_substeps < 1:
            raise ConfigurationError("dt and max_substeps must be positive")

    @property
    def margin(self) -> float:
        return self.obstacle_ceiling or 0.0


@dataclass(frozen=True)
class RunnerState:
    p_x: float
    v: float
    phi_L: float
    phi_R: float
    omega_L: float
    omega_R: float
    contact_L: bool
    contact_R: bool
    s_L: float
    s_R: float
    step_count: int = 0
    obstacles: tuple[tuple[float, float], ...] = ()
    fallen: bool = False
    done: bool = False
    low_count: int = 0
    rng_state: int = 0
    trips: int = 0


def wrap_angle(phi: float) -> float:
    while phi >= math.pi:
        phi -= TWO_PI
    while phi < -math.pi:
        phi += TWO_PI
    return phi


def height(state: RunnerState, config: EnvConfig) -> float:
    return config.height0 * (0.3 + 0.7 * abs(math.sin((state.phi_L - state.phi_R) / 2)))


def reset(seed: int, config: EnvConfig = EnvConfig()) -> tuple[RunnerState, np.ndarray]:
    """Deterministic initial state for ``seed``.

    Draw order on the SplitMix64 stream: obstacle-free coin, s_L, s_R, then
    (center, radius) pairs until ``n_obstacles`` non-overlapping obstacles
    are placed (at most 100 attempts per obstacle). Trip shocks continue on
    the same stream during the episode.
    """
    rng = SplitMix64(seed)
    free = rng.uniform() < config.obstacle_free_probability
    s_L = rng.uniform(*config.strength_range)
    s_R = rng.uniform(*config.strength_range)
    obstacles: list[tuple[float, float]] = []
    if not free:
        attempts = 0
        while len(obstacles) < config.n_obstacles and attempts < 100 * config.n_obstacles:
            attempts += 1
            c = rng.uniform(*config.obstacle_x_range)
            r = rng.uniform(*config.radius_range)
            if all(abs(c - c2) > r + r2 for c2, r2 in obstacles):
                obstacles.append((c, r))
    obstacles.sort()
    phi_L, phi_R = config.initial_split, -config.initial_split
    state = RunnerState(
        p_x=0.0, v=0.0, phi_L=phi_L, phi_R=phi_R, omega_L=0.0, omega_R=0.0,
        contact_L=abs(phi_L) < config.contact_angle, contact_R=abs(phi_R) < config.contact_angle,
        s_L=s_L, s_R=s_R, obstacles=tuple(obstacles), rng_state=rng.state)
    return state, observe(state, config)


def collision_interval(center: float, radius: float, config: EnvConfig) -> tuple[float, float]:
    """Positions where the runner is over an obstacle; the ceiling margin inflates it."""
    r = radius + config.margin
    return center - r, center + r


def next_obstacle(state: RunnerState, config: EnvConfig) -> tuple[float, float]:
    """(dx, reported radius) of the first obstacle whose center is not behind the runner."""
    for c, r in state.obstacles:
        if c >= state.p_x:
            return c - state.p_x, r + config.margin
    return NO_OBSTACLE_DX, 0.0


def observe(state: RunnerState, config: EnvConfig = EnvConfig()) -> np.ndarray:
    dx, r = next_obstacle(state, config)
    return np.array([
        state.p_x, height(state, config), state.v,
        state.phi_L, state.omega_L, float(state.contact_L),
        state.phi_R, state.omega_R, float(state.contact_R),
        state.s_L, state.s_R, dx, r,
    ])


def step(state: RunnerState, action, repeat: int = 1,
         config: EnvConfig = EnvConfig()) -> tuple[RunnerState, np.ndarray, float, bool]:
    """Hold ``action`` for ``repeat`` sub-steps; reward is the distance covered."""
    if state.done:
        raise ContractError("step called on a finished episode")
    if repeat < 1:
        raise ConfigurationError("repeat must be a positive integer")
    a = [min(max(float(x), 0.0), 1.0) for x in np.asarray(action).reshape(-1)]
    if len(a) != 4:
        raise ConfigurationError("action must have 4 components")
    aLf, aLe, aRf, aRe = a

    dt = config.dt
    n_sub = repeat
    tick = 1
    if config.integrator_coarse:
        dt, n_sub, tick = 2 * config.dt, (repeat + 1) // 2, 2
    kappa, damp, beta, fric = config.kappa, config.damping, config.beta, config.friction
    contact_angle = config.contact_angle
    margin = config.margin
    low_h = config.fall_height_frac * config.height0
    uL = state.s_L * (aLf - aLe)
    uR = state.s_R * (aRf - aRe)

    p, v = state.p_x, state.v
    phiL, phiR, wL, wR = state.phi_L, state.phi_R, state.omega_L, state.omega_R
    cL, cR = state.contact_L, state.contact_R
    steps, low, fallen, done = state.step_count, state.low_count, state.fallen, False
    trips = state.trips
    rng = SplitMix64(0)
    rng.state = state.rng_state
    start_p = p

    for _ in range(n_sub):
        wL += dt * (kappa * uL - damp * wL)
        wR += dt * (kappa * uR - damp * wR)
        phiL = wrap_angle(phiL + dt * wL)
        phiR = wrap_angle(phiR + dt * wR)
        cL = abs(phiL) < contact_angle
        cR = abs(phiR) < contact_angle
        fL = -beta * wL if (cL and wL < 0) else 0.0
        fR = -beta * wR if (cR and wR < 0) else 0.0
        v += dt * (fL + fR - fric * v)
        if v < 0.0:
            v = 0.0
        p_prev = p
        p += dt * v
        for c, r in state.obstacles:
            lo = c - (r + margin)  # left end of collision_interval
            if p_prev < lo <= p and abs(phiL - phiR) < config.trip_clearance:
                v *= config.trip_slowdown
                shock = config.trip_shock * rng.sign()
                wL += shock
                wR += shock
                trips += 1
        h = config.height0 * (0.3 + 0.7 * abs(math.sin((phiL - phiR) / 2)))
        low = low + 1 if h < low_h else 0
        steps += tick
        if low >= config.fall_substeps:
            fallen = done = True
            break
        if steps >= config.max_substeps:
            done = True
            break

    new = RunnerState(p_x=p, v=v, phi_L=phiL, phi_R=phiR, omega_L=wL, omega_R=wR,
                      contact_L=cL, contact_R=cR, s_L=state.s_L, s_R=state.s_R, step_count=steps,
                      obstacles=state.obstacles, fallen=fallen, done=done, low_count=low,
                      rng_state=rng.state, trips=trips)
    return new, observe(new, config), p - start_p, done


def mirror_state(state: RunnerState) -> RunnerState:
    """Swap every left/right field."""
    return replace(state, phi_L=state.phi_R, phi_R=state.phi_L, omega_L=state.omega_R,
                   omega_R=state.omega_L, contact_L=state.contact_R, contact_R=state.contact_L,
                   s_L=state.s_R, s_R=state.s_L)


def mirror_action(action) -> np.ndarray:
    a = np.asarray(action)
    return a[..., [2, 3, 0, 1]]


class SymRunner:
    """Stateful convenience wrapper over :func:`reset` / :func:`step`."""

    obs_dim = len(RAW_CHANNELS)
    act_dim = 4

    def __init__(self, config: EnvConfig = EnvConfig()):
        self.config = config
        self.state: RunnerState | None = None

    def reset(self, seed: int) -> np.ndarray:
        self.state, obs = reset(seed, self.config)
        return obs

    def step(self, action, repeat: int = 1) -> tuple[np.ndarray, float, bool]:
        if self.state is None:
            raise ContractError("reset must be called first")
        self.state, obs, reward, done = step(self.state, action, repeat, self.config)
        return obs, reward, done
