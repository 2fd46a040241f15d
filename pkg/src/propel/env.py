"""Seedable continuous-control environments: pendulum, mountain car, waypoint track.

All three advance their continuous dynamics with semi-implicit Euler over a
fixed number of substeps per control step, so one control step of ``dt``
stays within 1e-3 of a fine RK4 reference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, StateError


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    act_dim: int
    act_low: tuple[float, ...]
    act_high: tuple[float, ...]
    dt: float
    max_horizon: int
    obs_names: tuple[str, ...]
    obs_low: Optional[tuple[float, ...]] = None
    obs_high: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.obs_dim < 1 or self.act_dim < 1:
            raise ContractError("obs_dim and act_dim must be >= 1")
        if len(self.act_low) != self.act_dim or len(self.act_high) != self.act_dim:
            raise ContractError("action bounds must have act_dim entries")
        if not all(lo < hi for lo, hi in zip(self.act_low, self.act_high)):
            raise ContractError("act_low must be < act_high elementwise")
        if self.dt <= 0:
            raise ContractError("dt must be positive")

    @property
    def low(self) -> np.ndarray:
        return np.asarray(self.act_low, dtype=float)

    @property
    def high(self) -> np.ndarray:
        return np.asarray(self.act_high, dtype=float)

    def clip(self, action) -> np.ndarray:
        return np.clip(np.asarray(action, dtype=float).reshape(self.act_dim), self.low, self.high)


@dataclass(frozen=True)
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    truncated: bool = False


def wrap_angle(x: float) -> float:
    """Wrap to [-pi, pi)."""
    return (x + math.pi) % (2 * math.pi) - math.pi


class Env:
    """Base class. Subclasses define ``spec``, ``_reset_state``, ``_advance``, ``_reward``."""

    spec: EnvSpec
    substeps: int = 1

    def __init__(self, seed: int = 0):
        self.state = np.zeros(0)
        self.t = 0
        self.done = False
        self.reset(seed)

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.state = np.asarray(self._reset_state(rng), dtype=float)
        self.t = 0
        self.done = False
        return self.observe()

    def set_state(self, state: Sequence[float]) -> np.ndarray:
        self.state = np.array(state, dtype=float)
        self.t = 0
        self.done = False
        return self.observe()

    def observe(self) -> np.ndarray:
        return self.state.copy()

    def step(self, action) -> StepResult:
        if self.done:
            raise StateError(f"{self.spec.name}: step() called on a finished episode; call reset()")
        a = np.asarray(action, dtype=float).reshape(-1)
        if a.shape != (self.spec.act_dim,):
            raise ContractError(f"action has shape {a.shape}, expected ({self.spec.act_dim},)")
        if not np.isfinite(a).all():
            raise ContractError("non-finite action")
        a = self.spec.clip(a)
        reward = self._reward(self.state, a)
        self.state = self._advance(self.state, a)
        self.t += 1
        terminal, reward = self._terminal(self.state, reward)
        truncated = not terminal and self.t >= self.spec.max_horizon
        self.done = terminal or truncated
        return StepResult(self.observe(), float(reward), self.done, truncated)

    def _terminal(self, state, reward):
        return False, reward

    def _advance(self, state, a):
        h = self.spec.dt / self.substeps
        s = state.copy()
        for _ in range(self.substeps):
            s = self._euler(s, a, h)
        return self._post(s)

    def _post(self, s):
        return s

    def derivative(self, state, action) -> np.ndarray:
        """Continuous-time right-hand side ds/dt."""
        raise NotImplementedError


class Pendulum(Env):
    """Inverted pendulum swing-up; theta = 0 is upright. Obs (cos th, sin th, thdot)."""

    g, m, l = 10.0, 1.0, 1.0
    max_speed = 8.0
    substeps = 160
    spec = EnvSpec("pendulum", 3, 1, (-2.0,), (2.0,), 0.05, 200, ("cos_theta", "sin_theta", "theta_dot"),
                   (-1.0, -1.0, -8.0), (1.0, 1.0, 8.0))

    def _reset_state(self, rng):
        return [rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0)]

    def observe(self):
        th, thdot = self.state
        return np.array([math.cos(th), math.sin(th), thdot])

    def _acc(self, th, u):
        return 3 * self.g / (2 * self.l) * math.sin(th) + 3.0 / (self.m * self.l ** 2) * u

    def derivative(self, state, action):
        th, thdot = state
        return np.array([thdot, self._acc(th, float(action[0]))])

    def _advance(self, state, a):
        h = self.spec.dt / self.substeps
        th, thdot, u = float(state[0]), float(state[1]), float(a[0])
        for _ in range(self.substeps):
            thdot += h * self._acc(th, u)
            th += h * thdot
        return np.array([th, min(max(thdot, -self.max_speed), self.max_speed)])

    def _reward(self, s, a):
        th, thdot = s
        return -(wrap_angle(th) ** 2 + 0.1 * thdot ** 2 + 0.001 * a[0] ** 2)


class MountainCar(Env):
    """Continuous mountain car; reach x >= 0.45. Obs (position, velocity)."""

    power = 0.0015
    min_pos, max_pos, max_speed, goal = -1.2, 0.6, 0.07, 0.45
    substeps = 10
    spec = EnvSpec("mountain_car", 2, 1, (-1.0,), (1.0,), 1.0, 999, ("position", "velocity"),
                   (-1.2, -0.07), (0.6, 0.07))

    def _reset_state(self, rng):
        return [rng.uniform(-0.6, -0.4), 0.0]

    def derivative(self, state, action):
        x, v = state
        return np.array([v, self.power * float(action[0]) - 0.0025 * math.cos(3 * x)])

    def _euler(self, s, a, h):
        x, v = s
        v = v + h * (self.power * a[0] - 0.0025 * math.cos(3 * x))
        return np.array([x + h * v, v])

    def _post(self, s):
        x, v = s
        v = min(max(v, -self.max_speed), self.max_speed)
        x = min(max(x, self.min_pos), self.max_pos)
        if x == self.min_pos and v < 0:
            v = 0.0
        return np.array([x, v])

    def _reward(self, s, a):
        return -0.1 * a[0] ** 2

    def _terminal(self, s, reward):
        if s[0] >= self.goal:
            return True, reward + 100.0
        return False, reward


# ---------------------------------------------------------------------- track


@dataclass(frozen=True)
class TrackSpec:
    waypoints: tuple[tuple[float, float], ...]
    width: float
    friction: float = 0.2

    def __post_init__(self):
        if len(self.waypoints) < 4:
            raise ConfigError("a track needs at least 4 waypoints")
        if not self.width > 0:
            raise ConfigError("track width must be positive")
        if not _is_simple_polygon(np.asarray(self.waypoints, dtype=float)):
            raise ConfigError("track waypoints must form a simple closed polyline")


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12 and \
            min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12

    o1, o2, o3, o4 = orient(p1, p2, q1), orient(p1, p2, q2), orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return (o1 == 0 and on_seg(p1, p2, q1)) or (o2 == 0 and on_seg(p1, p2, q2)) or \
        (o3 == 0 and on_seg(q1, q2, p1)) or (o4 == 0 and on_seg(q1, q2, p2))


def _is_simple_polygon(P: np.ndarray) -> bool:
    n = len(P)
    if np.any(np.linalg.norm(P - np.roll(P, -1, axis=0), axis=1) == 0):
        return False
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(P[i], P[(i + 1) % n], P[j], P[(j + 1) % n]):
                return False
    return True


def default_track() -> TrackSpec:
    """Counter-clockwise 30 m x 20 m ellipse, 24 waypoints, 6 m wide."""
    ang = np.linspace(0, 2 * np.pi, 24, endpoint=False)
    pts = tuple((float(30 * math.cos(a)), float(20 * math.sin(a))) for a in ang)
    return TrackSpec(pts, width=6.0, friction=0.2)


def load_track(path) -> TrackSpec:
    """Read ``width W friction F`` then one ``x y`` pair per line (``#`` comments allowed)."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    rows = [ln.split("#", 1)[0].split() for ln in lines]
    rows = [r for r in rows if r]
    if not rows or len(rows[0]) != 4 or rows[0][0] != "width" or rows[0][2] != "friction":
        raise ConfigError(f"{path}: first line must be 'width W friction F'")
    try:
        width, friction = float(rows[0][1]), float(rows[0][3])
        pts = []
        for r in rows[1:]:
            if len(r) != 2:
                raise ValueError(f"expected 'x y', got {' '.join(r)!r}")
            pts.append((float(r[0]), float(r[1])))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return TrackSpec(tuple(pts), width, friction)


def save_track(track: TrackSpec, path) -> None:
    lines = [f"width {track.width!r} friction {track.friction!r}"]
    lines += [f"{x!r} {y!r}" for x, y in track.waypoints]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class Track(Env):
    """Kinematic car on a closed waypoint track.

    State (x, y, heading, speed). Obs (angle to track axis, signed distance to
    the centerline normalized by half-width, speed along the axis). Actions
    (steer in [-1, 1], throttle in [0, 1]). The episode ends when the car is
    half a width or more from the centerline.
    """

    max_curvature = 0.25
    max_accel = 4.0
    offcenter_penalty = 2.0
    substeps = 600

    def __init__(self, seed: int = 0, track: Optional[TrackSpec] = None):
        self.track = track or default_track()
        self._P = np.asarray(self.track.waypoints, dtype=float)
        self._D = np.roll(self._P, -1, axis=0) - self._P
        self._L2 = np.einsum("ij,ij->i", self._D, self._D)
        self.spec = EnvSpec("track", 3, 2, (-1.0, 0.0), (1.0, 1.0), 0.1, 1000,
                            ("angle", "center_offset", "axial_speed"),
                            (-math.pi, -1.0, -20.0), (math.pi, 1.0, 20.0))
        super().__init__(seed)

    def _reset_state(self, rng):
        p0, d0 = self._P[0], self._D[0]
        heading = math.atan2(d0[1], d0[0])
        normal = np.array([-d0[1], d0[0]]) / math.sqrt(self._L2[0])
        start = p0 + 0.1 * d0 + rng.uniform(-0.5, 0.5) * normal
        return [start[0], start[1], heading + rng.uniform(-0.1, 0.1), rng.uniform(1.0, 3.0)]

    def locate(self, x: float, y: float) -> tuple[float, float]:
        """Signed distance to the centerline (left positive) and track tangent angle there."""
        q = np.array([x, y])
        rel = q - self._P
        t = np.clip(np.einsum("ij,ij->i", rel, self._D) / self._L2, 0.0, 1.0)
        near = self._P + t[:, None] * self._D
        dist = np.linalg.norm(q - near, axis=1)
        k = int(np.argmin(dist))
        d = self._D[k]
        cross = d[0] * rel[k, 1] - d[1] * rel[k, 0]
        return math.copysign(float(dist[k]), cross), math.atan2(d[1], d[0])

    def observe(self):
        x, y, psi, v = self.state
        off, tangent = self.locate(x, y)
        ang = wrap_angle(psi - tangent)
        return np.array([ang, off / (0.5 * self.track.width), v * math.cos(ang)])

    def derivative(self, state, action):
        _, _, psi, v = state
        steer, throttle = float(action[0]), float(action[1])
        return np.array([v * math.cos(psi), v * math.sin(psi), v * steer * self.max_curvature,
                         self.max_accel * throttle - self.track.friction * v])

    def _advance(self, state, a):
        h = self.spec.dt / self.substeps
        x, y, psi, v = (float(c) for c in state)
        steer, throttle = float(a[0]), float(a[1])
        for _ in range(self.substeps):
            v += h * (self.max_accel * throttle - self.track.friction * v)
            psi += h * v * steer * self.max_curvature
            x += h * v * math.cos(psi)
            y += h * v * math.sin(psi)
        return np.array([x, y, psi, v])

    def _reward(self, s, a):
        obs = self._obs_of(s)
        return obs[2] - self.offcenter_penalty * obs[1] ** 2

    def _obs_of(self, s):
        saved = self.state
        self.state = s
        try:
            return self.observe()
        finally:
            self.state = saved

    def _terminal(self, s, reward):
        off, _ = self.locate(s[0], s[1])
        return abs(off) >= 0.5 * self.track.width, reward


ENVS = {"pendulum": Pendulum, "mountain_car": MountainCar, "track": Track}


def make_env(name: str, seed: int = 0, **kw) -> Env:
    try:
        cls = ENVS[name]
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None
    return cls(seed, **kw)
