#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""Planar navigation simulator with circular obstacles and column raycast rendering.

The agent is a holonomic body in a rectangular arena. Each step integrates the
yaw rate first and then translates by the body-frame velocity rotated into the
world. The student sees an egocentric RGB image; the oracle sees a pseudo-depth
image plus obstacle- and goal-relative vectors.
"""

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, List, Optional, Tuple

import numpy as np

from config import debug_logger
from core.errors import ConfigError, ContractError

SPAWN_ATTEMPTS = 1000

CAUSE_NONE = "none"
CAUSE_GOAL = "goal"
CAUSE_COLLISION = "collision"
CAUSE_TIMEOUT = "timeout"
TERMINAL_CAUSES = (CAUSE_GOAL, CAUSE_COLLISION, CAUSE_TIMEOUT)

GOAL_REWARD = 10.0
COLLISION_PENALTY = 1.0
PROGRESS_SCALE = 0.1

SKY_COLOR = np.array([0.53, 0.81, 0.92])
FLOOR_COLOR = np.array([0.36, 0.31, 0.26])
BEACON_COLOR = np.array([1.0, 0.0, 1.0])
OBSTACLE_PALETTE = np.array([
    [0.80, 0.25, 0.20],
    [0.20, 0.60, 0.25],
    [0.25, 0.35, 0.80],
    [0.85, 0.70, 0.15],
    [0.55, 0.30, 0.60],
    [0.15, 0.65, 0.65],
    [0.90, 0.50, 0.10],
    [0.45, 0.45, 0.45],
])

PRIVILEGED_VECTOR_DIM = 15
STUDENT_VECTOR_DIM = 12


@dataclass(frozen=True)
class Obstacle:
    x: float
    y: float
    radius: float
    hue_id: int = 0


@dataclass
class Arena:
    """Bounds, obstacles and goal of one episode."""
    width: float
    height: float
    obstacles: List[Obstacle]
    goal: np.ndarray
    goal_radius: float
    agent_radius: float


@dataclass(frozen=True)
class ArenaSettings:
    """Arena, dynamics and rendering settings built from the ``arena`` config section."""
    preset: str = "empty"
    width: float = 6.0
    height: float = 6.0
    obstacles: Tuple[Tuple[float, float, float], ...] = ()
    random_obstacles: int = 4
    obstacle_radius: Tuple[float, float] = (0.3, 0.6)
    goal_radius: float = 0.5
    agent_radius: float = 0.2
    min_start_goal_distance: float = 2.0
    dt: float = 0.1
    max_speed: Tuple[float, float, float] = (1.0, 1.0, 1.5)
    max_steps: int = 5000
    progress_reward: str = "cumulative"
    image_size: int = 64
    fov_deg: float = 82.6
    max_range: float = 8.0
    near: float = 0.5
    beacon_radius: float = 0.25

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> "ArenaSettings":
        values = dict(section)
        values["obstacles"] = tuple(tuple(float(v) for v in o) for o in values.get("obstacles", ()))
        values["obstacle_radius"] = tuple(values.get("obstacle_radius", cls.obstacle_radius))
        values["max_speed"] = tuple(float(v) for v in values.get("max_speed", cls.max_speed))
        return cls(**values)

    @property
    def u_max(self) -> np.ndarray:
        return np.asarray(self.max_speed, dtype=np.float64)


@dataclass
class AgentState:
    position: np.ndarray
    heading: float
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    yaw_rate: float = 0.0
    steps: int = 0

    def copy(self) -> "AgentState":
        return AgentState(self.position.copy(), self.heading, self.velocity.copy(), self.yaw_rate, self.steps)


@dataclass
class PrivilegedState:
    """Oracle view: L depth profiles plus velocity, yaw rate, orientation and relative positions."""
    depth_profiles: np.ndarray
    velocity: np.ndarray
    angular: np.ndarray
    orientation: np.ndarray
    delta_p: np.ndarray
    image_size: int

    @property
    def depth(self) -> np.ndarray:
        """L×H×W depth stack (each profile replicated down the rows)."""
        return np.repeat(self.depth_profiles[:, None, :], self.image_size, axis=1)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.velocity, self.angular, self.orientation, self.delta_p])


@dataclass
class StepOutcome:
    reward: float
    terminal: bool
    cause: str
    d_init: float
    d_t: float


# --------------------------------------------------------------------------- geometry

def rotation(heading: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    return np.array([[c, -s], [s, c]])


def to_body(vector: np.ndarray, heading: float) -> np.ndarray:
    return rotation(heading).T @ vector


def wrap_angle(angle: float) -> float:
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def clamp_action(action, u_max: np.ndarray) -> np.ndarray:
    action = np.asarray(action, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(action)):
        raise ContractError(f"action contains NaN or infinite values: {action}")
    return np.clip(action, -u_max, u_max)


def surface_distance(position: np.ndarray, obstacle: Obstacle) -> float:
    return math.hypot(position[0] - obstacle.x, position[1] - obstacle.y) - obstacle.radius


def in_collision(position: np.ndarray, arena: Arena) -> bool:
    r = arena.agent_radius
    x, y = position
    if x < r or y < r or x > arena.width - r or y > arena.height - r:
        return True
    return any(surface_distance(position, o) < r for o in arena.obstacles)


def nearest_obstacle_vector(position: np.ndarray, heading: float, arena: Arena) -> np.ndarray:
    """Body-frame vector to the nearest obstacle surface point; zeros in an empty arena."""
    if not arena.obstacles:
        return np.zeros(2)
    nearest = min(arena.obstacles, key=lambda o: surface_distance(position, o))
    to_center = np.array([nearest.x, nearest.y]) - position
    distance = float(np.linalg.norm(to_center))
    if distance == 0.0:
        return np.zeros(2)
    return to_body(to_center * (1.0 - nearest.radius / distance), heading)


def goal_distance(position: np.ndarray, arena: Arena) -> float:
    return float(np.linalg.norm(arena.goal - position))


# --------------------------------------------------------------------------- arenas

def preset_obstacles(settings: ArenaSettings, rng: np.random.Generator) -> List[Obstacle]:
    """Obstacles for one reset of the configured preset."""
    if settings.preset == "empty":
        return []
    if settings.preset == "custom":
        return [Obstacle(x, y, r, i % len(OBSTACLE_PALETTE)) for i, (x, y, r) in enumerate(settings.obstacles)]
    if settings.preset == "four_obstacles":
        w, h = settings.width, settings.height
        radius = 0.075 * min(w, h)
        centers = [(0.35 * w, 0.35 * h), (0.65 * w, 0.35 * h), (0.35 * w, 0.65 * h), (0.65 * w, 0.65 * h)]
        return [Obstacle(x, y, radius, i) for i, (x, y) in enumerate(centers)]
    if settings.preset == "random":
        low, high = settings.obstacle_radius
        obstacles: List[Obstacle] = []
        for _ in range(SPAWN_ATTEMPTS):
            if len(obstacles) == settings.random_obstacles:
                break
            radius = float(rng.uniform(low, high))
            x = float(rng.uniform(radius, settings.width - radius))
            y = float(rng.uniform(radius, settings.height - radius))
            if all(math.hypot(x - o.x, y - o.y) > radius + o.radius for o in obstacles):
                obstacles.append(Obstacle(x, y, radius, len(obstacles) % len(OBSTACLE_PALETTE)))
        if len(obstacles) < settings.random_obstacles:
            raise ConfigError(f"could not place {settings.random_obstacles} random obstacles without overlap")
        return obstacles
    raise ConfigError(f"unknown arena preset: {settings.preset}")


def sample_arena(settings: ArenaSettings, rng: np.random.Generator) -> Tuple[Arena, np.ndarray]:
    """Sample obstacles, a goal and a collision-free start.

    Returns:
        The arena and the start position.

    Raises:
        ConfigError: No valid placement after ``SPAWN_ATTEMPTS`` rejections.
    """
    obstacles = preset_obstacles(settings, rng)
    for attempt in range(SPAWN_ATTEMPTS):
        goal = rng.uniform([settings.goal_radius] * 2, [settings.width - settings.goal_radius,
                                                         settings.height - settings.goal_radius])
        start = rng.uniform([settings.agent_radius] * 2, [settings.width - settings.agent_radius,
                                                           settings.height - settings.agent_radius])
        arena = Arena(settings.width, settings.height, obstacles, goal, settings.goal_radius, settings.agent_radius)
        if any(surface_distance(goal, o) <= settings.goal_radius for o in obstacles):
            continue
        if in_collision(start, arena):
            continue
        distance = goal_distance(start, arena)
        if distance <= settings.goal_radius or distance < settings.min_start_goal_distance:
            continue
        debug_logger.debug(f"Spawned after {attempt + 1} attempt(s): start={start}, goal={goal}")
        return arena, start
    raise ConfigError(f"no valid spawn found after {SPAWN_ATTEMPTS} attempts; check arena size and obstacles")


# --------------------------------------------------------------------------- reward

def reward_fn(prev_distance: float, outcome: StepOutcome, max_steps: int, progress_reward: str = "cumulative") -> float:
    """Step reward: goal bonus, collision penalty, per-step penalty and distance progress.

    Args:
        prev_distance: Goal distance before the step (used by the incremental variant).
        outcome: Outcome of the step (``d_init``, ``d_t`` and cause are read).
        max_steps: Episode horizon ``H_max``.
        progress_reward: ``cumulative`` (progress since the start) or ``incremental`` (since the last step).

    Returns:
        The scalar reward.
    """
    reference = outcome.d_init if progress_reward == "cumulative" else prev_distance
    reward = PROGRESS_SCALE * (reference - outcome.d_t) - 1.0 / max_steps
    if outcome.cause == CAUSE_GOAL:
        reward += GOAL_REWARD
    elif outcome.cause == CAUSE_COLLISION:
        reward -= COLLISION_PENALTY
    return reward


# --------------------------------------------------------------------------- rendering

def ray_angles(heading: float, settings: ArenaSettings) -> np.ndarray:
    """World angle of the ray through each image column, leftmost column first."""
    fov = math.radians(settings.fov_deg)
    columns = (np.arange(settings.image_size) + 0.5) / settings.image_size
    return heading + fov / 2.0 - columns * fov


def _circle_hits(origin: np.ndarray, directions: np.ndarray, cx: float, cy: float, radius: float) -> np.ndarray:
    """Nearest positive ray parameter per direction for one circle (inf when missed)."""
    oc = origin - np.array([cx, cy])
    b = directions @ oc
    c = float(oc @ oc) - radius * radius
    disc = b * b - c
    hits = np.full(directions.shape[0], np.inf)
    ok = disc >= 0.0
    root = np.sqrt(np.where(ok, disc, 0.0))
    near = -b - root
    far = -b + root
    t = np.where(near > 0.0, near, np.where(c < 0.0, far, np.inf))
    hits[ok] = t[ok]
    hits[hits <= 0.0] = np.inf
    return hits


def cast_rays(state: AgentState, arena: Arena, settings: ArenaSettings) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Obstacle hit distance, obstacle hue and goal-beacon hit distance per column.

    Hits beyond ``max_range`` are reported as ``inf``; hue is −1 where nothing is hit.
    """
    angles = ray_angles(state.heading, settings)
    directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    obstacle_hit = np.full(settings.image_size, np.inf)
    hue = np.full(settings.image_size, -1, dtype=np.int64)
    for obstacle in arena.obstacles:
        hits = _circle_hits(state.position, directions, obstacle.x, obstacle.y, obstacle.radius)
        closer = hits < obstacle_hit
        obstacle_hit[closer] = hits[closer]
        hue[closer] = obstacle.hue_id
    beacon_hit = _circle_hits(state.position, directions, arena.goal[0], arena.goal[1], settings.beacon_radius)
    obstacle_hit[obstacle_hit > settings.max_range] = np.inf
    hue[~np.isfinite(obstacle_hit)] = -1
    beacon_hit[beacon_hit > settings.max_range] = np.inf
    return obstacle_hit, hue, beacon_hit


def _column_fill(distance: np.ndarray, near: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(np.isfinite(distance), np.clip(near / distance, 0.0, 1.0), 0.0)


def depth_profile(state: AgentState, arena: Arena, settings: ArenaSettings) -> np.ndarray:
    """Per-column normalised inverse obstacle distance ``clamp(near / d)``; 0 where nothing is hit."""
    obstacle_hit, _, _ = cast_rays(state, arena, settings)
    return _column_fill(obstacle_hit, settings.near)


def render_depth(state: AgentState, arena: Arena, settings: ArenaSettings) -> np.ndarray:
    """1×H×W pseudo-depth image (the goal beacon is not a physical obstacle and is not drawn)."""
    profile = depth_profile(state, arena, settings)
    return np.repeat(profile[None, None, :], settings.image_size, axis=1)


def render_rgb(state: AgentState, arena: Arena, settings: ArenaSettings) -> np.ndarray:
    """3×H×W egocentric image in [0, 1]: sky/floor split, obstacle columns and the goal beacon."""
    size = settings.image_size
    image = np.empty((3, size, size))
    horizon = size // 2
    image[:, :horizon, :] = SKY_COLOR[:, None, None]
    image[:, horizon:, :] = FLOOR_COLOR[:, None, None]

    obstacle_hit, hue, beacon_hit = cast_rays(state, arena, settings)
    beacon_visible = beacon_hit < obstacle_hit
    nearest = np.where(beacon_visible, beacon_hit, obstacle_hit)
    heights = np.rint(_column_fill(nearest, settings.near) * size).astype(np.int64)
    heights[np.isfinite(nearest) & (heights < 1)] = 1
    for column in np.flatnonzero(np.isfinite(nearest)):
        top = (size - heights[column]) // 2
        if beacon_visible[column]:
            color = BEACON_COLOR
        else:
            shade = 0.5 + 0.5 * _column_fill(nearest[column:column + 1], settings.near)[0]
            color = OBSTACLE_PALETTE[hue[column] % len(OBSTACLE_PALETTE)] * shade
        image[:, top:top + heights[column], column] = color[:, None]
    return image


# --------------------------------------------------------------------------- environment

class NavEnv:
    """One navigation environment owning its RNG stream and frame history."""

    def __init__(self, settings: ArenaSettings, frame_stack: int, seed: int) -> None:
        self.settings = settings
        self.frame_stack = frame_stack
        self.rng = np.random.default_rng(seed)
        self.arena: Optional[Arena] = None
        self.state: Optional[AgentState] = None
        self.d_init = 0.0
        self.d_prev = 0.0
        self._rgb: Deque[np.ndarray] = deque(maxlen=frame_stack)
        self._depth: Deque[np.ndarray] = deque(maxlen=frame_stack)
        self.done = True

    def reset(self, seed: Optional[int] = None) -> Tuple[AgentState, np.ndarray, PrivilegedState]:
        """Sample a new episode; the frame history is warm-filled with the first frame."""
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.arena, start = sample_arena(self.settings, self.rng)
        heading = float(self.rng.uniform(-math.pi, math.pi))
        self.state = AgentState(position=start, heading=heading)
        self.d_init = goal_distance(start, self.arena)
        self.d_prev = self.d_init
        rgb = render_rgb(self.state, self.arena, self.settings)
        depth = depth_profile(self.state, self.arena, self.settings)
        self._rgb.clear()
        self._depth.clear()
        for _ in range(self.frame_stack):
            self._rgb.append(rgb)
            self._depth.append(depth)
        self.done = False
        return self.state.copy(), self.rgb_stack(), self.privileged()

    def step(self, action) -> Tuple[AgentState, StepOutcome]:
        """Advance one ``dt`` under the clamped body-frame command ``(v_x, v_y, ω_z)``."""
        if self.done or self.state is None:
            raise ContractError("step() called on a finished episode; call reset() first")
        command = clamp_action(action, self.settings.u_max)
        state = self.state
        state.heading = wrap_angle(state.heading + command[2] * self.settings.dt)
        state.position = state.position + rotation(state.heading) @ command[:2] * self.settings.dt
        state.velocity = command[:2].copy()
        state.yaw_rate = float(command[2])
        state.steps += 1

        d_t = goal_distance(state.position, self.arena)
        if d_t <= self.arena.goal_radius:
            cause = CAUSE_GOAL
        elif in_collision(state.position, self.arena):
            cause = CAUSE_COLLISION
        elif state.steps >= self.settings.max_steps:
            cause = CAUSE_TIMEOUT
        else:
            cause = CAUSE_NONE
        outcome = StepOutcome(0.0, cause != CAUSE_NONE, cause, self.d_init, d_t)
        outcome.reward = reward_fn(self.d_prev, outcome, self.settings.max_steps, self.settings.progress_reward)
        self.d_prev = d_t
        self.done = outcome.terminal

        self._rgb.append(render_rgb(state, self.arena, self.settings))
        self._depth.append(depth_profile(state, self.arena, self.settings))
        return state.copy(), outcome

    def rgb_stack(self) -> np.ndarray:
        """Channel-concatenated (3·L)×H×W stack of the last L RGB frames."""
        return np.concatenate(list(self._rgb), axis=0)

    def latest_rgb(self) -> np.ndarray:
        return self._rgb[-1]

    def privileged(self) -> PrivilegedState:
        state = self.state
        goal = to_body(self.arena.goal - state.position, state.heading)
        obstacle = nearest_obstacle_vector(state.position, state.heading, self.arena)
        return PrivilegedState(
            depth_profiles=np.stack(list(self._depth)),
            velocity=np.array([state.velocity[0], state.velocity[1], 0.0]),
            angular=np.array([0.0, 0.0, state.yaw_rate]),
            orientation=np.array([math.cos(state.heading), math.sin(state.heading), 0.0]),
            delta_p=np.array([obstacle[0], obstacle[1], 0.0, goal[0], goal[1], 0.0]),
            image_size=self.settings.image_size,
        )

    def student_vector(self) -> np.ndarray:
        """Non-visual part of the student observation: velocity, yaw rate, orientation, goal vector."""
        p = self.privileged()
        return np.concatenate([p.velocity, p.angular, p.orientation, p.delta_p[3:]])


# --------------------------------------------------------------------------- reference policies

def scripted_action(state: AgentState, arena: Arena, settings: ArenaSettings, turn_gain: float = 2.0) -> np.ndarray:
    """Go-to-goal controller: yaw toward the goal and translate along the straight line to it."""
    to_goal = arena.goal - state.position
    distance = float(np.linalg.norm(to_goal))
    u_max = settings.u_max
    bearing = math.atan2(*to_body(to_goal, state.heading)[::-1])
    yaw_rate = float(np.clip(turn_gain * bearing, -u_max[2], u_max[2]))
    if distance == 0.0:
        return np.array([0.0, 0.0, yaw_rate])
    next_heading = state.heading + yaw_rate * settings.dt
    body = to_body(to_goal / distance, next_heading)
    speed = min(1.0 / max(abs(body[0]) / u_max[0], abs(body[1]) / u_max[1]), distance / settings.dt)
    return np.array([body[0] * speed, body[1] * speed, yaw_rate])


def random_action(rng: np.random.Generator, settings: ArenaSettings) -> np.ndarray:
    return rng.uniform(-settings.u_max, settings.u_max)
