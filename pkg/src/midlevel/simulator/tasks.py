"""Agent dynamics, raycast observations and the three downstream tasks."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import raycast
from .geodesic import distance_field
from .world import BuildingMap, free_space_connected

PLANNING = "planning"
EXPLORATION = "exploration"
VISUAL_TARGET = "visual_target"
TASKS = (PLANNING, EXPLORATION, VISUAL_TARGET)
REWARD_VARIANTS = ("dense", "sparse")
DEFAULT_MAX_STEPS = {PLANNING: 500, EXPLORATION: 1000, VISUAL_TARGET: 400}

TURN_LEFT, TURN_RIGHT, MOVE_FORWARD = 0, 1, 2
ACTIONS = ("turn_left", "turn_right", "move_forward")

_PATTERN_BASE = 0.3 + 0.5 * ((np.arange(16) * 7) % 16) / 15.0
_PATTERN_FREQ = 0.5 + 0.5 * ((np.arange(16) * 5) % 8)
_PATTERN_PHASE = 0.7 * np.arange(16)
_FALLOFF = 0.1


class EpisodeFinished(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskConfig:
    bonus: float = 10.0
    living_penalty: float = 0.01
    progress_scale: float = 1.0
    collision_penalty: float = 0.1
    exploration_scale: float = 0.1
    success_radius: float = 0.5
    step_length: float = 0.25
    turn_degrees: int = 10
    clearance: float = 0.05
    fov_degrees: float = 90.0
    width: int = 64
    max_range: float = 10.0
    scanner_range: float = 1.5
    ledger_cell: float = 1.0
    bitmap_size: int = 16
    min_goal_distance: float = 1.4
    max_goal_distance: float = 15.0


@dataclass(frozen=True)
class AgentState:
    position: tuple[float, float]
    heading: float
    building: BuildingMap
    step_count: int = 0
    done: bool = False


@dataclass(frozen=True)
class EpisodeSpec:
    task: str
    building_id: int
    start_pose: tuple[float, float, float]
    goal: Optional[tuple[float, float]]
    max_steps: int
    reward_variant: str = "dense"
    seed: int = 0
    config: TaskConfig = field(default_factory=TaskConfig)


@dataclass
class Observation:
    texture_strip: np.ndarray
    depth_strip: np.ndarray
    semantic_strip: np.ndarray
    side_channel: np.ndarray


@dataclass
class StepEvent:
    reward: float = 0.0
    done: bool = False
    collision: bool = False
    newly_revealed: int = 0
    success: bool = False


class OccupancyLedger:
    """Coarse ground cells uncovered by the exploration scanner."""

    def __init__(self, building: BuildingMap, cell_size: float = 1.0):
        self.cell_size = cell_size
        w, h = building.extent
        self.grid = np.zeros((int(math.ceil(h / cell_size)), int(math.ceil(w / cell_size))), dtype=bool)

    @property
    def revealed(self) -> set[tuple[int, int]]:
        return {(int(r), int(c)) for r, c in zip(*np.nonzero(self.grid))}

    def __len__(self) -> int:
        return int(self.grid.sum())

    def bitmap(self, size: int) -> np.ndarray:
        rows, cols = self.grid.shape
        f = max(1, math.ceil(max(rows, cols) / size))
        out = np.zeros((size, size))
        for r, c in zip(*np.nonzero(self.grid)):
            out[r // f, c // f] = 1.0
        return out.ravel()


def _ray_offsets(width: int, fov: float) -> np.ndarray:
    key = (width, fov)
    out = _OFFSETS.get(key)
    if out is None:
        out = _OFFSETS[key] = (width // 2 - np.arange(width)) * (fov / width)
    return out


_OFFSETS: dict = {}


def ray_angles(heading: float, cfg: TaskConfig) -> np.ndarray:
    """Ray directions in radians; ray ``width // 2`` points exactly along the heading."""
    return np.deg2rad(heading + _ray_offsets(cfg.width, cfg.fov_degrees))


def texture_value(pattern, distance, lateral):
    """Rendered intensity of a wall with the given pattern id at a hit point."""
    pattern = np.asarray(pattern)
    albedo = _PATTERN_BASE[pattern] * (
        0.6 + 0.4 * np.sin(2 * np.pi * _PATTERN_FREQ[pattern] * lateral + _PATTERN_PHASE[pattern]))
    return albedo / (1.0 + _FALLOFF * np.asarray(distance))


def _goal_field(building: BuildingMap, goal) -> np.ndarray:
    cache = building._cache.setdefault("goal_fields", OrderedDict())
    key = building.cell_of(goal)
    hit = cache.get(key)
    if hit is None:
        hit = distance_field(building, key)
        cache[key] = hit
        if len(cache) > 32:
            cache.popitem(last=False)
    return hit


def goal_distance(state: AgentState, spec: EpisodeSpec) -> float:
    return float(_goal_field(state.building, spec.goal)[state.building.cell_of(state.position)])


def _side_channel(state: AgentState, spec: EpisodeSpec, ledger: Optional[OccupancyLedger]):
    if spec.task == PLANNING:
        dx = spec.goal[0] - state.position[0]
        dy = spec.goal[1] - state.position[1]
        r = math.hypot(dx, dy)
        theta = math.atan2(dy, dx) - math.radians(state.heading)
        return np.array([r, math.cos(theta), math.sin(theta)])
    if spec.task == EXPLORATION:
        if ledger is None:
            return np.zeros(spec.config.bitmap_size**2)
        return ledger.bitmap(spec.config.bitmap_size)
    return np.zeros(0)


def render(state: AgentState, spec: EpisodeSpec, ledger: Optional[OccupancyLedger] = None) -> Observation:
    cfg = spec.config
    b = state.building
    depth, semantic, texture = raycast.render_strips(
        b.occupancy, b.semantic, b.texture, b.cell_size, state.position[0], state.position[1],
        ray_angles(state.heading, cfg), cfg.max_range,
        _PATTERN_BASE, _PATTERN_FREQ, _PATTERN_PHASE, _FALLOFF)
    return Observation(texture, depth, semantic, _side_channel(state, spec, ledger))


def _move(state: AgentState, action: int, cfg: TaskConfig) -> tuple[AgentState, bool]:
    if action == TURN_LEFT:
        return AgentState(state.position, float((state.heading + cfg.turn_degrees) % 360),
                          state.building, state.step_count), False
    if action == TURN_RIGHT:
        return AgentState(state.position, float((state.heading - cfg.turn_degrees) % 360),
                          state.building, state.step_count), False
    if action != MOVE_FORWARD:
        raise ValueError(f"unknown action {action!r}")
    a = math.radians(state.heading)
    x, y = state.position
    if _blocked(state.building, x, y, a, cfg):
        return state, True
    nx = x + cfg.step_length * math.cos(a)
    ny = y + cfg.step_length * math.sin(a)
    return AgentState((nx, ny), state.heading, state.building, state.step_count), False


def _blocked(b: BuildingMap, x: float, y: float, a: float, cfg: TaskConfig) -> bool:
    reach = cfg.step_length + cfg.clearance
    dist, rows, _, _ = raycast.cast_rays(b.occupancy, b.cell_size, x, y, np.array([a]), reach)
    return bool(rows[0] >= 0 or dist[0] < reach)


def planning_reward(prev: AgentState, next_state: AgentState, spec: EpisodeSpec,
                    collision: bool = False) -> StepEvent:
    cfg = spec.config
    d_next = goal_distance(next_state, spec)
    success = d_next <= cfg.success_radius
    reward = -cfg.living_penalty
    if spec.reward_variant == "dense":
        if success:
            d_next = 0.0
        reward += cfg.progress_scale * (goal_distance(prev, spec) - d_next)
        if collision:
            reward -= cfg.collision_penalty
    if success:
        reward += cfg.bonus
    return StepEvent(reward=reward, done=success, collision=collision, success=success)


def exploration_reward(state: AgentState, obs: Observation, ledger: OccupancyLedger,
                       spec: Optional[EpisodeSpec] = None) -> StepEvent:
    cfg = spec.config if spec is not None else TaskConfig()
    lengths = np.minimum(obs.depth_strip, cfg.scanner_range)
    new = raycast.reveal_cells(ledger.grid, ledger.cell_size, state.position[0], state.position[1],
                               ray_angles(state.heading, cfg), lengths)
    return StepEvent(reward=cfg.exploration_scale * new, newly_revealed=int(new))


def visual_target_reward(state: AgentState, spec: EpisodeSpec) -> StepEvent:
    cfg = spec.config
    dx = spec.goal[0] - state.position[0]
    dy = spec.goal[1] - state.position[1]
    if math.hypot(dx, dy) <= cfg.success_radius:
        return StepEvent(reward=cfg.bonus - cfg.living_penalty, done=True, success=True)
    return StepEvent(reward=-cfg.living_penalty)


def step(state: AgentState, action: int, spec: EpisodeSpec,
         ledger: Optional[OccupancyLedger] = None) -> tuple[AgentState, StepEvent]:
    """Advance one timestep. Exploration steps update ``ledger`` in place."""
    if state.done or state.step_count >= spec.max_steps:
        raise EpisodeFinished("step() called on a finished episode")
    moved, collision = _move(state, action, spec.config)
    nxt = AgentState(moved.position, moved.heading, moved.building, state.step_count + 1)
    if spec.task == PLANNING:
        event = planning_reward(state, nxt, spec, collision)
    elif spec.task == EXPLORATION:
        if ledger is None:
            raise ValueError("exploration needs an OccupancyLedger")
        event = exploration_reward(nxt, render(nxt, spec, None), ledger, spec)
    elif spec.task == VISUAL_TARGET:
        event = visual_target_reward(nxt, spec)
    else:
        raise ValueError(f"unknown task {spec.task!r}")
    event.collision = collision
    if nxt.step_count >= spec.max_steps:
        event.done = True
    if event.done:
        nxt = AgentState(nxt.position, nxt.heading, nxt.building, nxt.step_count, True)
    return nxt, event


# -- episode sampling -------------------------------------------------------

def _open_cells(building: BuildingMap) -> np.ndarray:
    cells = building._cache.get("open_cells")
    if cells is None:
        occ = building.occupancy
        blocked = occ.copy()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                blocked |= np.roll(np.roll(occ, dr, 0), dc, 1)
        cells = np.argwhere(~blocked)
        building._cache["open_cells"] = cells
    return cells


def _place_crate(building: BuildingMap, rng) -> tuple[BuildingMap, tuple[float, float]]:
    occ = building.occupancy
    for _ in range(200):
        r, c = (int(v) for v in rng.integers(1, np.array(occ.shape) - 3))
        if occ[r - 1:r + 3, c - 1:c + 3].any():
            continue
        cells = [(r, c), (r + 1, c), (r, c + 1), (r + 1, c + 1)]
        placed = building.with_crate(cells)
        if free_space_connected(placed.occupancy):
            cs = building.cell_size
            return placed, ((c + 1) * cs, (r + 1) * cs)
    raise RuntimeError(f"could not place crate in building {building.id}")


def place_crate(building: BuildingMap, crate_seed: int = 0) -> tuple[BuildingMap, tuple[float, float]]:
    """The building with its target crate; one fixed pose per (building, crate_seed)."""
    return _place_crate(building, np.random.default_rng([crate_seed, building.id, 0x4352]))


def sample_episode(building: BuildingMap, task: str, rng: np.random.Generator,
                   config: TaskConfig = TaskConfig(), reward_variant: str = "dense",
                   max_steps: Optional[int] = None, seed: int = 0,
                   crate: Optional[tuple] = None) -> tuple[EpisodeSpec, BuildingMap]:
    """Draw a start pose (and planning goal) for one episode.

    Visual-target episodes use ``crate`` (from ``place_crate``) when given,
    otherwise the crate for crate_seed 0; only the agent start is random.
    """
    max_steps = max_steps or DEFAULT_MAX_STEPS[task]
    world = building
    goal = None
    if task == VISUAL_TARGET:
        world, goal = crate if crate is not None else place_crate(building)
    cells = _open_cells(world)
    for _ in range(1000):
        start = tuple(int(v) for v in cells[rng.integers(len(cells))])
        heading = float(config.turn_degrees * rng.integers(0, 360 // config.turn_degrees))
        x, y = world.center_of(start)
        if task == PLANNING:
            field = distance_field(world, start)
            d = field[cells[:, 0], cells[:, 1]]
            ok = np.flatnonzero((d >= config.min_goal_distance) & (d <= config.max_goal_distance))
            if not len(ok):
                continue
            goal = world.center_of(tuple(cells[ok[rng.integers(len(ok))]]))
        elif task == VISUAL_TARGET:
            if math.hypot(goal[0] - x, goal[1] - y) < 1.5:
                continue
        spec = EpisodeSpec(task, building.id, (x, y, heading), goal, max_steps,
                           reward_variant, seed, config)
        return spec, world
    raise RuntimeError(f"could not sample a {task} episode in building {building.id}")


def shortest_path_length(spec: EpisodeSpec, world: BuildingMap) -> float:
    """Geodesic l_i from the start to the episode goal (nan for exploration)."""
    start = world.cell_of(spec.start_pose[:2])
    if spec.task == PLANNING:
        return float(_goal_field(world, spec.goal)[start])
    if spec.task == VISUAL_TARGET:
        field = distance_field(world, start)
        rows, cols = np.nonzero(np.isfinite(field))
        cs = world.cell_size
        near = np.hypot((cols + 0.5) * cs - spec.goal[0], (rows + 0.5) * cs - spec.goal[1]) \
            <= spec.config.success_radius
        return float(field[rows[near], cols[near]].min())
    return float("nan")


class NavEnv:
    """Stateful wrapper that samples episodes over a pool of buildings."""

    def __init__(self, buildings, task: str, config: TaskConfig = TaskConfig(),
                 reward_variant: str = "dense", max_steps: Optional[int] = None,
                 crate_seed: int = 0):
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        if reward_variant not in REWARD_VARIANTS:
            raise ValueError(f"unknown reward variant {reward_variant!r}")
        self.buildings = list(buildings)
        self.crate_seed = crate_seed
        self._crates: dict = {}
        self.task = task
        self.config = config
        self.reward_variant = reward_variant
        self.max_steps = max_steps
        self.state: Optional[AgentState] = None
        self.spec: Optional[EpisodeSpec] = None
        self.ledger: Optional[OccupancyLedger] = None
        self.world: Optional[BuildingMap] = None

    def reset(self, rng: np.random.Generator, building_index: Optional[int] = None) -> Observation:
        if building_index is None:
            building_index = int(rng.integers(len(self.buildings)))
        building = self.buildings[building_index % len(self.buildings)]
        seed = int(rng.integers(2**31))
        crate = None
        if self.task == VISUAL_TARGET:
            crate = self._crates.get(building.id)
            if crate is None:
                crate = self._crates[building.id] = place_crate(building, self.crate_seed)
        self.spec, self.world = sample_episode(building, self.task, rng, self.config,
                                               self.reward_variant, self.max_steps, seed, crate)
        x, y, h = self.spec.start_pose
        self.state = AgentState((x, y), h, self.world)
        self.ledger = OccupancyLedger(self.world, self.config.ledger_cell) \
            if self.task == EXPLORATION else None
        return render(self.state, self.spec, self.ledger)

    def step(self, action: int) -> tuple[Observation, StepEvent]:
        self.state, event = step(self.state, action, self.spec, self.ledger)
        return render(self.state, self.spec, self.ledger), event

    def shortest_path_length(self) -> float:
        return shortest_path_length(self.spec, self.world)
