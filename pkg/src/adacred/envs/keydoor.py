"""Pixel key-door gridworld with an animated distractor strip.

The playfield is ``rows x cols`` cells of ``cell_px`` pixels. Below it sit
``distractor_rows`` rows of cells filled with per-step uniform noise that
carries no reward information. Inside a cell the agent, key and door use
disjoint pixel blocks, so every object stays visible when they share a
cell. The key vanishes once picked up. Reaching the door with the key, at
least ``delay`` steps after the pickup, pays +1 once and ends the episode
(the state becomes absorbing for the rest of the fixed-length rollout).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..errors import SpecError, StateError

UP, DOWN, LEFT, RIGHT = range(4)
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

AGENT_VALUE, KEY_VALUE, DOOR_VALUE = 1.0, 0.7, 0.4


@dataclass(frozen=True)
class GridWorldSpec:
    rows: int = 3
    cols: int = 4
    cell_px: int = 7
    key: tuple = (0, 0)
    door: tuple = (2, 3)
    agent_start: tuple | None = None  # None: uniform over free cells per episode
    distractor_rows: int = 1
    distractors: bool = True
    episode_length: int = 30
    delay: int = 5
    frame_stack: int = 1
    frame_skip: int = 1
    n_actions: int = 4

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.cell_px < 5:
            raise SpecError("grid needs >= 1 row/col and cells of >= 5 pixels")
        for name in ("key", "door"):
            r, c = getattr(self, name)
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise SpecError(f"{name} position {(r, c)} outside the playfield")
        if tuple(self.key) == tuple(self.door):
            raise SpecError("key and door must occupy different cells")
        if self.frame_stack < 1 or self.frame_skip < 1:
            raise SpecError("frame_stack and frame_skip must be >= 1")

    @property
    def height(self) -> int:
        return (self.rows + self.distractor_rows) * self.cell_px

    @property
    def width(self) -> int:
        return self.cols * self.cell_px

    @property
    def obs_shape(self) -> tuple:
        return (self.frame_stack, self.height, self.width)

    def distractor_slice(self):
        """Pixel rows covered by the distractor strip."""
        return slice(self.rows * self.cell_px, self.height)

    def free_cells(self):
        return [(r, c) for r in range(self.rows) for c in range(self.cols)
                if (r, c) not in (tuple(self.key), tuple(self.door))]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "GridWorldSpec":
        doc = dict(doc)
        for name in ("key", "door", "agent_start"):
            if doc.get(name) is not None:
                doc[name] = tuple(doc[name])
        return cls(**doc)

    def with_(self, **kw) -> "GridWorldSpec":
        return replace(self, **kw)


@dataclass
class GridState:
    agent: tuple
    has_key: bool = False
    key_step: int = -1
    done: bool = False
    t: int = 0
    distractor_seed: int = 0
    events: list = field(default_factory=list)


def _blocks(cell_px):
    """Pixel sub-blocks (row slice, col slice) for agent, key and door inside a cell."""
    q = cell_px
    mid = q // 2
    agent = (slice(mid - 1, mid + 2), slice(mid - 1, mid + 2))
    key = (slice(0, 2), slice(0, 2))
    door = (slice(q - 2, q), slice(q - 2, q))
    return agent, key, door


def render_gridworld(spec: GridWorldSpec, state: GridState) -> np.ndarray:
    """Single grayscale frame, shape (1, H, W), values in [0, 1]."""
    r, c = state.agent
    if not (0 <= r < spec.rows and 0 <= c < spec.cols):
        raise StateError(f"agent position {state.agent} out of bounds")
    q = spec.cell_px
    frame = np.zeros((spec.height, spec.width), dtype=np.float32)
    agent_b, key_b, door_b = _blocks(q)

    def paint(cell, block, value):
        y0, x0 = cell[0] * q, cell[1] * q
        frame[y0 + block[0].start:y0 + block[0].stop, x0 + block[1].start:x0 + block[1].stop] = value

    paint(spec.door, door_b, DOOR_VALUE)
    if not state.has_key:
        paint(spec.key, key_b, KEY_VALUE)
    paint(state.agent, agent_b, AGENT_VALUE)
    if spec.distractors and spec.distractor_rows:
        noise_rng = np.random.default_rng([state.distractor_seed, state.t])
        region = frame[spec.distractor_slice()]
        region[...] = noise_rng.random(region.shape, dtype=np.float32)
    return frame[None]


class KeyDoorEnv:
    env_id = "keydoor"

    def __init__(self, spec: GridWorldSpec | None = None):
        self.spec = spec or GridWorldSpec()
        self.n_actions = self.spec.n_actions

    def reset(self, seed: int):
        rng = np.random.default_rng(seed)
        spec = self.spec
        if spec.agent_start is not None:
            start = tuple(spec.agent_start)
        else:
            cells = spec.free_cells()
            start = cells[rng.integers(len(cells))]
        self.state = GridState(agent=start, distractor_seed=int(rng.integers(2 ** 31)))
        self._frames = [render_gridworld(spec, self.state)] * spec.frame_stack
        return self._obs(), self._info()

    def _obs(self):
        return np.concatenate(self._frames[-self.spec.frame_stack:], axis=0)

    def _info(self):
        s = self.state
        return {"agent": s.agent, "has_key": s.has_key, "done": s.done, "t": s.t,
                "key_step": s.key_step}

    def _move(self, a: int):
        s, spec = self.state, self.spec
        reward = 0.0
        if s.done:
            return reward
        dr, dc = MOVES[a]
        r = min(max(s.agent[0] + dr, 0), spec.rows - 1)
        c = min(max(s.agent[1] + dc, 0), spec.cols - 1)
        s.agent = (r, c)
        if not s.has_key and s.agent == tuple(spec.key):
            s.has_key = True
            s.key_step = s.t
            s.events.append(("key", s.t))
        if s.has_key and s.agent == tuple(spec.door) and s.t - s.key_step >= spec.delay:
            reward = 1.0
            s.done = True
            s.events.append(("door", s.t))
        return reward

    def step(self, a: int):
        """Apply ``a`` for ``frame_skip`` ticks; returns (obs, reward, done, info).

        Event times refer to the step index at which the action was taken.
        """
        total = 0.0
        for _ in range(self.spec.frame_skip):
            total += self._move(a)
        self.state.t += 1
        self._frames.append(render_gridworld(self.spec, self.state))
        self._frames = self._frames[-self.spec.frame_stack:]
        return self._obs(), total, self.state.done, self._info()


def manhattan(a, b):
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def scripted_action(spec: GridWorldSpec, info: dict) -> int:
    """Shortest-path policy: key first, then door; rows before columns.

    While waiting out ``delay`` on the door cell it bumps into an adjacent
    wall when one exists. After the episode ends it emits UP.
    """
    if info["done"]:
        return UP
    agent = tuple(info["agent"])
    target = tuple(spec.door) if info["has_key"] else tuple(spec.key)
    if agent == target:
        r, c = agent
        for a, (dr, dc) in MOVES.items():
            if not (0 <= r + dr < spec.rows and 0 <= c + dc < spec.cols):
                return a
        return UP
    if agent[0] != target[0]:
        return DOWN if target[0] > agent[0] else UP
    return RIGHT if target[1] > agent[1] else LEFT
