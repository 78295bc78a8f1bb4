"""Deterministic scene construction with a flat-shaded 2.5D sprite renderer.

The oracle ``check_constraint`` reads the object list, never pixels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .env_paint import RangeError
from .instructions import COLORS, SHAPES, SIZES, Constraint

CANVAS = 64
FLAGS = ("add_new", "change_previous", "no_op")
COMPONENTS = ("flag", "location", "shape", "size", "color")

PALETTE = {
    "gray": (87, 87, 87),
    "red": (173, 35, 35),
    "blue": (42, 75, 215),
    "green": (29, 105, 20),
    "brown": (129, 74, 25),
    "purple": (129, 38, 192),
    "cyan": (41, 208, 208),
    "yellow": (255, 238, 51),
}
BACKGROUND = (0.8, 0.8, 0.8)
HALF_EXTENT = {"small": 4, "large": 7}


@dataclass(frozen=True)
class SceneObject:
    shape: str
    size: str
    color: str
    location: int  # flat cell index, row-major


@dataclass(frozen=True)
class SceneAction:
    location: Tuple[int, int]
    shape: str
    size: str
    color: str
    flag: str


@dataclass(frozen=True)
class SceneState:
    objects: Tuple[SceneObject, ...] = ()
    step_count: int = 0


def _rgb(name):
    return np.array(PALETTE[name], dtype=np.float64) / 255.0


def _sprite(shape: str, half: int, color: str) -> Tuple[np.ndarray, np.ndarray]:
    """(mask, rgb) of a sprite on a (2h+1)^2 patch centred on the object."""
    n = 2 * half + 1
    base = _rgb(color)
    yy, xx = np.mgrid[-half:half + 1, -half:half + 1]
    img = np.broadcast_to(base, (n, n, 3)).copy()
    if shape == "cube":
        mask = np.ones((n, n), dtype=bool)
        top = yy < -half // 2           # lit top face
        side = (xx > half // 2) & ~top  # shaded right face
        img[top] = np.minimum(base * 1.3 + 0.1, 1.0)
        img[side] = base * 0.6
    elif shape == "sphere":
        d2 = yy * yy + xx * xx
        mask = d2 <= half * half
        shade = 1.15 - 0.55 * d2 / (half * half)
        img = np.clip(base[None, None, :] * shade[..., None], 0.0, 1.0)
    elif shape == "cylinder":
        w = max(half - 1, 1)
        cap_h = max(half // 2, 1)
        body = (np.abs(xx) <= w) & (yy >= -half + cap_h)
        cap = (xx * xx) * (cap_h * cap_h) + ((yy + half - cap_h) ** 2) * (w * w) <= (w * cap_h) ** 2
        mask = body | cap
        img[body] = base * 0.8
        img[cap] = np.minimum(base * 1.25 + 0.05, 1.0)
    else:
        raise ValueError(f"unknown shape {shape}")
    return mask, img


class SceneEnv:
    domain = "scene"
    channels = 3

    def __init__(self, grid: int = 32, episode_length: int = 3):
        if not 1 <= grid <= CANVAS:
            raise ValueError(f"unsupported grid {grid}")
        self.grid = grid
        self.cells = grid * grid
        self.episode_length = episode_length
        self.arities = (len(FLAGS), self.cells, len(SHAPES), len(SIZES), len(COLORS))
        self._sprites = {}

    @property
    def action_space_size(self) -> int:
        return len(FLAGS) * self.cells * len(SHAPES) * len(SIZES) * len(COLORS)

    # -- action encoding ----------------------------------------------------
    def _check(self, a: SceneAction):
        if len(a.location) != 2 or not all(0 <= int(v) < self.grid for v in a.location):
            raise RangeError(f"location {a.location} outside {self.grid}x{self.grid} grid")
        if a.shape not in SHAPES or a.size not in SIZES or a.color not in COLORS or a.flag not in FLAGS:
            raise RangeError(f"bad scene action {a}")

    def encode_action(self, a: SceneAction) -> int:
        self._check(a)
        loc = int(a.location[0]) * self.grid + int(a.location[1])
        idx = FLAGS.index(a.flag) * self.cells + loc
        idx = idx * len(SHAPES) + SHAPES.index(a.shape)
        idx = idx * len(SIZES) + SIZES.index(a.size)
        return idx * len(COLORS) + COLORS.index(a.color)

    def decode_action(self, index: int) -> SceneAction:
        index = int(index)
        if not 0 <= index < self.action_space_size:
            raise RangeError(f"action index {index} outside [0, {self.action_space_size})")
        index, color = divmod(index, len(COLORS))
        index, size = divmod(index, len(SIZES))
        index, shape = divmod(index, len(SHAPES))
        flag, loc = divmod(index, self.cells)
        return SceneAction(divmod(loc, self.grid), SHAPES[shape], SIZES[size], COLORS[color], FLAGS[flag])

    def from_components(self, comp: Sequence[int]) -> SceneAction:
        flag, loc, shape, size, color = (int(c) for c in comp)
        return SceneAction(divmod(loc, self.grid), SHAPES[shape], SIZES[size], COLORS[color], FLAGS[flag])

    def to_components(self, a: SceneAction) -> Tuple[int, ...]:
        return (FLAGS.index(a.flag), int(a.location[0]) * self.grid + int(a.location[1]),
                SHAPES.index(a.shape), SIZES.index(a.size), COLORS.index(a.color))

    def to_fields(self, a: SceneAction) -> Tuple[int, ...]:
        """Five integers for the action-script format: location shape size color flag."""
        f, loc, sh, sz, co = self.to_components(a)
        return (loc, sh, sz, co, f)

    def from_fields(self, fields: Sequence[int]) -> SceneAction:
        loc, sh, sz, co, f = (int(v) for v in fields)
        if not (0 <= loc < self.cells and 0 <= sh < 3 and 0 <= sz < 2 and 0 <= co < 8 and 0 <= f < 3):
            raise RangeError(f"bad scene action fields {fields}")
        return self.from_components((f, loc, sh, sz, co))

    # -- dynamics -----------------------------------------------------------
    def reset(self) -> SceneState:
        return SceneState((), 0)

    def step(self, state: SceneState, action: SceneAction) -> SceneState:
        self._check(action)
        objs = state.objects
        obj = SceneObject(action.shape, action.size, action.color,
                          int(action.location[0]) * self.grid + int(action.location[1]))
        if action.flag == "add_new":
            objs = objs + (obj,)
        elif action.flag == "change_previous" and objs:
            objs = objs[:-1] + (obj,)
        return SceneState(objs, state.step_count + 1)

    def cell_pixel(self, loc: int) -> Tuple[int, int]:
        r, c = divmod(loc, self.grid)
        s = CANVAS / self.grid
        return int((r + 0.5) * s), int((c + 0.5) * s)

    def _sprite(self, obj: SceneObject):
        key = (obj.shape, obj.size, obj.color)
        if key not in self._sprites:
            self._sprites[key] = _sprite(obj.shape, HALF_EXTENT[obj.size], obj.color)
        return self._sprites[key]

    def render(self, state: SceneState) -> np.ndarray:
        img = np.empty((CANVAS, CANVAS, 3), dtype=np.float64)
        img[:] = BACKGROUND
        # back-to-front by grid row; stable sort keeps insertion order within a row
        order = sorted(range(len(state.objects)), key=lambda i: state.objects[i].location // self.grid)
        for i in order:
            obj = state.objects[i]
            mask, spr = self._sprite(obj)
            h = mask.shape[0] // 2
            cy, cx = self.cell_pixel(obj.location)
            y0, x0 = cy - h, cx - h
            ys0, xs0 = max(y0, 0), max(x0, 0)
            ys1, xs1 = min(y0 + mask.shape[0], CANVAS), min(x0 + mask.shape[1], CANVAS)
            m = mask[ys0 - y0:ys1 - y0, xs0 - x0:xs1 - x0]
            region = img[ys0:ys1, xs0:xs1]
            region[m] = spr[ys0 - y0:ys1 - y0, xs0 - x0:xs1 - x0][m]
        return np.clip(img, 0.0, 1.0).astype(np.float32)

    def render_object(self, obj: Optional[SceneObject]) -> np.ndarray:
        return self.render(SceneState((obj,) if obj is not None else (), 0))

    def run(self, actions, state: SceneState = None) -> SceneState:
        state = self.reset() if state is None else state
        for a in actions:
            state = self.step(state, a)
        return state


def object_matches(obj: SceneObject, c: Constraint) -> bool:
    if obj.shape != c.shape:
        return False
    if c.color is not None and obj.color != c.color:
        return False
    if c.size is not None and obj.size != c.size:
        return False
    return True


def check_constraint(state: SceneState, c: Constraint) -> bool:
    """True iff some object satisfies every field the constraint fixes."""
    return any(object_matches(o, c) for o in state.objects)
