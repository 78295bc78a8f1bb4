"""Deterministic stroke painting on a grayscale canvas.

Strokes are quadratic Bezier curves from the current brush position through a
control cell to an end cell. Curve samples are computed in exact integer
arithmetic and stamped with a fixed disc mask, so a canvas is a pure function
of the action sequence on every platform.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

CANVAS = 64
PRESSURE_LEVELS = 10
BRUSH_SIZES = 4
BRUSH_WIDTHS = (1, 2, 3, 5)
BEZIER_SAMPLES = 64

# decode order of the policy heads; action tuples use this order too
COMPONENTS = ("flag", "end", "control", "size", "pressure")


class RangeError(ValueError):
    pass


def _disc(width: int) -> np.ndarray:
    r = width / 2.0
    R = int(np.ceil(r))
    return np.array([(dy, dx) for dy in range(-R, R + 1) for dx in range(-R, R + 1)
                     if dy * dy + dx * dx <= r * r], dtype=np.int64)


BRUSH_MASKS = tuple(_disc(w) for w in BRUSH_WIDTHS)


@dataclass(frozen=True)
class PaintAction:
    end: Tuple[int, int]
    control: Tuple[int, int]
    pressure: int
    size: int
    flag: int


@dataclass(frozen=True)
class CanvasState:
    canvas: np.ndarray           # (64, 64) float32 in [0, 1]
    brush: Tuple[float, float]   # (y, x) in pixel coordinates
    step_count: int = 0


class PaintEnv:
    domain = "mnist"
    channels = 1

    def __init__(self, grid: int = 32, episode_length: int = 10):
        if not 1 <= grid <= CANVAS:
            raise ValueError(f"unsupported grid {grid}")
        self.grid = grid
        self.cells = grid * grid
        self.episode_length = episode_length
        self.arities = (2, self.cells, self.cells, BRUSH_SIZES, PRESSURE_LEVELS)

    @property
    def action_space_size(self) -> int:
        return 2 * self.cells * self.cells * PRESSURE_LEVELS * BRUSH_SIZES

    # -- action encoding ----------------------------------------------------
    def _check(self, a: PaintAction):
        for cell in (a.end, a.control):
            if len(cell) != 2 or not all(0 <= int(v) < self.grid for v in cell):
                raise RangeError(f"cell {cell} outside {self.grid}x{self.grid} grid")
        if not 0 <= a.pressure < PRESSURE_LEVELS:
            raise RangeError(f"pressure {a.pressure}")
        if not 0 <= a.size < BRUSH_SIZES:
            raise RangeError(f"brush size {a.size}")
        if a.flag not in (0, 1):
            raise RangeError(f"flag {a.flag}")

    def _cell(self, rc) -> int:
        return int(rc[0]) * self.grid + int(rc[1])

    def encode_action(self, a: PaintAction) -> int:
        self._check(a)
        idx = a.flag * self.cells + self._cell(a.control)
        idx = idx * self.cells + self._cell(a.end)
        return (idx * PRESSURE_LEVELS + a.pressure) * BRUSH_SIZES + a.size

    def decode_action(self, index: int) -> PaintAction:
        index = int(index)
        if not 0 <= index < self.action_space_size:
            raise RangeError(f"action index {index} outside [0, {self.action_space_size})")
        index, size = divmod(index, BRUSH_SIZES)
        index, pressure = divmod(index, PRESSURE_LEVELS)
        index, end = divmod(index, self.cells)
        flag, control = divmod(index, self.cells)
        g = self.grid
        return PaintAction(divmod(end, g), divmod(control, g), pressure, size, flag)

    def from_components(self, comp: Sequence[int]) -> PaintAction:
        """Build an action from head outputs in ``COMPONENTS`` order."""
        flag, end, control, size, pressure = (int(c) for c in comp)
        g = self.grid
        return PaintAction(divmod(end, g), divmod(control, g), pressure, size, flag)

    def to_components(self, a: PaintAction) -> Tuple[int, ...]:
        return (a.flag, self._cell(a.end), self._cell(a.control), a.size, a.pressure)

    def to_fields(self, a: PaintAction) -> Tuple[int, ...]:
        """Five integers for the action-script format: end control pressure size flag."""
        return (self._cell(a.end), self._cell(a.control), a.pressure, a.size, a.flag)

    def from_fields(self, fields: Sequence[int]) -> PaintAction:
        end, control, pressure, size, flag = (int(v) for v in fields)
        if not (0 <= end < self.cells and 0 <= control < self.cells):
            raise RangeError(f"cell index outside grid: {fields}")
        g = self.grid
        a = PaintAction(divmod(end, g), divmod(control, g), pressure, size, flag)
        self._check(a)
        return a

    # -- dynamics -----------------------------------------------------------
    def reset(self) -> CanvasState:
        return CanvasState(np.zeros((CANVAS, CANVAS), dtype=np.float32),
                           (CANVAS / 2.0, CANVAS / 2.0), 0)

    def cell_center(self, rc) -> Tuple[float, float]:
        s = CANVAS / self.grid
        return ((int(rc[0]) + 0.5) * s, (int(rc[1]) + 0.5) * s)

    def stroke_pixels(self, p0, p1, p2, size: int) -> np.ndarray:
        """Integer (y, x) pixels covered by a stroke, clipped to the canvas."""
        g = self.grid
        u = np.array([[round(p[0] * g), round(p[1] * g)] for p in (p0, p1, p2)], dtype=np.int64)
        n = BEZIER_SAMPLES - 1
        k = np.arange(BEZIER_SAMPLES, dtype=np.int64)[:, None]
        num = (n - k) ** 2 * u[0] + 2 * k * (n - k) * u[1] + k ** 2 * u[2]
        centers = num // (n * n * g)
        pix = (centers[:, None, :] + BRUSH_MASKS[size][None, :, :]).reshape(-1, 2)
        ok = (pix >= 0).all(axis=1) & (pix < CANVAS).all(axis=1)
        return np.unique(pix[ok], axis=0)

    def step(self, state: CanvasState, action: PaintAction) -> CanvasState:
        self._check(action)
        end = self.cell_center(action.end)
        canvas = state.canvas
        if action.flag == 1:
            ctrl = self.cell_center(action.control)
            pix = self.stroke_pixels(state.brush, ctrl, end, action.size)
            canvas = canvas.copy()
            val = np.float32((action.pressure + 1) / PRESSURE_LEVELS)
            ys, xs = pix[:, 0], pix[:, 1]
            canvas[ys, xs] = np.maximum(canvas[ys, xs], val)
        return CanvasState(canvas, end, state.step_count + 1)

    def render(self, state: CanvasState) -> np.ndarray:
        return state.canvas[:, :, None].copy()

    def run(self, actions, state: CanvasState = None) -> CanvasState:
        state = self.reset() if state is None else state
        for a in actions:
            state = self.step(state, a)
        return state
