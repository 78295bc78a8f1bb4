"""Procedurally drawn digit glyphs: a hermetic stand-in for MNIST.

These are NOT MNIST. Each digit is a fixed set of strokes in a unit box,
randomly warped (rotation, shear, scale, translation, point jitter) and
rasterized with a random pen width at 64x64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIZE = 64


@dataclass
class LabeledDigits:
    images: np.ndarray   # (N, 64, 64, 1) float32 in [0, 1]
    labels: np.ndarray   # (N,) int64 in 0..9
    source: str = "synthetic-glyphs"

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "LabeledDigits":
        return LabeledDigits(self.images[idx], self.labels[idx], self.source)


def _ellipse(cx, cy, rx, ry, a0=0.0, a1=2 * np.pi, n=24):
    t = np.linspace(a0, a1, n)
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _quad(p0, p1, p2, n=16):
    t = np.linspace(0, 1, n)[:, None]
    p0, p1, p2 = (np.asarray(p, dtype=float) for p in (p0, p1, p2))
    return (1 - t) ** 2 * p0 + 2 * t * (1 - t) * p1 + t ** 2 * p2


def _line(*pts):
    return np.asarray(pts, dtype=float)


# (x, y) in a unit box, y pointing down
STROKES = {
    0: [_ellipse(0.5, 0.5, 0.28, 0.4)],
    1: [_line((0.38, 0.22), (0.52, 0.1), (0.52, 0.9))],
    2: [np.concatenate([_quad((0.25, 0.3), (0.45, -0.05), (0.72, 0.28)),
                        _quad((0.72, 0.28), (0.6, 0.55), (0.25, 0.88))]),
        _line((0.25, 0.88), (0.78, 0.88))],
    3: [_quad((0.25, 0.14), (0.85, 0.12), (0.45, 0.48)),
        _quad((0.45, 0.48), (0.95, 0.72), (0.25, 0.86))],
    4: [_line((0.62, 0.9), (0.62, 0.1), (0.2, 0.64), (0.8, 0.64))],
    5: [_line((0.75, 0.12), (0.32, 0.12), (0.3, 0.45)),
        _quad((0.3, 0.45), (0.95, 0.45), (0.25, 0.88))],
    6: [_quad((0.68, 0.1), (0.25, 0.3), (0.3, 0.68)), _ellipse(0.5, 0.68, 0.2, 0.2)],
    7: [_line((0.22, 0.12), (0.78, 0.12), (0.42, 0.9))],
    8: [_ellipse(0.5, 0.3, 0.19, 0.18), _ellipse(0.5, 0.69, 0.24, 0.21)],
    9: [_ellipse(0.5, 0.32, 0.2, 0.2), _quad((0.7, 0.32), (0.7, 0.7), (0.6, 0.9))],
}


def _disc(r):
    R = int(np.ceil(r))
    return np.array([(dy, dx) for dy in range(-R, R + 1) for dx in range(-R, R + 1)
                     if dy * dy + dx * dx <= r * r], dtype=np.int64)


_PENS = {w: _disc(w / 2.0) for w in (3, 4, 5)}


def _densify(pts, step=0.5):
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(int(np.ceil(np.hypot(*(b - a)) / step)), 1)
        t = np.linspace(0, 1, n + 1)[1:, None]
        out.append(a + t * (b - a))
    return np.concatenate(out)


def draw_glyph(label: int, rng: np.random.Generator) -> np.ndarray:
    ang = np.deg2rad(rng.uniform(-12, 12))
    shear = rng.uniform(-0.25, 0.25)
    sx, sy = rng.uniform(0.7, 1.0) * 44, rng.uniform(0.8, 1.0) * 46
    rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    A = rot @ np.array([[1.0, shear], [0.0, 1.0]]) @ np.diag([sx, sy])
    shift = np.array([32.0, 32.0]) + rng.uniform(-4, 4, size=2)
    pen = _PENS[int(rng.choice([3, 4, 5]))]
    img = np.zeros((SIZE, SIZE), dtype=np.float32)
    for stroke in STROKES[label]:
        p = stroke + rng.normal(0, 0.02, size=stroke.shape)
        p = (p - 0.5) @ A.T + shift
        p = np.floor(_densify(p)).astype(np.int64)
        pix = (p[:, None, ::-1] + pen[None]).reshape(-1, 2)   # (y, x)
        ok = (pix >= 0).all(1) & (pix < SIZE).all(1)
        img[pix[ok, 0], pix[ok, 1]] = 1.0
    return img


def synthetic_digits(count: int, seed: int) -> LabeledDigits:
    """``count`` glyphs with labels cycling 0..9, deterministic in ``seed``."""
    labels = np.arange(count, dtype=np.int64) % 10
    images = np.stack([draw_glyph(int(l), np.random.default_rng([seed, i])) for i, l in enumerate(labels)])
    return LabeledDigits(images[..., None], labels)
