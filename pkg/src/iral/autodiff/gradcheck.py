"""Central finite differences, used as an independent oracle for ``backward``."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d arr by central differences; ``arr`` is perturbed in place and restored."""
    out = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = out.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        fp = f()
        flat[j] = orig - h
        fm = f()
        flat[j] = orig
        gflat[j] = (fp - fm) / (2 * h)
    return out


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error, safe when both sides vanish."""
    num = np.linalg.norm(np.ravel(a) - np.ravel(b))
    den = max(np.linalg.norm(np.ravel(a)), np.linalg.norm(np.ravel(b)), 1e-12)
    return float(num / den)


def max_rel_error(analytic: Sequence[np.ndarray], f: Callable[[], float],
                  arrays: Sequence[np.ndarray], h: float = 1e-5) -> float:
    return max(rel_error(g, numeric_grad(f, a, h)) for g, a in zip(analytic, arrays))
