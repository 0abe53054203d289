"""Small numeric helpers shared by calibration and crop geometry."""

from __future__ import annotations

import numpy as np


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Return ``v`` scaled to unit Euclidean norm.

    Raises:
        ValueError: if ``v`` has zero norm (direction undefined).
    """
    arr = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return arr / norm


def linear_quantile(values: np.ndarray, q: float) -> float:
    """Empirical quantile with linear interpolation between order statistics.

    Matches the classic type-7 definition: for ``n`` sorted values the quantile
    sits at fractional rank ``q * (n - 1)``.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile level must be in [0, 1], got {q}")
    arr = np.sort(np.asarray(values, dtype=np.float64))
    if arr.size == 0:
        raise ValueError("quantile of an empty sequence is undefined")
    pos = q * (arr.size - 1)
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    if lo == hi:
        return float(arr[lo])
    frac = pos - lo
    return float(arr[lo] + frac * (arr[hi] - arr[lo]))


def format_float(x: float) -> str:
    """Shortest round-trip decimal form, used by every text artifact writer."""
    return repr(float(x))
