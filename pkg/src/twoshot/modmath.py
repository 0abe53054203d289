"""Pure algebra of video-conditioned modulation and guidance combination.

Operates on plain float64 arrays shaped (tokens, features). The modulation is
a gated residual: normalize the block activation, scale and shift it with
per-feature vectors, gate the result, and add it back to the input. A zero
gate makes the whole transform an exact identity, which is what lets the
conditioned pathway start as a no-op.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EPS = 1e-5


@dataclass(frozen=True)
class ModulationTriple:
    """Per-feature shift, scale, and gate vectors applied to one block."""

    shift: np.ndarray
    scale: np.ndarray
    gate: np.ndarray

    def __post_init__(self):
        shapes = {self.shift.shape, self.scale.shape, self.gate.shape}
        if len(shapes) != 1 or self.shift.ndim != 1:
            raise ValueError(f"modulation vectors must share one 1-D shape, got {shapes}")
        for name, vec in (("shift", self.shift), ("scale", self.scale), ("gate", self.gate)):
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"{name} vector contains non-finite entries")

    @property
    def dim(self) -> int:
        return int(self.shift.shape[0])


def _as_activation(x: np.ndarray) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"activation must be 2-D (tokens, features), got shape {arr.shape}")
    return arr


def layer_normalize(x: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Per-token normalization: zero mean, unit variance, no learned affine."""
    arr = _as_activation(x)
    if arr.shape[1] < 2:
        raise ValueError("layer_normalize needs a feature dimension of at least 2")
    mean = arr.mean(axis=1, keepdims=True)
    var = arr.var(axis=1, keepdims=True)
    return (arr - mean) / np.sqrt(var + eps)


def apply_video_modulation(
    x: np.ndarray, m: ModulationTriple, eps: float = DEFAULT_EPS
) -> np.ndarray:
    """Gated residual modulation of a block activation.

    The normalized activation is scaled by (1 + scale), shifted, gated
    per feature, and added back onto the raw input. With a zero gate the
    output equals the input bit for bit.
    """
    arr = _as_activation(x)
    if arr.shape[1] != m.dim:
        raise ValueError(
            f"feature dim mismatch: activation has {arr.shape[1]}, modulation has {m.dim}"
        )
    normalized = layer_normalize(arr, eps)
    modulated = normalized * (1.0 + m.scale) + m.shift
    return arr + m.gate * modulated


def cfg_combine(uncond: np.ndarray, cond: np.ndarray, guidance: float) -> np.ndarray:
    """Guidance extrapolation between unconditioned and conditioned outputs.

    Computes ``uncond + guidance * (cond - uncond)``. The endpoints are exact
    by construction: guidance 0 returns the unconditioned input unchanged and
    guidance 1 the conditioned one, so sweeping the scale spans "no visual
    conditioning" through "pure visual conditioning" and beyond.
    """
    a = np.asarray(uncond, dtype=np.float64)
    b = np.asarray(cond, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if guidance == 0.0:
        return a.copy()
    if guidance == 1.0:
        return b.copy()
    return a + guidance * (b - a)
