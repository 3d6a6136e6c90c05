"""Depth-map preprocessing, focus masks and refocusing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .raster import as_depth


@dataclass(frozen=True)
class SLCurve:
    """Logistic remap ``1 / (1 + exp(-(x - center) * slope))``."""

    center: float = 0.5
    slope: float = 15.0

    def __post_init__(self):
        if not self.slope > 0:
            raise ValidationError(f"SL slope must be > 0, got {self.slope}")

    def __call__(self, x):
        return 1.0 / (1.0 + np.exp(-(np.asarray(x, dtype=np.float64) - self.center) * self.slope))

    def derivative(self, x):
        s = self(x)
        return self.slope * s * (1.0 - s)


DEFAULT_SL = SLCurve()


def preprocess_depth(d: np.ndarray, curve: SLCurve = DEFAULT_SL) -> np.ndarray:
    """Square the depth values, then push them through the SL curve."""
    d = as_depth(d)
    return curve(d * d)


def preprocess_depth_grad(d: np.ndarray, upstream: np.ndarray, curve: SLCurve = DEFAULT_SL) -> np.ndarray:
    """Adjoint of :func:`preprocess_depth` at ``d``."""
    d = np.asarray(d, dtype=np.float64)
    return np.asarray(upstream, dtype=np.float64) * curve.derivative(d * d) * 2.0 * d


def focus_mask(d: np.ndarray, t: float = 0.6) -> np.ndarray:
    """1 where ``d >= t`` (in focus), 0 elsewhere."""
    if not 0.0 < t < 1.0:
        raise ValidationError(f"focus threshold must lie in (0, 1), got {t}")
    d = as_depth(d)
    return (d >= t).astype(np.float64)


def refocus_map(d: np.ndarray, m) -> np.ndarray:
    """``|m - d|``: m = 0 keeps the foreground in focus, m = 1 the background."""
    d = as_depth(d)
    m_arr = np.asarray(m, dtype=np.float64)
    if m_arr.ndim == 0:
        if not 0.0 <= float(m_arr) <= 1.0:
            raise ValidationError(f"focus level must lie in [0, 1], got {float(m_arr)}")
    else:
        m_arr = as_depth(m_arr, "focus map")
        if m_arr.shape != d.shape:
            raise ValidationError(f"focus map shape {m_arr.shape} != depth shape {d.shape}")
    return np.abs(m_arr - d)
