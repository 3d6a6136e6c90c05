"""Independent slow reference implementations used as test oracles.

Nothing here imports debskit; every routine is written out with plain
loops so it shares no code path with the package.
"""

from __future__ import annotations

import math

import numpy as np


def disk_weights(k: int) -> np.ndarray:
    c = (k - 1) / 2
    w = np.zeros((k, k))
    for u in range(k):
        for v in range(k):
            if math.hypot(u - c, v - c) <= k / 2:
                w[u, v] = 1.0
    return w / w.sum()


def naive_convolve(x: np.ndarray, w: np.ndarray, boundary: str = "zero") -> np.ndarray:
    """Nested-loop correlation of an (H, W[, C]) array with a symmetric kernel."""
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, :, None]
    h, wd, ch = x.shape
    k = w.shape[0]
    r = k // 2
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(h):
        for j in range(wd):
            for c in range(ch):
                acc = 0.0
                for u in range(k):
                    for v in range(k):
                        y, z = i + u - r, j + v - r
                        if boundary == "replicate":
                            y, z = min(max(y, 0), h - 1), min(max(z, 0), wd - 1)
                        elif not (0 <= y < h and 0 <= z < wd):
                            continue
                        acc += w[u, v] * x[y, z, c]
                out[i, j, c] = acc
    return out[:, :, 0] if squeeze else out


def naive_pad(x: np.ndarray, m: int) -> np.ndarray:
    h, w = x.shape[:2]
    out = np.zeros((h + 2 * m, w + 2 * m) + x.shape[2:])
    for i in range(h + 2 * m):
        for j in range(w + 2 * m):
            out[i, j] = x[min(max(i - m, 0), h - 1), min(max(j - m, 0), w - 1)]
    return out


def naive_template(img: np.ndarray, k: int, g: float) -> np.ndarray:
    """pad by k -> x ** (1/g) -> disk blur -> x ** g -> crop -> clamp."""
    x = naive_pad(img, k)
    x = np.vectorize(lambda v: v ** (1.0 / g))(x)
    x = naive_convolve(x, disk_weights(k), boundary="zero")
    x = np.vectorize(lambda v: max(v, 0.0) ** g)(x)
    h, w = img.shape[:2]
    return np.clip(x[k:k + h, k:k + w], 0.0, 1.0)


def naive_min_filter(x: np.ndarray, footprint: np.ndarray) -> np.ndarray:
    h, w = x.shape
    k = footprint.shape[0]
    r = k // 2
    out = np.empty_like(x, dtype=np.float64)
    for i in range(h):
        for j in range(w):
            best = math.inf
            for u in range(k):
                for v in range(k):
                    if footprint[u, v]:
                        y, z = min(max(i + u - r, 0), h - 1), min(max(j + v - r, 0), w - 1)
                        best = min(best, x[y, z])
            out[i, j] = best
    return out


def naive_box(x: np.ndarray, l: int) -> np.ndarray:
    return naive_convolve(x, np.full((l, l), 1.0 / (l * l)), boundary="replicate")


def central_diff(f, x: np.ndarray, idx, h: float = 1e-4) -> float:
    xp = x.copy()
    xm = x.copy()
    xp[idx] += h
    xm[idx] -= h
    return (f(xp) - f(xm)) / (2 * h)


def rel_err(a, b, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def gaussian_ssim_const(c1: float, c2: float, mu_a: float, mu_b: float) -> float:
    """SSIM of two constant images: zero variance and covariance."""
    return (2 * mu_a * mu_b + c1) * c2 / ((mu_a ** 2 + mu_b ** 2 + c1) * c2)
