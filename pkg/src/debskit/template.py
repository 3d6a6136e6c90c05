"""Blur-template generation: pad, gamma, disk blur, inverse gamma, unpad."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, signal

from .errors import ValidationError
from .raster import as_image, clamp01, pad_replicate, unpad

FFT_THRESHOLD = 31


def _check_odd(k: int, name: str = "k") -> int:
    if int(k) != k or k < 1 or k % 2 == 0:
        raise ValidationError(f"{name} must be an odd integer >= 1, got {k}")
    return int(k)


def disk_support(k: int) -> np.ndarray:
    """Boolean k x k disk: centers within k/2 of the kernel center."""
    k = _check_odd(k)
    c = (k - 1) / 2
    yy, xx = np.mgrid[0:k, 0:k]
    return (yy - c) ** 2 + (xx - c) ** 2 <= (k / 2) ** 2


@dataclass(frozen=True)
class DiskKernel:
    size: int
    weights: np.ndarray

    @classmethod
    def of_size(cls, k: int) -> "DiskKernel":
        support = disk_support(k).astype(np.float64)
        w = support / support.sum()
        w.flags.writeable = False
        return cls(size=int(k), weights=w)


def disk_kernel(k: int) -> DiskKernel:
    return DiskKernel.of_size(k)


def _filter2d(plane: np.ndarray, weights: np.ndarray, mode: str) -> np.ndarray:
    k = weights.shape[0]
    if k > FFT_THRESHOLD:
        r = k // 2
        if mode == "nearest":
            padded = np.pad(plane, r, mode="edge")
        else:
            padded = np.pad(plane, r, mode="constant")
        # the disk is point-symmetric, so convolution and correlation coincide
        return signal.fftconvolve(padded, weights, mode="valid")
    return ndimage.correlate(plane, weights, mode=mode, cval=0.0)


def convolve(img: np.ndarray, kern: DiskKernel, boundary: str = "replicate") -> np.ndarray:
    """Apply ``kern`` to each channel; same-size output.

    ``boundary`` is ``"replicate"`` (edge pixels extended) or ``"zero"``.
    """
    if boundary not in ("replicate", "zero"):
        raise ValidationError(f"unknown boundary mode {boundary!r}")
    mode = "nearest" if boundary == "replicate" else "constant"
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 2:
        return _filter2d(x, kern.weights, mode)
    if x.ndim != 3:
        raise ValidationError(f"expected (H, W) or (H, W, C) array, got {x.shape}")
    return np.stack(
        [_filter2d(x[:, :, c], kern.weights, mode) for c in range(x.shape[2])], axis=2
    )


def gamma_correct(img: np.ndarray, g: float) -> np.ndarray:
    """Raise values to ``1/g``: brightens for g > 1, undone by ``gamma_correct(x, 1/g)``."""
    if not g > 0:
        raise ValidationError(f"gamma must be > 0, got {g}")
    x = np.asarray(img, dtype=np.float64)
    return np.power(np.clip(x, 0.0, None), 1.0 / g)


@dataclass(frozen=True)
class BlurTemplate:
    image: np.ndarray
    kernel_size: int
    gamma: float


def make_template(img: np.ndarray, k: int, g: float = 2.2, *, pad: bool = True) -> BlurTemplate:
    """Blur ``img`` with a k-pixel disk in gamma-lifted space.

    ``pad=False`` skips the replicate padding and blurs against a black
    border instead; it exists to show the edge artifact padding removes.
    """
    k = _check_odd(k)
    if not g > 1:
        raise ValidationError(f"template gamma must be > 1, got {g}")
    img = as_image(img)
    kern = disk_kernel(k)
    x = pad_replicate(img, k) if pad else img
    x = gamma_correct(x, g)
    x = convolve(x, kern, boundary="zero")
    x = gamma_correct(x, 1.0 / g)
    if pad:
        x = unpad(x, k)
    out = clamp01(x)
    out.flags.writeable = False
    return BlurTemplate(image=out, kernel_size=k, gamma=float(g))


def make_templates(img: np.ndarray, ks, g: float = 2.2, workers: int | None = None) -> list[BlurTemplate]:
    ks = list(ks)
    if not ks:
        raise ValidationError("at least one kernel size is required")
    for k in ks:
        _check_odd(k)
    if workers == 1 or len(ks) == 1:
        return [make_template(img, k, g) for k in ks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda k: make_template(img, k, g), ks))
