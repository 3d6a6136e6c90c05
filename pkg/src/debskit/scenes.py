"""Synthetic scenes with known depth: a colored focus shape over a textured background.

The label of a scene is the type of its background texture (vertical
stripes, horizontal stripes, checkerboard, ...). The focus shape is a
random-colored disk at depth 1 in front of a far, slightly slanted
background plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SceneConfig:
    size: int = 64
    n_classes: int = 3
    period: int = 8
    pattern_amp: float = 0.12
    grain: int = 1
    noise_amp: float = 0.4
    object_radius: tuple = (9.0, 14.0)
    background_depth: tuple = (0.0, 0.02)
    edge_falloff: float = 0.0


@dataclass(frozen=True)
class Scene:
    image: np.ndarray
    depth: np.ndarray
    label: int


def _pattern(label: int, size: int, period: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    col = np.where((xx // (period // 2)) % 2 == 0, 1.0, -1.0)
    row = np.where((yy // (period // 2)) % 2 == 0, 1.0, -1.0)
    kinds = [col, row, col * row]
    if label < len(kinds):
        return kinds[label]
    # further classes: diagonal bands at growing slopes
    band = ((xx + (label - 2) * yy) // (period // 2)) % 2
    return np.where(band == 0, 1.0, -1.0)


def make_scene(rng: np.random.Generator, label: int, cfg: SceneConfig = SceneConfig()) -> Scene:
    n = cfg.size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)

    base = rng.uniform(0.35, 0.6) + rng.uniform(-0.05, 0.05, size=3)
    bg = base[None, None, :] + cfg.pattern_amp * _pattern(label, n, cfg.period)[:, :, None]
    g = cfg.grain
    cells = -(-n // g)
    noise = rng.uniform(-cfg.noise_amp, cfg.noise_amp, size=(cells, cells, 3))
    bg = bg + np.repeat(np.repeat(noise, g, axis=0), g, axis=1)[:n, :n]

    lo, hi = cfg.background_depth
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(angle) * xx + np.sin(angle) * yy) / n
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
    depth = lo + (hi - lo) * ramp

    cy, cx = n / 2 + rng.uniform(-n / 10, n / 10, size=2)
    radius = rng.uniform(*cfg.object_radius)
    dist = np.hypot(yy - cy, xx - cx)
    inside = dist <= radius
    color = rng.uniform(0.15, 0.9, size=3)
    shade = 1.0 - 0.25 * np.clip(dist / radius, 0, 1) ** 2
    obj = color[None, None, :] * shade[:, :, None]
    img = np.where(inside[:, :, None], obj, bg)
    # short depth falloff around the disk
    if cfg.edge_falloff > 0:
        edge = np.clip((radius + cfg.edge_falloff - dist) / cfg.edge_falloff, 0.0, 1.0)
        depth = np.maximum(depth, edge * 0.5)
    depth = np.where(inside, 1.0, depth)
    return Scene(np.clip(img, 0.0, 1.0), depth, int(label))


def make_suite(n: int, seed: int = 0, cfg: SceneConfig | None = None, **overrides) -> list[Scene]:
    """``n`` scenes with labels cycling through the classes, deterministic in ``seed``."""
    cfg = cfg or SceneConfig(**overrides)
    rng = np.random.default_rng(seed)
    return [make_scene(rng, i % cfg.n_classes, cfg) for i in range(n)]
