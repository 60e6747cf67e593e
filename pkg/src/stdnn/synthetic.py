"""Synthetic two-texture images with known partitions."""
from __future__ import annotations

import numpy as np


def grating(shape, theta: float, period: float, phase: float = 0.0) -> np.ndarray:
    """Sinusoid in ``[-1, 1]`` whose wave vector points along `theta`."""
    h, w = shape
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    return np.sin(2 * np.pi * (x * np.cos(theta) + y * np.sin(theta)) / period + phase)


def random_partition(shape, rng: np.random.Generator, kind: str = "halfplane") -> np.ndarray:
    """Two-region label map: a half-plane at a random pose, or a disc.

    ``kind=None`` picks either with equal odds.
    """
    h, w = shape
    kind = kind or rng.choice(["disc", "halfplane"])
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    if kind == "disc":
        r = rng.uniform(0.22, 0.32) * min(h, w)
        cy = rng.uniform(r, h - r)
        cx = rng.uniform(r, w - r)
        inside = (y - cy) ** 2 + (x - cx) ** 2 <= r * r
    elif kind == "halfplane":
        phi = rng.uniform(0, 2 * np.pi)
        off = rng.uniform(-0.2, 0.2) * min(h, w)
        inside = (x - w / 2 + 0.5) * np.cos(phi) + (y - h / 2 + 0.5) * np.sin(phi) > off
    else:
        raise ValueError(f"unknown partition kind {kind!r}")
    return inside.astype(np.int64)


def two_texture(labels, rng: np.random.Generator, period: float = 6.0, amplitude: float = 0.25,
                tint: float = 0.1, noise: float = 0.03) -> np.ndarray:
    """RGB image with a 0-degree grating where ``labels == 0`` and a 90-degree one elsewhere.

    The two textures also differ by an opposite red/blue tint.
    """
    labels = np.asarray(labels)
    shape = labels.shape
    g0 = grating(shape, 0.0, period, rng.uniform(0, 2 * np.pi))
    g1 = grating(shape, np.pi / 2, period, rng.uniform(0, 2 * np.pi))
    inside = labels != 0
    luminance = 0.5 + amplitude * np.where(inside, g1, g0)
    sign = np.where(inside, -1.0, 1.0)
    img = np.stack([luminance + sign * tint, luminance, luminance - sign * tint])
    img += noise * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


def dataset(n: int, shape=(32, 32), seed: int = 0, kind: str | None = "halfplane", **texture):
    """`n` (image, labels) pairs with random partitions."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        lab = random_partition(shape, rng, kind)
        out.append((two_texture(lab, rng, **texture), lab))
    return out
