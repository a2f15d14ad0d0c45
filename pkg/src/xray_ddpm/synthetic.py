"""Toy corpus of filled circles and rectangles for smoke tests and demos."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import RngState, make_rng
from .preprocess import normalize, write_png


def shape_image(size: int, rng: RngState) -> np.ndarray:
    """One uint8 canvas with a bright filled shape on a dark background."""
    yy, xx = np.mgrid[0:size, 0:size]
    img = np.full((size, size), int(rng.integers(0, 40)), dtype=np.uint8)
    value = int(rng.integers(180, 256))
    if rng.random() < 0.5:
        r = rng.uniform(size * 0.15, size * 0.35)
        cy, cx = rng.uniform(r, size - r, size=2)
        mask = (yy - cy + 0.5) ** 2 + (xx - cx + 0.5) ** 2 <= r * r
    else:
        h, w = rng.integers(max(2, size // 4), max(3, size * 3 // 4), size=2)
        y0 = int(rng.integers(0, size - h + 1))
        x0 = int(rng.integers(0, size - w + 1))
        mask = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
    img[mask] = value
    return img


def shapes_u8(n: int, size: int = 8, seed: int = 0) -> list[np.ndarray]:
    rng = make_rng(seed)
    return [shape_image(size, rng) for _ in range(n)]


def shapes_corpus(n: int, size: int = 8, seed: int = 0) -> np.ndarray:
    """``(n, 1, size, size)`` float batch in [-1, 1]."""
    return np.stack([normalize(im)[None] for im in shapes_u8(n, size, seed)])


def write_shapes(directory, n: int, size: int = 8, seed: int = 0) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, im in enumerate(shapes_u8(n, size, seed)):
        path = directory / f"shape_{i:04d}.png"
        write_png(path, im)
        paths.append(path)
    return paths
