"""Array conventions, random streams and shared errors.

Image batches are plain ``numpy.float32`` arrays shaped ``(n, c, h, w)``.
Reductions (means, variances, losses) accumulate in float64.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

DTYPE = np.float32

RngState = np.random.Generator


class ShapeError(ValueError):
    """Array shapes are invalid or incompatible."""


class ConfigError(ValueError):
    """A configuration value is outside its allowed range."""


class NumericError(ArithmeticError):
    """A computation produced NaN or Inf."""


class DomainError(ValueError):
    """Input values fall outside the domain an operation accepts."""


def make_rng(seed: int) -> RngState:
    """PCG64 generator seeded from a 64-bit unsigned integer."""
    if not 0 <= int(seed) < 2**64:
        raise ConfigError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def split_rng(rng: RngState, n: int) -> list[RngState]:
    """Derive ``n`` independent child streams from ``rng``."""
    return [np.random.Generator(bg) for bg in rng.bit_generator.spawn(n)]


def check_shape(shape: Sequence[int]) -> tuple[int, int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise ShapeError(f"expected a 4-axis (n, c, h, w) shape, got {shape}")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all shape components must be >= 1, got {shape}")
    return shape  # type: ignore[return-value]


def as_batch(x) -> np.ndarray:
    """Validate and return ``x`` as a contiguous float32 image batch."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    check_shape(arr.shape)
    return arr


def gaussian_like(shape: Sequence[int], rng: RngState) -> np.ndarray:
    """I.i.d. standard normal batch of the given shape (ziggurat sampler)."""
    shape = check_shape(shape)
    return rng.standard_normal(shape, dtype=DTYPE)


def batch_mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared difference over all elements, accumulated in float64."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ShapeError("batch_mse of empty arrays")
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(d * d))


def ensure_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x
