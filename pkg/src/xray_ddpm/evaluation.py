"""Whole-image MSE and SSIM between image corpora."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import ConfigError, DomainError, ShapeError, make_rng
from .preprocess import CorpusError, denormalize

K1, K2 = 0.01, 0.03
STRATEGIES = ("aligned", "random")


@dataclass(frozen=True)
class SsimComponents:
    luminance: float
    contrast: float
    structure: float
    ssim: float
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0


@dataclass(frozen=True)
class EvalReport:
    class_a: str
    class_b: str
    strategy: str
    n_pairs: int
    mean_mse: float
    mean_ssim: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _flat(img) -> np.ndarray:
    x = np.asarray(img, dtype=np.float64)
    if x.size == 0:
        raise ShapeError("empty image")
    return x.reshape(-1)


def luminance_mean(img) -> float:
    return float(np.mean(_flat(img)))


def contrast_std(img) -> float:
    """Sample standard deviation (N - 1 divisor)."""
    x = _flat(img)
    if x.size < 2:
        raise ShapeError("contrast needs at least two pixels")
    d = x - x.mean()
    return math.sqrt(float(np.dot(d, d)) / (x.size - 1))


def _power(base: float, exponent: float, name: str) -> float:
    if exponent == 1.0:
        return base
    if base < 0 and not float(exponent).is_integer():
        raise DomainError(f"negative {name} term {base} with non-integer exponent {exponent}")
    return base ** exponent


def ssim(x, y, weights=(1.0, 1.0, 1.0), dynamic_range: float = 255.0) -> SsimComponents:
    """Single-window SSIM over the whole image.

    Stability constants are C1 = (0.01 L)^2, C2 = (0.03 L)^2, C3 = C2 / 2 with
    L the dynamic range; covariance uses the same N - 1 divisor as the std.
    """
    xs, ys = np.asarray(x), np.asarray(y)
    if xs.shape != ys.shape:
        raise ShapeError(f"shape mismatch: {xs.shape} vs {ys.shape}")
    if not dynamic_range > 0:
        raise ConfigError("dynamic_range must be positive")
    a, b, g = (float(w) for w in weights)
    if min(a, b, g) <= 0:
        raise ConfigError("SSIM exponents must be positive")
    xf, yf = _flat(xs), _flat(ys)
    n = xf.size
    if n < 2:
        raise ShapeError("SSIM needs at least two pixels")
    c1 = (K1 * dynamic_range) ** 2
    c2 = (K2 * dynamic_range) ** 2
    c3 = c2 / 2
    mx, my = luminance_mean(xf), luminance_mean(yf)
    sx, sy = contrast_std(xf), contrast_std(yf)
    sxy = float(np.dot(xf - mx, yf - my)) / (n - 1)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    con = (2 * sx * sy + c2) / (sx * sx + sy * sy + c2)
    struct = (sxy + c3) / (sx * sy + c3)
    # each term is bounded by 1 in exact arithmetic; clip rounding excursions
    lum, con, struct = (min(1.0, max(-1.0, v)) for v in (lum, con, struct))
    value = _power(lum, a, "luminance") * _power(con, b, "contrast") * _power(struct, g, "structure")
    return SsimComponents(lum, con, struct, value, a, b, g)


def _pairs(n_a: int, n_b: int, strategy: str, n_pairs: int, seed: int) -> list[tuple[int, int]]:
    if strategy == "aligned":
        if n_a != n_b:
            raise CorpusError(f"aligned pairing needs equal corpus sizes, got {n_a} and {n_b}")
        return [(i, i) for i in range(n_a)]
    if strategy == "random":
        if n_pairs < 1:
            raise ConfigError(f"n_pairs must be >= 1, got {n_pairs}")
        rng = make_rng(seed)
        ia = rng.integers(0, n_a, size=n_pairs)
        ib = rng.integers(0, n_b, size=n_pairs)
        return list(zip(ia.tolist(), ib.tolist()))
    raise ConfigError(f"unknown pairing strategy {strategy!r}; expected one of {STRATEGIES}")


def evaluate_pair(corpus_a: np.ndarray, corpus_b: np.ndarray, strategy: str = "random", n_pairs: int = 256,
                  seed: int = 0, label_a: str = "class_a", label_b: str = "class_b") -> EvalReport:
    """Mean per-pair MSE and SSIM between two [-1, 1] corpora, measured on 8-bit pixels."""
    if len(corpus_a) == 0 or len(corpus_b) == 0:
        raise CorpusError("both corpora must be non-empty")
    if np.shape(corpus_a)[1:] != np.shape(corpus_b)[1:]:
        raise ShapeError(f"image shapes differ: {np.shape(corpus_a)[1:]} vs {np.shape(corpus_b)[1:]}")
    pairs = _pairs(len(corpus_a), len(corpus_b), strategy, n_pairs, seed)
    a8 = [im.astype(np.float64) for im in denormalize(corpus_a)]
    b8 = [im.astype(np.float64) for im in denormalize(corpus_b)]
    mse = np.empty(len(pairs))
    sim = np.empty(len(pairs))
    for k, (i, j) in enumerate(pairs):
        d = a8[i] - b8[j]
        mse[k] = float(np.mean(d * d))
        sim[k] = ssim(a8[i], b8[j]).ssim
    return EvalReport(label_a, label_b, strategy, len(pairs), float(mse.mean()), float(sim.mean()))


def format_table(reports) -> str:
    """Plain-text evaluation matrix with Class 1 / Class 2 / MSE / SSIM columns."""
    rows = [("Class 1", "Class 2", "MSE", "SSIM")]
    rows += [(r.class_a, r.class_b, f"{r.mean_mse:.2f}", f"{r.mean_ssim:.2f}") for r in reports]
    widths = [max(len(row[c]) for row in rows) for c in range(4)]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0]), row[1].ljust(widths[1]),
                 row[2].rjust(widths[2]), row[3].rjust(widths[3])]
        lines.append("  ".join(cells))
    return "\n".join(lines)
