"""Image ingestion: resize, center-crop, grayscale, scale to [-1, 1], and back."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import DTYPE, ConfigError, DomainError, ShapeError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".gif"}


class DecodeError(ValueError):
    pass


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class RawImage:
    pixels: np.ndarray  # uint8, (h, w) or (h, w, 3)
    source: str = ""

    def __post_init__(self):
        p = self.pixels
        if p.dtype != np.uint8:
            raise DecodeError(f"{self.source or 'image'}: expected uint8 pixels, got {p.dtype}")
        if p.ndim not in (2, 3) or p.shape[0] < 1 or p.shape[1] < 1:
            raise DecodeError(f"{self.source or 'image'}: bad pixel array shape {p.shape}")
        if p.ndim == 3 and p.shape[2] not in (1, 3):
            raise DecodeError(f"{self.source or 'image'}: {p.shape[2]} channels not supported")


@dataclass(frozen=True)
class PipelineConfig:
    target_size: tuple = (256, 256)
    crop_fraction: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "target_size", tuple(int(s) for s in self.target_size))

    def validate(self) -> "PipelineConfig":
        if len(self.target_size) != 2 or min(self.target_size) < 8:
            raise ConfigError(f"target_size must be at least (8, 8), got {self.target_size}")
        if not 0 < self.crop_fraction <= 1:
            raise ConfigError(f"crop_fraction must be in (0, 1], got {self.crop_fraction}")
        return self


def read_image(path) -> RawImage:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                im = im.convert("L" if im.mode in ("1", "LA", "I", "I;16", "F") else "RGB")
            pixels = np.asarray(im, dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    if pixels.size == 0:
        raise DecodeError(f"{path} is empty")
    return RawImage(pixels, str(path))


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    """BT.601 luma for RGB input, identity for single-channel."""
    if pixels.ndim == 2:
        return pixels
    if pixels.shape[2] == 1:
        return pixels[:, :, 0]
    rgb = pixels.astype(np.float64)
    y = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8)


def normalize(u8: np.ndarray) -> np.ndarray:
    return (u8.astype(DTYPE) / DTYPE(127.5) - DTYPE(1.0)).astype(DTYPE)


def preprocess(img: RawImage, cfg: PipelineConfig = PipelineConfig()) -> np.ndarray:
    """Return a ``(1, 1, h, w)`` batch in [-1, 1] from an 8-bit image."""
    cfg = cfg.validate()
    th, tw = cfg.target_size
    rh = max(th, int(round(th / cfg.crop_fraction)))
    rw = max(tw, int(round(tw / cfg.crop_fraction)))
    pixels = img.pixels[:, :, 0] if img.pixels.ndim == 3 and img.pixels.shape[2] == 1 else img.pixels
    resized = np.asarray(Image.fromarray(pixels).resize((rw, rh), Image.BILINEAR))
    top, left = (rh - th) // 2, (rw - tw) // 2
    cropped = resized[top:top + th, left:left + tw]
    if cropped.shape[0] != th or cropped.shape[1] != tw:
        raise ConfigError(f"crop produced {cropped.shape[:2]}, expected {cfg.target_size}")
    return normalize(to_grayscale(cropped))[None, None]


def denormalize(batch: np.ndarray) -> list[np.ndarray]:
    """Map a [-1, 1] batch back to a list of ``(h, w)`` uint8 arrays (round half up)."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"expected a (n, 1, h, w) batch, got {x.shape}")
    if not np.all(np.isfinite(x)) or x.min() < -1.0 or x.max() > 1.0:
        raise DomainError("denormalize expects values in [-1, 1]")
    u8 = np.clip(np.floor((x + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)
    return [u8[i, 0] for i in range(u8.shape[0])]


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise CorpusError(f"{d} is not a directory")
    return sorted((p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
                  key=lambda p: p.name)


def load_corpus(directory, cfg: PipelineConfig = PipelineConfig(), limit: Optional[int] = None) -> np.ndarray:
    """Preprocess every image in ``directory`` in lexicographic filename order.

    Undecodable files are skipped with a warning; the load fails only if
    nothing decodes. ``limit`` caps the number of images kept.
    """
    cfg = cfg.validate()
    if limit is not None and limit < 1:
        raise ConfigError(f"limit must be >= 1, got {limit}")
    paths = list_images(directory)
    if not paths:
        raise CorpusError(f"no images found in {directory}")
    out = []
    for path in paths:
        if limit is not None and len(out) >= limit:
            break
        try:
            out.append(preprocess(read_image(path), cfg))
        except DecodeError as exc:
            log.warning("skipping %s: %s", path.name, exc)
    if not out:
        raise CorpusError(f"none of the {len(paths)} files in {directory} could be decoded")
    return np.concatenate(out, axis=0)


def write_png(path, u8: np.ndarray) -> None:
    Image.fromarray(np.asarray(u8, dtype=np.uint8), mode="L").save(path, format="PNG")


def make_grid(images: Sequence[np.ndarray], columns: Optional[int] = None, pad: int = 2,
              fill: int = 0) -> np.ndarray:
    """Tile equally-sized uint8 images row-major; default ``ceil(sqrt(n))`` columns."""
    if not images:
        raise ShapeError("make_grid needs at least one image")
    h, w = images[0].shape
    n = len(images)
    cols = columns or math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    grid = np.full((rows * (h + pad) + pad, cols * (w + pad) + pad), fill, dtype=np.uint8)
    for i, im in enumerate(images):
        if im.shape != (h, w):
            raise ShapeError(f"grid image {i} has shape {im.shape}, expected {(h, w)}")
        r, c = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        grid[y:y + h, x:x + w] = im
    return grid
