"""Linear variance schedule and the coefficients derived from it.

Timesteps are 1-based throughout: ``t`` runs from 1 to ``T`` and the
arrays below are indexed with ``t - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError

SCHEDULE_KIND = "linear"


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta_start: float
    beta_end: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)
    sqrt_alpha_bar: np.ndarray = field(repr=False)
    sqrt_one_minus_alpha_bar: np.ndarray = field(repr=False)
    kind: str = SCHEDULE_KIND

    def check_t(self, t) -> np.ndarray:
        """Return ``t`` as an int array, raising IndexError outside [1, T]."""
        arr = np.asarray(t)
        if arr.size and not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.round(arr)):
                raise IndexError(f"timesteps must be integers, got {t!r}")
        arr = arr.astype(np.int64)
        if arr.size and (arr.min() < 1 or arr.max() > self.T):
            raise IndexError(f"timestep out of range [1, {self.T}]: {t!r}")
        return arr

    def to_config(self) -> dict:
        return {"kind": self.kind, "T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}

    @classmethod
    def from_config(cls, cfg: dict) -> NoiseSchedule:
        if cfg.get("kind", SCHEDULE_KIND) != SCHEDULE_KIND:
            raise ConfigError(f"unsupported schedule kind {cfg.get('kind')!r}")
        return linear_schedule(int(cfg["T"]), float(cfg["beta_start"]), float(cfg["beta_end"]))


def from_betas(beta, beta_start: float | None = None, beta_end: float | None = None) -> NoiseSchedule:
    """Build a schedule from an explicit beta sequence (beta_1 .. beta_T)."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 1 or beta.size < 1:
        raise ConfigError("beta must be a non-empty 1-D sequence")
    if not np.all((beta > 0) & (beta < 1)):
        raise ConfigError("every beta_t must lie strictly inside (0, 1)")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    arrays = [beta, alpha, alpha_bar, np.sqrt(alpha_bar), np.sqrt(1.0 - alpha_bar)]
    for a in arrays:
        a.setflags(write=False)
    return NoiseSchedule(
        int(beta.size),
        float(beta[0] if beta_start is None else beta_start),
        float(beta[-1] if beta_end is None else beta_end),
        *arrays,
    )


def linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T}")
    if not (0 < beta_start < 1 and 0 < beta_end < 1):
        raise ConfigError(f"betas must lie in (0, 1), got {beta_start}, {beta_end}")
    if beta_start > beta_end:
        raise ConfigError(f"beta_start {beta_start} exceeds beta_end {beta_end}")
    beta = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    return from_betas(beta, beta_start, beta_end)


def posterior_coefficients(s: NoiseSchedule, t: int) -> tuple[float, float, float]:
    """Coefficients of one reverse step in noise-prediction form.

    ``x_{t-1} = mean_x_coeff * (x_t - mean_eps_coeff * eps_hat) + sigma * z``,
    with the reverse variance fixed to beta_t and no noise on the last step.
    """
    (t,) = s.check_t([t])
    i = int(t) - 1
    mean_x_coeff = 1.0 / math.sqrt(s.alpha[i])
    mean_eps_coeff = s.beta[i] / s.sqrt_one_minus_alpha_bar[i]
    sigma = math.sqrt(s.beta[i]) if t > 1 else 0.0
    return float(mean_x_coeff), float(mean_eps_coeff), sigma
