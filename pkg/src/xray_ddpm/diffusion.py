"""Forward noising (single step and closed form) and the reverse sampling chain."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import DTYPE, ConfigError, NumericError, RngState, ShapeError, as_batch, check_shape, gaussian_like
from .schedule import NoiseSchedule, posterior_coefficients

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForwardSample:
    x_t: np.ndarray
    eps: np.ndarray
    t: np.ndarray


def forward_kernel(x_prev: np.ndarray, beta: float, z: np.ndarray) -> np.ndarray:
    """One Markov noising step with an explicit beta and noise draw."""
    keep = DTYPE(np.sqrt(1.0 - beta))
    add = DTYPE(np.sqrt(beta))
    return keep * x_prev + add * z


def forward_step(x_prev: np.ndarray, t: int, s: NoiseSchedule, rng: RngState) -> np.ndarray:
    """Sample x_t ~ q(x_t | x_{t-1})."""
    (t,) = s.check_t([t])
    x_prev = as_batch(x_prev)
    z = gaussian_like(x_prev.shape, rng)
    return forward_kernel(x_prev, float(s.beta[t - 1]), z)


def _per_item(values: np.ndarray, n: int) -> np.ndarray:
    return values.astype(DTYPE).reshape(n, 1, 1, 1)


def forward_closed_form(x0: np.ndarray, t, s: NoiseSchedule, rng: RngState,
                        eps: Optional[np.ndarray] = None) -> ForwardSample:
    """Jump straight to step ``t`` of the forward chain for every batch item.

    ``t`` is either a scalar or one timestep per item. A caller-supplied
    ``eps`` replaces the fresh draw.
    """
    x0 = as_batch(x0)
    n = x0.shape[0]
    t = s.check_t(np.broadcast_to(np.asarray(t), (n,)).copy())
    if x0.min() < -1.0 or x0.max() > 1.0:
        log.warning("forward_closed_form: x0 outside [-1, 1] (min %.4g, max %.4g)", x0.min(), x0.max())
    if eps is None:
        eps = gaussian_like(x0.shape, rng)
    else:
        eps = as_batch(eps)
        if eps.shape != x0.shape:
            raise ShapeError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    a = _per_item(s.sqrt_alpha_bar[t - 1], n)
    b = _per_item(s.sqrt_one_minus_alpha_bar[t - 1], n)
    return ForwardSample(a * x0 + b * eps, eps, t)


def reverse_step(x_t: np.ndarray, t: int, eps_hat: np.ndarray, s: NoiseSchedule, rng: RngState,
                 deterministic: bool = False) -> np.ndarray:
    """One ancestral step x_t -> x_{t-1}; ``deterministic`` drops the noise term."""
    x_t = np.asarray(x_t, dtype=DTYPE)
    eps_hat = np.asarray(eps_hat, dtype=DTYPE)
    if x_t.shape != eps_hat.shape:
        raise ShapeError(f"eps_hat shape {eps_hat.shape} != x_t shape {x_t.shape}")
    cx, ce, sigma = posterior_coefficients(s, t)
    out = DTYPE(cx) * (x_t - DTYPE(ce) * eps_hat)
    if sigma > 0 and not deterministic:
        out = out + DTYPE(sigma) * gaussian_like(x_t.shape, rng)
    return out


def sample(denoiser, shape: Sequence[int], s: NoiseSchedule, rng: RngState,
           on_step: Optional[Callable[[int, np.ndarray], None]] = None) -> np.ndarray:
    """Run the reverse chain from pure noise and clamp the result to [-1, 1].

    ``denoiser`` needs a ``predict(x_t, t)`` method. ``on_step(t, x)`` sees
    each unclamped iterate x_{t-1} right after step ``t``.
    """
    shape = check_shape(shape)
    x = gaussian_like(shape, rng)
    for t in range(s.T, 0, -1):
        t_vec = np.full(shape[0], t, dtype=np.int64)
        eps_hat = np.asarray(denoiser.predict(x, t_vec))
        if eps_hat.shape != x.shape:
            raise ShapeError(f"denoiser returned {eps_hat.shape} for input {x.shape} at t={t}")
        if not np.all(np.isfinite(eps_hat)):
            raise NumericError(f"denoiser produced non-finite output at t={t}")
        x = reverse_step(x, t, eps_hat, s, rng)
        if on_step is not None:
            on_step(t, x)
    return np.clip(x, -1.0, 1.0)


def fraction_to_step(fraction: float, s: NoiseSchedule) -> int:
    """Noise "percentage" as a step index: round-half-up of ``fraction * T``, at least 1."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"noise fraction must lie in (0, 1], got {fraction}")
    return max(1, min(s.T, int(np.floor(fraction * s.T + 0.5))))


def noise_levels(x0: np.ndarray, fractions: Sequence[float], s: NoiseSchedule,
                 rng: RngState) -> list[tuple[int, np.ndarray]]:
    """Forward-noise the same images once per fraction; returns ``(t, x_t)`` pairs."""
    out = []
    for f in fractions:
        t = fraction_to_step(f, s)
        out.append((t, forward_closed_form(x0, t, s, rng).x_t))
    return out
