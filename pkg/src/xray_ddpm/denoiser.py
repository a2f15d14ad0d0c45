"""Noise predictors: a time-conditioned UNet and an analytic oracle.

Every denoiser exposes ``predict(x_t, t) -> eps_hat`` on numpy batches, with
``eps_hat.shape == x_t.shape``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Protocol

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import DTYPE, ConfigError, RngState, ShapeError, as_batch
from .schedule import NoiseSchedule

ParameterSet = dict  # canonical name -> float32 ndarray, in module registration order


class Denoiser(Protocol):
    def predict(self, x_t: np.ndarray, t: np.ndarray) -> np.ndarray: ...


def sinusoidal_embedding(t, dim: int) -> np.ndarray:
    """Interleaved sin/cos timestep features, shape ``(len(t), dim)``.

    Column ``2i`` holds ``sin(t / 10000**(2i/dim))`` and column ``2i+1`` the
    matching cosine.
    """
    if dim < 2 or dim % 2:
        raise ConfigError(f"embedding dim must be even and >= 2, got {dim}")
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    freqs = 10000.0 ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    args = t[:, None] * freqs[None, :]
    out = np.empty((t.size, dim), dtype=np.float64)
    out[:, 0::2] = np.sin(args)
    out[:, 1::2] = np.cos(args)
    return out


@dataclass(frozen=True)
class UNetConfig:
    base_width: int = 32
    level_widths: tuple = (32, 64, 128)
    blocks_per_level: int = 1
    time_embed_dim: int = 64
    image_size: tuple = (32, 32)
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "level_widths", tuple(int(w) for w in self.level_widths))
        object.__setattr__(self, "image_size", tuple(int(s) for s in self.image_size))

    def validate(self) -> "UNetConfig":
        if self.in_channels != 1:
            raise ConfigError("only single-channel images are supported")
        if self.base_width < 1 or not self.level_widths or min(self.level_widths) < 1:
            raise ConfigError("channel widths must be positive")
        if self.blocks_per_level < 1:
            raise ConfigError("blocks_per_level must be >= 1")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ConfigError("time_embed_dim must be even")
        if len(self.image_size) != 2 or min(self.image_size) < 1:
            raise ConfigError(f"bad image_size {self.image_size}")
        step = 2 ** (len(self.level_widths) - 1)
        if any(s % step for s in self.image_size):
            raise ConfigError(f"image_size {self.image_size} not divisible by {step}")
        bottom = (self.image_size[0] // step) * (self.image_size[1] // step)
        deepest = self.level_widths[-1]
        if bottom * (deepest // _groups(deepest)) < 2:
            raise ConfigError(f"image_size {self.image_size} leaves one value per norm group at the bottleneck")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level_widths"] = list(self.level_widths)
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        return cls(**d).validate()


PRESETS = {
    "toy": UNetConfig(base_width=8, level_widths=(8, 16), blocks_per_level=1, time_embed_dim=32, image_size=(8, 8)),
    "desk": UNetConfig(),
    "paper": UNetConfig(base_width=64, level_widths=(64, 128, 256, 256), blocks_per_level=2,
                        time_embed_dim=128, image_size=(256, 256)),
}


def _groups(channels: int) -> int:
    # at least two channels per group: with one, the norm after the channelwise
    # time shift would subtract that shift exactly and the block ignores t
    g = max(1, min(8, channels // 2))
    while channels % g:
        g -= 1
    return g


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, temb: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.time = nn.Linear(temb, cout)
        self.norm2 = nn.GroupNorm(_groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class UNet(nn.Module):
    """Encoder/decoder with concatenated skips at every resolution.

    Downsampling is a stride-2 3x3 convolution, upsampling a stride-2 4x4
    transposed convolution. The output is a 1x1 convolution to one channel.
    """

    def __init__(self, config: UNetConfig):
        super().__init__()
        cfg = config.validate()
        self.config = cfg
        E = cfg.time_embed_dim
        widths = cfg.level_widths
        self.init_conv = nn.Conv2d(cfg.in_channels, cfg.base_width, 3, padding=1)
        self.time_mlp = nn.Sequential(nn.Linear(E, 4 * E), nn.SiLU(), nn.Linear(4 * E, E))

        self.down = nn.ModuleList()
        ch = cfg.base_width
        for i, w in enumerate(widths):
            level = nn.Module()
            level.blocks = nn.ModuleList(
                ResBlock(ch if j == 0 else w, w, E) for j in range(cfg.blocks_per_level))
            ch = w
            if i < len(widths) - 1:
                level.downsample = nn.Conv2d(w, w, 3, stride=2, padding=1)
            self.down.append(level)

        self.mid = ResBlock(ch, ch, E)

        self.up = nn.ModuleList()
        for i in reversed(range(len(widths))):
            w = widths[i]
            level = nn.Module()
            level.blocks = nn.ModuleList(
                ResBlock(ch + w if j == 0 else w, w, E) for j in range(cfg.blocks_per_level))
            ch = w
            if i > 0:
                level.upsample = nn.ConvTranspose2d(w, widths[i - 1], 4, stride=2, padding=1)
                ch = widths[i - 1]
            self.up.append(level)

        self.out_norm = nn.GroupNorm(_groups(ch), ch)
        self.out_conv = nn.Conv2d(ch, 1, 1)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        emb = torch.from_numpy(sinusoidal_embedding(t.detach().cpu().numpy(), self.config.time_embed_dim))
        emb = self.time_mlp(emb.to(x.dtype))
        h = self.init_conv(x)
        skips = []
        for level in self.down:
            for block in level.blocks:
                h = block(h, emb)
            skips.append(h)
            if hasattr(level, "downsample"):
                h = level.downsample(h)
        h = self.mid(h, emb)
        for level in self.up:
            h = torch.cat([h, skips.pop()], dim=1)
            for block in level.blocks:
                h = block(h, emb)
            if hasattr(level, "upsample"):
                h = level.upsample(h)
        return self.out_conv(F.silu(self.out_norm(h)))


def parameter_count(config: UNetConfig) -> int:
    """Number of scalar parameters, counted from the architecture by hand.

    conv(i, o, k) = i*o*k*k + o, linear(i, o) = i*o + o, groupnorm(c) = 2c,
    resblock(i, o) = gn(i) + conv(i, o, 3) + linear(E, o) + gn(o)
                     + conv(o, o, 3) + [conv(i, o, 1) if i != o].
    """
    cfg = config.validate()
    E = cfg.time_embed_dim
    conv = lambda i, o, k: i * o * k * k + o  # noqa: E731
    lin = lambda i, o: i * o + o  # noqa: E731

    def res(i, o):
        return 2 * i + conv(i, o, 3) + lin(E, o) + 2 * o + conv(o, o, 3) + (conv(i, o, 1) if i != o else 0)

    widths = cfg.level_widths
    total = conv(cfg.in_channels, cfg.base_width, 3) + lin(E, 4 * E) + lin(4 * E, E)
    ch = cfg.base_width
    for i, w in enumerate(widths):
        for j in range(cfg.blocks_per_level):
            total += res(ch if j == 0 else w, w)
        ch = w
        if i < len(widths) - 1:
            total += conv(w, w, 3)
    total += res(ch, ch)
    for i in reversed(range(len(widths))):
        w = widths[i]
        for j in range(cfg.blocks_per_level):
            total += res(ch + w if j == 0 else w, w)
        ch = w
        if i > 0:
            total += w * widths[i - 1] * 16 + widths[i - 1]
            ch = widths[i - 1]
    return total + 2 * ch + conv(ch, 1, 1)


def _fan_in(module: nn.Module, weight: torch.Tensor) -> int:
    if isinstance(module, nn.ConvTranspose2d):
        # each output pixel sees in_channels * (k / stride)^2 inputs
        k, s = module.kernel_size[0], module.stride[0]
        return weight.shape[0] * (k // s) ** 2
    return int(np.prod(weight.shape[1:]))


def unet_init(config: UNetConfig, rng: RngState, zero_output: bool = True) -> ParameterSet:
    """Draw a fresh ParameterSet.

    Convolution and linear weights are Kaiming-uniform on fan-in, biases and
    group-norm shifts start at zero, group-norm scales at one. The output
    convolution is all zeros unless ``zero_output`` is False, in which case it
    is drawn like every other convolution.
    """
    net = UNet(config)
    modules = dict(net.named_modules())
    params: ParameterSet = {}
    for name, p in net.named_parameters():
        owner_name, _, leaf = name.rpartition(".")
        owner = modules[owner_name]
        shape = tuple(p.shape)
        if isinstance(owner, nn.GroupNorm):
            value = np.ones(shape, DTYPE) if leaf == "weight" else np.zeros(shape, DTYPE)
        elif owner_name == "out_conv" and zero_output:
            value = np.zeros(shape, DTYPE)
        elif leaf == "bias":
            value = np.zeros(shape, DTYPE)
        else:
            bound = math.sqrt(6.0 / _fan_in(owner, p))
            value = rng.uniform(-bound, bound, size=shape).astype(DTYPE)
        params[name] = value
    return params


def build_unet(config: UNetConfig, params: ParameterSet, dtype=torch.float32) -> UNet:
    net = UNet(config)
    names = [n for n, _ in net.named_parameters()]
    if names != list(params):
        raise ShapeError("parameter names do not match the configured architecture")
    with torch.no_grad():
        for name, p in net.named_parameters():
            value = np.asarray(params[name])
            if value.shape != tuple(p.shape):
                raise ShapeError(f"{name}: expected {tuple(p.shape)}, got {value.shape}")
            p.copy_(torch.from_numpy(value.astype(np.float32)))
    return net.to(dtype)


def export_params(net: UNet) -> ParameterSet:
    return {name: p.detach().cpu().numpy().astype(DTYPE, copy=True) for name, p in net.named_parameters()}


def _check_input(x_t, config: UNetConfig, t) -> tuple[np.ndarray, np.ndarray]:
    x_t = as_batch(x_t)
    if x_t.shape[1] != config.in_channels or x_t.shape[2:] != config.image_size:
        raise ShapeError(f"input {x_t.shape} does not match config image_size {config.image_size}")
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (x_t.shape[0],))
    return x_t, t


class UNetDenoiser:
    """Inference wrapper holding a built UNet."""

    def __init__(self, config: UNetConfig, params: ParameterSet):
        self.config = config.validate()
        self.net = build_unet(config, params).eval()

    def predict(self, x_t: np.ndarray, t) -> np.ndarray:
        x_t, t = _check_input(x_t, self.config, t)
        with torch.no_grad():
            out = self.net(torch.from_numpy(x_t), torch.from_numpy(t.copy()))
        return out.numpy()

    def params(self) -> ParameterSet:
        return export_params(self.net)


def unet_predict(params: ParameterSet, config: UNetConfig, x_t: np.ndarray, t) -> np.ndarray:
    return UNetDenoiser(config, params).predict(x_t, t)


class LinearOracleDenoiser:
    """Exact noise predictor when all data mass sits on a single image ``v``."""

    def __init__(self, x0_target: np.ndarray, s: NoiseSchedule):
        self.v = as_batch(x0_target).astype(np.float64)
        self.schedule = s

    def predict(self, x_t: np.ndarray, t) -> np.ndarray:
        x_t = as_batch(x_t)
        if x_t.shape[1:] != self.v.shape[1:]:
            raise ShapeError(f"input {x_t.shape} does not match target {self.v.shape}")
        t = self.schedule.check_t(np.broadcast_to(np.asarray(t), (x_t.shape[0],)))
        a = self.schedule.sqrt_alpha_bar[t - 1].reshape(-1, 1, 1, 1)
        b = self.schedule.sqrt_one_minus_alpha_bar[t - 1].reshape(-1, 1, 1, 1)
        return ((x_t.astype(np.float64) - a * self.v) / b).astype(DTYPE)


def linear_oracle_denoiser(x0_target: np.ndarray, s: NoiseSchedule) -> LinearOracleDenoiser:
    return LinearOracleDenoiser(x0_target, s)
