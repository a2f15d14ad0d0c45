"""Noise-prediction training loop and the binary checkpoint format."""

from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .core import DTYPE, ConfigError, NumericError, RngState, as_batch, batch_mse, make_rng, split_rng
from .denoiser import ParameterSet, UNet, UNetConfig, UNetDenoiser, build_unet, export_params, unet_init
from .diffusion import forward_closed_form
from .schedule import NoiseSchedule, linear_schedule

log = logging.getLogger(__name__)

MAGIC = b"DFCK"
FORMAT_VERSION = 1
CHECKPOINT_NAME = "best.ckpt"


class CheckpointFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class TrainingAborted(NumericError):
    """Raised when a step loss goes non-finite; carries the epochs finished so far."""

    def __init__(self, message: str, records: list):
        super().__init__(message)
        self.records = records


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    checkpoint_dir: Optional[str] = None

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        self.schedule()
        return self

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.T, self.beta_start, self.beta_end)


# best-run settings reported for the 256x256 pneumonia corpus; too large to train at desk scale
PAPER_PRESET = TrainConfig(epochs=50, learning_rate=1e-3, batch_size=16, T=1000)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    is_best: bool
    wall_time: float


@dataclass
class Checkpoint:
    schedule: dict
    unet: UNetConfig
    params: ParameterSet
    epoch: int
    loss: float
    seed: int
    version: int = FORMAT_VERSION

    def noise_schedule(self) -> NoiseSchedule:
        return NoiseSchedule.from_config(self.schedule)

    def denoiser(self) -> UNetDenoiser:
        return UNetDenoiser(self.unet, self.params)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, value in ckpt.params.items():
        data = np.ascontiguousarray(value, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(np.shape(value)), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = {
        "schedule": ckpt.schedule,
        "unet": ckpt.unet.to_dict(),
        "epoch": int(ckpt.epoch),
        "loss": float(ckpt.loss),
        "seed": int(ckpt.seed),
        "parameters": manifest,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<II", ckpt.version, len(blob)), blob, *chunks])


def checkpoint_save(ckpt: Checkpoint, path) -> None:
    """Write atomically, so an interrupted save never clobbers the previous file."""
    path = Path(path)
    data = checkpoint_bytes(ckpt)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointFormatError("bad magic, not a checkpoint file", 0)
    if len(data) < 12:
        raise CheckpointFormatError("truncated header", len(data))
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported version {version}", 4)
    start = 12 + hlen
    if start > len(data):
        raise CheckpointFormatError("truncated JSON header", len(data))
    try:
        header = json.loads(data[12:start].decode("utf-8"))
        unet = UNetConfig.from_dict(header["unet"])
        NoiseSchedule.from_config(header["schedule"])
        entries = header["parameters"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"invalid header: {exc}", 12) from exc
    params: ParameterSet = {}
    expected = 0
    for entry in entries:
        shape = tuple(int(s) for s in entry["shape"])
        offset = int(entry["offset"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset != expected:
            raise CheckpointFormatError(f"parameter {entry['name']} at unexpected offset", start + offset)
        if start + offset + nbytes > len(data):
            raise CheckpointFormatError(f"truncated data for {entry['name']}", len(data))
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=start + offset)
        params[entry["name"]] = arr.reshape(shape).astype(DTYPE)
        expected = offset + nbytes
    if start + expected != len(data):
        raise CheckpointFormatError("trailing bytes after parameter data", start + expected)
    return Checkpoint(header["schedule"], unet, params, header["epoch"], header["loss"], header["seed"], version)


def checkpoint_load(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())


def loss_simple(eps: np.ndarray, eps_hat: np.ndarray) -> float:
    """Mean squared error between true and predicted noise."""
    return batch_mse(eps, eps_hat)


@dataclass
class TrainState:
    net: UNet
    optimizer: torch.optim.Optimizer
    schedule: NoiseSchedule
    steps: int = 0

    @classmethod
    def create(cls, config: UNetConfig, params: ParameterSet, schedule: NoiseSchedule,
               learning_rate: float) -> "TrainState":
        net = build_unet(config, params).train()
        opt = torch.optim.Adam(net.parameters(), lr=learning_rate, betas=(0.9, 0.999), eps=1e-8)
        return cls(net, opt, schedule)

    def params(self) -> ParameterSet:
        return export_params(self.net)


def train_step(state: TrainState, x0_batch: np.ndarray, rng: RngState) -> float:
    """One Adam update on the noise-prediction loss; returns the pre-update loss."""
    x0 = as_batch(x0_batch)
    t = rng.integers(1, state.schedule.T + 1, size=x0.shape[0])
    fs = forward_closed_form(x0, t, state.schedule, rng)
    state.optimizer.zero_grad(set_to_none=True)
    pred = state.net(torch.from_numpy(fs.x_t), torch.from_numpy(t))
    target = torch.from_numpy(fs.eps).to(torch.float64)
    loss = torch.mean((pred.to(torch.float64) - target) ** 2)
    value = float(loss.item())
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss {value} at step {state.steps + 1}")
    loss.backward()
    state.optimizer.step()
    state.steps += 1
    return value


def _check_writable(directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    probe = tempfile.NamedTemporaryFile(dir=directory, delete=True)
    probe.close()


def train(cfg: TrainConfig, corpus: np.ndarray, unet_config: Optional[UNetConfig] = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> tuple[Checkpoint, list[EpochRecord]]:
    """Train a fresh UNet on ``corpus`` and keep the lowest-loss epoch.

    Each epoch shuffles the corpus with the run seed and walks it in
    ``ceil(n / batch_size)`` steps. When ``cfg.checkpoint_dir`` is set the best
    checkpoint is rewritten there every time the epoch loss strictly improves.
    """
    cfg.validate()
    corpus = as_batch(corpus)
    n = corpus.shape[0]
    if unet_config is None:
        unet_config = UNetConfig(image_size=corpus.shape[2:])
    unet_config.validate()
    ckpt_path = None
    if cfg.checkpoint_dir is not None:
        _check_writable(Path(cfg.checkpoint_dir))
        ckpt_path = Path(cfg.checkpoint_dir) / CHECKPOINT_NAME

    schedule = cfg.schedule()
    init_rng, data_rng = split_rng(make_rng(cfg.seed), 2)
    state = TrainState.create(unet_config, unet_init(unet_config, init_rng), schedule, cfg.learning_rate)

    best: Optional[Checkpoint] = None
    records: list[EpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = data_rng.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            try:
                total += train_step(state, corpus[idx], data_rng) * len(idx)
            except NumericError as exc:
                raise TrainingAborted(f"epoch {epoch}: {exc}", records) from exc
        mean_loss = total / n
        is_best = best is None or mean_loss < best.loss
        if is_best:
            best = Checkpoint(schedule.to_config(), unet_config, state.params(), epoch, mean_loss, cfg.seed)
            if ckpt_path is not None:
                checkpoint_save(best, ckpt_path)
        rec = EpochRecord(epoch, mean_loss, is_best, time.perf_counter() - start)
        records.append(rec)
        log.info("epoch %d loss %.6f%s", epoch, mean_loss, " (best)" if is_best else "")
        if on_epoch is not None:
            on_epoch(rec)
    return best, records
