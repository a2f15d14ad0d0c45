"""``ddpm`` command line: train, sample, evaluate, noise-demo, make-shapes.

Option values resolve as built-in defaults < ``--config`` JSON file < flags.
Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .core import ConfigError, DomainError, NumericError, ShapeError, make_rng
from .denoiser import PRESETS
from .diffusion import noise_levels, sample
from .evaluation import STRATEGIES, evaluate_pair, format_table
from .preprocess import CorpusError, PipelineConfig, denormalize, load_corpus, make_grid, write_png
from .schedule import linear_schedule
from .synthetic import write_shapes
from .train import CHECKPOINT_NAME, CheckpointFormatError, TrainConfig, checkpoint_load, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("xray_ddpm")

DEFAULTS: dict[str, dict[str, Any]] = {
    "train": {
        "data": None, "out": "runs/train", "preset": "desk", "image_size": None, "crop_fraction": 0.9,
        "limit": None, "epochs": 50, "lr": 1e-3, "batch_size": 16, "seed": 0,
        "T": 1000, "beta_start": 1e-4, "beta_end": 0.02,
    },
    "sample": {"checkpoint": None, "count": 16, "seed": 0, "out": "runs/sample"},
    "evaluate": {
        "class_a": None, "class_b": None, "label_a": None, "label_b": None, "strategy": "random",
        "pairs": 256, "seed": 0, "image_size": 64, "crop_fraction": 1.0, "out": "eval_report.json",
    },
    "noise-demo": {
        "data": None, "fractions": "0.25", "out": "noise_demo.png", "count": 8, "image_size": 64,
        "crop_fraction": 0.9, "seed": 0, "T": 1000, "beta_start": 1e-4, "beta_end": 0.02,
    },
    "make-shapes": {"out": None, "count": 16, "image_size": 8, "seed": 0},
}


class UsageError(Exception):
    pass


class JsonLinesFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        doc = {"time": round(record.created, 3), "level": record.levelname.lower(),
               "logger": record.name, "message": record.getMessage()}
        if record.exc_info:
            doc["exc"] = self.formatException(record.exc_info)
        return json.dumps(doc)


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLinesFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddpm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help, argument_default=None)
        sp.add_argument("--config", help="flat JSON object of option values")
        return sp

    sp = add("train", "train a denoiser on a directory of images")
    sp.add_argument("--data", help="directory of training images")
    sp.add_argument("--out", help="run directory")
    sp.add_argument("--preset", choices=sorted(PRESETS))
    sp.add_argument("--image-size", type=int)
    sp.add_argument("--crop-fraction", type=float)
    sp.add_argument("--limit", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--T", type=int, dest="T")
    sp.add_argument("--beta-start", type=float)
    sp.add_argument("--beta-end", type=float)

    sp = add("sample", "generate images from a checkpoint")
    sp.add_argument("--checkpoint")
    sp.add_argument("--count", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="output directory")

    sp = add("evaluate", "MSE/SSIM evaluation row for two image directories")
    sp.add_argument("--class-a")
    sp.add_argument("--class-b")
    sp.add_argument("--label-a")
    sp.add_argument("--label-b")
    sp.add_argument("--strategy", choices=STRATEGIES)
    sp.add_argument("--pairs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--image-size", type=int)
    sp.add_argument("--crop-fraction", type=float)
    sp.add_argument("--out", help="JSON report path")

    sp = add("noise-demo", "grid of originals and forward-noised copies")
    sp.add_argument("--data")
    sp.add_argument("--fractions", help="comma-separated fractions of T in (0, 1]")
    sp.add_argument("--out", help="PNG path")
    sp.add_argument("--count", type=int)
    sp.add_argument("--image-size", type=int)
    sp.add_argument("--crop-fraction", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--T", type=int, dest="T")
    sp.add_argument("--beta-start", type=float)
    sp.add_argument("--beta-end", type=float)

    sp = add("make-shapes", "write a synthetic circles/rectangles corpus")
    sp.add_argument("--out")
    sp.add_argument("--count", type=int)
    sp.add_argument("--image-size", type=int)
    sp.add_argument("--seed", type=int)
    return p


def resolve(command: str, args: argparse.Namespace) -> dict[str, Any]:
    opts = dict(DEFAULTS[command])
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a flat JSON object")
        unknown = set(doc) - set(opts)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        opts.update(doc)
    for key in opts:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return opts


def _require(opts: dict, *keys: str) -> None:
    missing = [k for k in keys if opts.get(k) in (None, "")]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} {p} is not a directory")
    return p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(path: Path, command: str, opts: dict, files: list[Path]) -> None:
    doc = {
        "command": command,
        "options": opts,
        "files": [{"path": str(f.relative_to(path.parent)) if f.is_relative_to(path.parent) else str(f),
                   "sha256": _sha256(f)} for f in files],
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _plot_loss(records, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r.epoch for r in records], [r.mean_loss for r in records], marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title("Training Loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def cmd_train(opts: dict) -> int:
    _require(opts, "data")
    data = _require_dir(opts["data"], "data directory")
    preset = PRESETS.get(opts["preset"])
    if preset is None:
        raise UsageError(f"unknown preset {opts['preset']!r}")
    size = opts["image_size"]
    unet_cfg = dataclasses.replace(preset, image_size=(size, size)) if size else preset
    unet_cfg.validate()
    pipe = PipelineConfig(unet_cfg.image_size, opts["crop_fraction"]).validate()
    cfg = TrainConfig(epochs=opts["epochs"], learning_rate=opts["lr"], batch_size=opts["batch_size"],
                      seed=opts["seed"], T=opts["T"], beta_start=opts["beta_start"], beta_end=opts["beta_end"])
    cfg.validate()
    if opts["limit"] is not None and opts["limit"] < 1:
        raise ConfigError("limit must be >= 1")
    corpus = load_corpus(data, pipe, opts["limit"])

    out = Path(opts["out"])
    cfg.checkpoint_dir = str(out / "checkpoints")
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "epochs.jsonl"
    log.info("training on %d images of size %s for %d epochs", len(corpus), unet_cfg.image_size, cfg.epochs)

    with log_path.open("w", encoding="utf-8") as fh:
        def on_epoch(rec):
            fh.write(json.dumps({"epoch": rec.epoch, "mean_loss": rec.mean_loss, "is_best": rec.is_best}) + "\n")
            fh.flush()
            log.info("epoch %d/%d loss %.6f best=%s (%.2fs)", rec.epoch, cfg.epochs, rec.mean_loss,
                     rec.is_best, rec.wall_time)

        try:
            best, records = train(cfg, corpus, unet_cfg, on_epoch=on_epoch)
        finally:
            fh.flush()
    plot = out / "loss.png"
    _plot_loss(records, plot)
    ckpt_path = Path(cfg.checkpoint_dir) / CHECKPOINT_NAME
    write_manifest(out / "manifest.json", "train", opts, [ckpt_path, log_path, plot])
    log.info("best epoch %d loss %.6f -> %s", best.epoch, best.loss, ckpt_path)
    return EXIT_OK


def cmd_sample(opts: dict) -> int:
    _require(opts, "checkpoint")
    if opts["count"] < 1:
        raise ConfigError("count must be >= 1")
    try:
        ckpt = checkpoint_load(opts["checkpoint"])
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint: {exc}") from exc
    h, w = ckpt.unet.image_size
    images = sample(ckpt.denoiser(), (opts["count"], 1, h, w), ckpt.noise_schedule(), make_rng(opts["seed"]))

    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    files = []
    u8 = denormalize(images)
    for i, im in enumerate(u8):
        path = out / f"sample_{i:03d}.png"
        write_png(path, im)
        files.append(path)
    grid = out / "grid.png"
    write_png(grid, make_grid(u8))
    files.append(grid)
    write_manifest(out / "manifest.json", "sample", opts, files)
    log.info("wrote %d samples to %s", len(u8), out)
    return EXIT_OK


def cmd_evaluate(opts: dict) -> int:
    _require(opts, "class_a", "class_b")
    dir_a = _require_dir(opts["class_a"], "class-a directory")
    dir_b = _require_dir(opts["class_b"], "class-b directory")
    if opts["strategy"] not in STRATEGIES:
        raise UsageError(f"strategy must be one of {STRATEGIES}")
    if opts["pairs"] < 1:
        raise ConfigError("pairs must be >= 1")
    pipe = PipelineConfig((opts["image_size"], opts["image_size"]), opts["crop_fraction"]).validate()
    a = load_corpus(dir_a, pipe)
    b = load_corpus(dir_b, pipe)
    report = evaluate_pair(a, b, opts["strategy"], opts["pairs"], opts["seed"],
                           opts["label_a"] or dir_a.name, opts["label_b"] or dir_b.name)
    print(format_table([report]))
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    write_manifest(out.with_name(out.stem + ".manifest.json"), "evaluate", opts, [out])
    return EXIT_OK


def parse_fractions(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        items = list(text)
    else:
        items = [s for s in str(text).split(",") if s.strip()]
    try:
        fractions = [float(f) for f in items]
    except ValueError as exc:
        raise UsageError(f"bad fractions {text!r}") from exc
    if not fractions or any(not 0 < f <= 1 for f in fractions):
        raise UsageError(f"fractions must lie in (0, 1], got {text!r}")
    return fractions


def _labeled_rows(rows: list[list[np.ndarray]], labels: list[str], scale: int):
    from PIL import Image, ImageDraw

    h, w = rows[0][0].shape
    ch, cw, pad, margin = h * scale, w * scale, 2, 48
    ncol = max(len(r) for r in rows)
    canvas = Image.new("L", (margin + ncol * (cw + pad) + pad, len(rows) * (ch + pad) + pad), 0)
    draw = ImageDraw.Draw(canvas)
    for r, (row, label) in enumerate(zip(rows, labels)):
        y = pad + r * (ch + pad)
        draw.text((4, y + ch // 2 - 5), label, fill=255)
        for c, im in enumerate(row):
            cell = np.kron(im, np.ones((scale, scale), dtype=np.uint8))
            canvas.paste(Image.fromarray(cell, mode="L"), (margin + pad + c * (cw + pad), y))
    return canvas


def cmd_noise_demo(opts: dict) -> int:
    fractions = parse_fractions(opts["fractions"])
    _require(opts, "data")
    data = _require_dir(opts["data"], "data directory")
    if opts["count"] < 1:
        raise ConfigError("count must be >= 1")
    schedule = linear_schedule(opts["T"], opts["beta_start"], opts["beta_end"])
    pipe = PipelineConfig((opts["image_size"], opts["image_size"]), opts["crop_fraction"]).validate()
    x0 = load_corpus(data, pipe, opts["count"])

    levels = noise_levels(x0, fractions, schedule, make_rng(opts["seed"]))
    rows = [denormalize(x0)] + [denormalize(np.clip(x, -1.0, 1.0)) for _, x in levels]
    labels = ["0%"] + [f"{round(100 * f)}%" for f in fractions]
    scale = max(1, math.ceil(48 / opts["image_size"]))
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _labeled_rows(rows, labels, scale).save(out, format="PNG")
    write_manifest(out.with_name(out.stem + ".manifest.json"), "noise-demo", opts, [out])
    log.info("noise demo at t=%s written to %s", [t for t, _ in levels], out)
    return EXIT_OK


def cmd_make_shapes(opts: dict) -> int:
    _require(opts, "out")
    if opts["count"] < 1 or opts["image_size"] < 8:
        raise ConfigError("count must be >= 1 and image-size >= 8")
    paths = write_shapes(opts["out"], opts["count"], opts["image_size"], opts["seed"])
    log.info("wrote %d shapes to %s", len(paths), opts["out"])
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "noise-demo": cmd_noise_demo,
    "make-shapes": cmd_make_shapes,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    started = time.perf_counter()
    try:
        code = COMMANDS[args.command](resolve(args.command, args))
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, CorpusError, CheckpointFormatError, ShapeError, DomainError,
            IndexError, TypeError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    log.debug("%s finished in %.2fs", args.command, time.perf_counter() - started)
    return code


if __name__ == "__main__":
    sys.exit(main())
