"""Command-line entry point: ``bagcn <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Callable, Sequence
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .ablation import ablation_grid, run_ablation, summary_table, write_tables
from .attention import dump_attention
from .config import TrainConfig, load_train_config, read_json
from .const import (
    ATTENTION_THRESHOLD,
    DEFAULT_BATCH_SIZE,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_VALIDATION,
    GRADCHECK_SAMPLES,
    GRADCHECK_STEP,
    GRADCHECK_TOLERANCE,
    SPLIT_TEST,
    STREAMS,
)
from .data import convert_npz, describe_manifest, read_manifest
from .errors import ConfigError, DatasetError, NumericalError, ShapeError, ValidationError
from .focus import ContextMode, FocusMode
from .gradcheck import default_cases, run_gradcheck
from .network import fuse_two_stream
from .synth import SYNTH_PRESETS, synth_generate
from .train import compute_metrics, evaluate, train

_LOGGER = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace], None]

_RECORD_FIELDS = set(logging.makeLogRecord({}).__dict__) | {"message", "asctime"}


class JsonLinesFormatter(logging.Formatter):
    """One JSON object per record; ``extra=`` fields are carried along."""

    def format(self, record: logging.LogRecord) -> str:
        payload: dict[str, Any] = {
            "time": self.formatTime(record, "%Y-%m-%dT%H:%M:%S"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        for key, value in record.__dict__.items():
            if key not in _RECORD_FIELDS:
                payload[key] = value
        if record.exc_info:
            payload["exc"] = self.formatException(record.exc_info)
        return json.dumps(payload, default=str)


def configure_logging(level: str, as_json: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if as_json:
        handler.setFormatter(JsonLinesFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    for old in list(root.handlers):
        root.removeHandler(old)
    root.addHandler(handler)
    root.setLevel(level.upper())


def apply_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill options left unset on the command line from ``--config``."""
    if not getattr(args, "config", None):
        return args
    for key, value in read_json(args.config).items():
        dest = key.replace("-", "_")
        if getattr(args, dest, None) is None:
            setattr(args, dest, value)
    return args


def _emit(payload: Any) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


# Train


_TRAIN_FLAGS = (
    "model",
    "manifest",
    "stream",
    "frames",
    "base_lr",
    "momentum",
    "weight_decay",
    "epochs",
    "batch_size",
    "seed",
    "output_dir",
    "max_steps",
    "grad_clip",
)


def _train_config(args: argparse.Namespace) -> TrainConfig:
    source = args.config or {}
    overrides = {key: getattr(args, key, None) for key in _TRAIN_FLAGS}
    if getattr(args, "lr_decay_epochs", None):
        overrides["lr_decay_epochs"] = args.lr_decay_epochs
    cfg = load_train_config(source, overrides)
    if getattr(args, "focus", None) or getattr(args, "context", None):
        focus = FocusMode(args.focus or cfg.model.focus)
        context = ContextMode(args.context or cfg.model.context)
        cfg = replace(cfg, model=cfg.model.with_modes(focus, context))
    return cfg


def cmd_train(args: argparse.Namespace) -> None:
    result = train(_train_config(args))
    _emit(
        {
            "output_dir": str(result.output_dir),
            "best": result.best.to_dict() if result.best else None,
            "final": result.final.to_dict() if result.final else None,
            "steps": len(result.step_losses),
        }
    )


def cmd_eval(args: argparse.Namespace) -> None:
    apply_config(args)
    if not args.checkpoint or not args.manifest:
        raise ConfigError("eval needs --checkpoint and --manifest")
    result = evaluate(
        args.checkpoint,
        args.manifest,
        args.split or SPLIT_TEST,
        stream=args.stream,
        frames=args.frames,
        batch_size=args.batch_size or DEFAULT_BATCH_SIZE,
    )
    if args.scores_out:
        out = Path(args.scores_out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("wb") as fh:
            np.savez(fh, scores=result.scores, labels=result.labels, ids=np.array(result.ids))
        _LOGGER.info("wrote %d score rows to %s", len(result.ids), out)
    _emit(result.metrics.to_dict())


def cmd_ablate(args: argparse.Namespace) -> None:
    base = _train_config(args)
    focus_modes = args.focus_modes or [m.value for m in FocusMode]
    context_modes = args.context_modes or [m.value for m in ContextMode]
    seeds = args.seeds or [base.seed]
    variants = ablation_grid(focus_modes, context_modes)
    result = run_ablation(base, variants, seeds)
    paths = write_tables(result, base.output_dir)
    print(summary_table(result), end="")
    _LOGGER.info("ablation tables written: %s", ", ".join(str(p) for p in paths))


def cmd_gradcheck(args: argparse.Namespace) -> None:
    apply_config(args)
    cases = default_cases(
        frames=args.frames or 6,
        focus_mode=FocusMode(args.focus or FocusMode.ATT),
        context=ContextMode(args.context or ContextMode.BI),
    )
    report = run_gradcheck(
        cases,
        samples=args.samples or GRADCHECK_SAMPLES,
        h=args.step or GRADCHECK_STEP,
        tolerance=args.tolerance or GRADCHECK_TOLERANCE,
        seed=args.seed or 0,
        only=args.layer,
    )
    print(report.render(), end="")
    report.raise_on_failure()


def cmd_dump_attn(args: argparse.Namespace) -> None:
    apply_config(args)
    if not args.checkpoint or not args.manifest:
        raise ConfigError("dump-attn needs --checkpoint and --manifest")
    dump = dump_attention(
        args.checkpoint,
        args.manifest,
        args.split or SPLIT_TEST,
        layer=-1 if args.layer is None else args.layer,
        threshold=ATTENTION_THRESHOLD if args.threshold is None else args.threshold,
        limit=args.limit,
    )
    out = dump.write(args.out or Path(args.checkpoint).with_suffix(".attn.jsonl"))
    _emit(
        {
            "records": str(out),
            "layer": dump.layer,
            "threshold": dump.threshold,
            "classes": [c.to_dict() for c in dump.per_class()],
        }
    )


def _read_scores(path: str | Path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    try:
        with np.load(path) as archive:
            return archive["scores"], archive["labels"], [str(i) for i in archive["ids"]]
    except (OSError, KeyError, ValueError) as err:
        raise DatasetError(f"cannot read scores from {path}: {err}") from err


def cmd_fuse(args: argparse.Namespace) -> None:
    apply_config(args)
    if not args.spatial or not args.motion:
        raise ConfigError("fuse needs --spatial and --motion score files")
    spatial, labels, ids = _read_scores(args.spatial)
    motion, motion_labels, motion_ids = _read_scores(args.motion)
    if ids != motion_ids or not np.array_equal(labels, motion_labels):
        raise ShapeError(f"{args.spatial} and {args.motion} do not cover the same samples")
    fused = fuse_two_stream(spatial, motion)
    report = {}
    for name, scores in (("spatial", spatial), ("motion", motion), ("fused", fused.scores)):
        metrics = compute_metrics(scores, labels, mean_loss=float("nan"))
        report[name] = {"top1": metrics.top1, "top5": metrics.top5}
    _emit(report)


# Data


def cmd_generate_synth(args: argparse.Namespace) -> None:
    apply_config(args)
    preset = args.preset or "standard"
    if preset not in SYNTH_PRESETS:
        raise ConfigError(f"unknown synthetic preset {preset!r}; choose from {sorted(SYNTH_PRESETS)}")
    spec = SYNTH_PRESETS[preset](seed=args.seed or 0, noise=0.05 if args.noise is None else args.noise)
    if args.train_per_class is not None:
        spec = replace(spec, train_per_class=args.train_per_class)
    if args.test_per_class is not None:
        spec = replace(spec, test_per_class=args.test_per_class)
    train_view, test_view = synth_generate(spec, args.out_dir or "data/synth")
    _emit(
        {
            "manifest": str(train_view.path),
            "train": len(train_view.samples),
            "test": len(test_view.samples),
            "checksum": train_view.checksum,
        }
    )


def cmd_inspect(args: argparse.Namespace) -> None:
    _emit(describe_manifest(read_manifest(args.manifest)))


def cmd_convert(args: argparse.Namespace) -> None:
    apply_config(args)
    inputs: dict[str, Path] = {}
    for item in args.input or []:
        split, sep, path = item.partition("=")
        if not sep:
            raise ConfigError(f"--input expects SPLIT=PATH, got {item!r}")
        inputs[split] = Path(path)
    if not inputs or not args.out or not args.topology:
        raise ConfigError("convert needs --input, --out and --topology")
    manifest = convert_npz(
        inputs,
        args.out,
        args.topology,
        classes=args.classes or (),
        max_bodies=args.max_bodies,
        has_confidence=bool(args.confidence),
    )
    _emit(describe_manifest(manifest))


# Parser


def _train_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="train config JSON")
    parser.add_argument("--model", help="model config JSON (overrides the config's model)")
    parser.add_argument("--manifest", help="dataset manifest")
    parser.add_argument("--stream", choices=STREAMS)
    parser.add_argument("--frames", type=int)
    parser.add_argument("--base-lr", type=float)
    parser.add_argument("--momentum", type=float)
    parser.add_argument("--weight-decay", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr-decay-epochs", type=int, nargs="+")
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--output-dir")
    parser.add_argument("--max-steps", type=int)
    parser.add_argument("--grad-clip", type=float, help="clip the global gradient norm (0 disables)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bagcn", description="Skeleton action recognition with focus/diffusion graph networks"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--log-json", action="store_true", help="emit logs as JSON lines")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("train", help="train a model from scratch")
    _train_options(p)
    p.add_argument("--focus", choices=[m.value for m in FocusMode])
    p.add_argument("--context", choices=[m.value for m in ContextMode])
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--stream", choices=STREAMS)
    p.add_argument("--frames", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--scores-out", help="write softmax scores, labels and ids to this .npz")
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("ablate", help="train a focus x context grid over seeds")
    _train_options(p)
    p.add_argument("--focus", dest="focus_modes", nargs="+", choices=[m.value for m in FocusMode])
    p.add_argument(
        "--context", dest="context_modes", nargs="+", choices=[m.value for m in ContextMode]
    )
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_ablate)

    p = commands.add_parser("gradcheck", help="finite-difference check of every layer type")
    p.add_argument("--config")
    p.add_argument("--samples", type=int)
    p.add_argument("--step", type=float)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--focus", choices=[m.value for m in FocusMode])
    p.add_argument("--context", choices=[m.value for m in ContextMode])
    p.add_argument("--layer", action="append", help="restrict to this layer (repeatable)")
    p.set_defaults(func=cmd_gradcheck)

    p = commands.add_parser("dump-attn", help="write attention maps of an att model")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--layer", type=int, help="block index, negative counts from the end")
    p.add_argument("--threshold", type=float)
    p.add_argument("--limit", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_attn)

    p = commands.add_parser("fuse", help="late-fuse spatial and motion score files")
    p.add_argument("--config")
    p.add_argument("--spatial")
    p.add_argument("--motion")
    p.set_defaults(func=cmd_fuse)

    data = commands.add_parser("data", help="dataset utilities")
    data_commands = data.add_subparsers(dest="data_command", required=True)

    p = data_commands.add_parser("generate-synth", help="write a synthetic benchmark")
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(SYNTH_PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--train-per-class", type=int)
    p.add_argument("--test-per-class", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_generate_synth)

    p = data_commands.add_parser("inspect", help="summarize a manifest and verify its blob")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_inspect)

    p = data_commands.add_parser("convert", help="convert .npz arrays to a manifest and blob")
    p.add_argument("--config")
    p.add_argument("--input", action="append", metavar="SPLIT=PATH")
    p.add_argument("--out", help="manifest path; the blob is written next to it")
    p.add_argument("--topology")
    p.add_argument("--classes", nargs="+")
    p.add_argument("--max-bodies", type=int)
    p.add_argument("--confidence", action="store_true", default=None)
    p.set_defaults(func=cmd_convert)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, args.log_json)
    handler: Handler = args.func
    try:
        handler(args)
    except NumericalError as err:
        _LOGGER.error("%s", err)
        return EXIT_NUMERICAL
    except ValidationError as err:
        _LOGGER.error("%s", err)
        return EXIT_VALIDATION
    return EXIT_OK

