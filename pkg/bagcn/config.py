"""JSON configuration: voluptuous schemas and conversion to frozen dataclasses."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import voluptuous as vol

from .block import BlockConfig
from .const import (
    CONF_BASE_LR,
    CONF_BATCH_SIZE,
    CONF_BLOCKS,
    CONF_CONTEXT,
    CONF_CONTEXT_CHANNELS,
    CONF_EPOCHS,
    CONF_FOCUS,
    CONF_FRAMES,
    CONF_GRAD_CLIP,
    CONF_GRAPH,
    CONF_IN_CHANNELS,
    CONF_LR_DECAY_EPOCHS,
    CONF_LR_DECAY_FACTOR,
    CONF_MANIFEST,
    CONF_MAX_STEPS,
    CONF_MID_CHANNELS,
    CONF_MODEL,
    CONF_MOMENTUM,
    CONF_NUM_CLASSES,
    CONF_OUT_CHANNELS,
    CONF_OUTPUT_DIR,
    CONF_RESIDUAL,
    CONF_SEED,
    CONF_STREAM,
    CONF_STRIDE,
    CONF_TEMPORAL_KERNEL,
    CONF_TEST_SPLIT,
    CONF_TOPOLOGY,
    CONF_TRAIN_SPLIT,
    CONF_WEIGHT_DECAY,
    DEFAULT_BASE_LR,
    DEFAULT_BATCH_SIZE,
    DEFAULT_CONTEXT_CHANNELS,
    DEFAULT_EPOCHS,
    DEFAULT_GRAD_CLIP,
    DEFAULT_IN_CHANNELS,
    DEFAULT_LR_DECAY_EPOCHS,
    DEFAULT_LR_DECAY_FACTOR,
    DEFAULT_MOMENTUM,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_SEED,
    DEFAULT_TEMPORAL_KERNEL,
    DEFAULT_TOPOLOGY,
    DEFAULT_WEIGHT_DECAY,
    GRAPH_DIRECTED,
    GRAPH_KINDS,
    SPLIT_TEST,
    SPLIT_TRAIN,
    STREAM_SPATIAL,
    STREAMS,
)
from .errors import ConfigError, TopologyError
from .focus import ContextMode, FocusMode
from .graph import load_topology
from .network import ModelConfig

_LOGGER = logging.getLogger(__name__)

FOCUS_MODES = [m.value for m in FocusMode]
CONTEXT_MODES = [m.value for m in ContextMode]


def _even(value: int) -> int:
    if value % 2:
        raise vol.Invalid("must be even")
    return value


def _odd(value: int) -> int:
    if value % 2 == 0:
        raise vol.Invalid("must be odd")
    return value


BLOCK_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_OUT_CHANNELS): vol.All(vol.Coerce(int), vol.Range(min=4)),
        vol.Optional(CONF_STRIDE, default=1): vol.All(vol.Coerce(int), vol.In([1, 2])),
        vol.Optional(CONF_RESIDUAL, default=True): bool,
        vol.Optional(CONF_MID_CHANNELS): vol.All(vol.Coerce(int), vol.Range(min=1)),
    }
)

MODEL_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_TOPOLOGY, default=DEFAULT_TOPOLOGY): vol.Any(str, dict),
        vol.Optional(CONF_IN_CHANNELS, default=DEFAULT_IN_CHANNELS): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Required(CONF_NUM_CLASSES): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_BLOCKS): vol.All([BLOCK_SCHEMA], vol.Length(min=1)),
        vol.Optional(CONF_FOCUS, default=FocusMode.ATT.value): vol.In(FOCUS_MODES),
        vol.Optional(CONF_CONTEXT, default=ContextMode.BI.value): vol.In(CONTEXT_MODES),
        vol.Optional(CONF_CONTEXT_CHANNELS, default=DEFAULT_CONTEXT_CHANNELS): vol.All(
            vol.Coerce(int), vol.Range(min=2), _even
        ),
        vol.Optional(CONF_TEMPORAL_KERNEL, default=DEFAULT_TEMPORAL_KERNEL): vol.All(
            vol.Coerce(int), vol.Range(min=1), _odd
        ),
        vol.Optional(CONF_GRAPH, default=GRAPH_DIRECTED): vol.In(GRAPH_KINDS),
    }
)

TRAIN_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_MODEL): vol.Any(str, dict),
        vol.Required(CONF_MANIFEST): str,
        vol.Optional(CONF_TRAIN_SPLIT, default=SPLIT_TRAIN): str,
        vol.Optional(CONF_TEST_SPLIT, default=SPLIT_TEST): str,
        vol.Optional(CONF_STREAM, default=STREAM_SPATIAL): vol.In(STREAMS),
        vol.Optional(CONF_FRAMES): vol.Any(None, vol.All(vol.Coerce(int), vol.Range(min=1))),
        vol.Optional(CONF_BASE_LR, default=DEFAULT_BASE_LR): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, min_included=False)
        ),
        vol.Optional(CONF_MOMENTUM, default=DEFAULT_MOMENTUM): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, max=1.0, max_included=False)
        ),
        vol.Optional(CONF_WEIGHT_DECAY, default=DEFAULT_WEIGHT_DECAY): vol.All(
            vol.Coerce(float), vol.Range(min=0.0)
        ),
        vol.Optional(CONF_EPOCHS, default=DEFAULT_EPOCHS): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_LR_DECAY_EPOCHS, default=list(DEFAULT_LR_DECAY_EPOCHS)): [
            vol.All(vol.Coerce(int), vol.Range(min=0))
        ],
        vol.Optional(CONF_LR_DECAY_FACTOR, default=DEFAULT_LR_DECAY_FACTOR): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, max=1.0)
        ),
        vol.Optional(CONF_BATCH_SIZE, default=DEFAULT_BATCH_SIZE): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Optional(CONF_SEED, default=DEFAULT_SEED): vol.Coerce(int),
        vol.Optional(CONF_OUTPUT_DIR, default=DEFAULT_OUTPUT_DIR): str,
        vol.Optional(CONF_MAX_STEPS): vol.Any(None, vol.All(vol.Coerce(int), vol.Range(min=1))),
        vol.Optional(CONF_GRAD_CLIP, default=DEFAULT_GRAD_CLIP): vol.All(
            vol.Coerce(float), vol.Range(min=0.0)
        ),
    }
)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer schedule, data sources and run directory."""

    model: ModelConfig
    manifest: Path
    train_split: str = SPLIT_TRAIN
    test_split: str = SPLIT_TEST
    stream: str = STREAM_SPATIAL
    frames: int | None = None
    base_lr: float = DEFAULT_BASE_LR
    momentum: float = DEFAULT_MOMENTUM
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    epochs: int = DEFAULT_EPOCHS
    lr_decay_epochs: tuple[int, ...] = DEFAULT_LR_DECAY_EPOCHS
    lr_decay_factor: float = DEFAULT_LR_DECAY_FACTOR
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = DEFAULT_SEED
    output_dir: Path = field(default_factory=lambda: Path(DEFAULT_OUTPUT_DIR))
    max_steps: int | None = None
    grad_clip: float = DEFAULT_GRAD_CLIP


def read_json(path: str | Path) -> dict[str, Any]:
    try:
        with Path(path).open(encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def merge_overrides(base: dict[str, Any], overrides: dict[str, Any] | None) -> dict[str, Any]:
    """Shallow merge; ``None`` override values are ignored."""
    merged = dict(base)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    return merged


def _validate(schema: vol.Schema, raw: dict[str, Any], what: str) -> dict[str, Any]:
    try:
        return schema(raw)
    except vol.Invalid as err:
        raise ConfigError(f"invalid {what} config: {err}") from err


def model_config_from_dict(raw: dict[str, Any]) -> ModelConfig:
    valid = _validate(MODEL_SCHEMA, raw, "model")
    try:
        topology = load_topology(valid[CONF_TOPOLOGY])
    except TopologyError as err:
        raise ConfigError(str(err)) from err
    focus = FocusMode(valid[CONF_FOCUS])
    context = ContextMode(valid[CONF_CONTEXT])
    blocks: tuple[BlockConfig, ...] = ()
    if CONF_BLOCKS in valid:
        width = valid[CONF_IN_CHANNELS]
        built = []
        for spec in valid[CONF_BLOCKS]:
            built.append(
                BlockConfig(
                    in_channels=width,
                    out_channels=spec[CONF_OUT_CHANNELS],
                    stride=spec[CONF_STRIDE],
                    residual=spec[CONF_RESIDUAL],
                    focus=focus,
                    context=context,
                    temporal_kernel=valid[CONF_TEMPORAL_KERNEL],
                    context_channels=valid[CONF_CONTEXT_CHANNELS],
                    mid_channels=spec.get(CONF_MID_CHANNELS),
                )
            )
            width = spec[CONF_OUT_CHANNELS]
        blocks = tuple(built)
    return ModelConfig(
        topology=topology,
        num_classes=valid[CONF_NUM_CLASSES],
        in_channels=valid[CONF_IN_CHANNELS],
        blocks=blocks,
        focus=focus,
        context=context,
        context_channels=valid[CONF_CONTEXT_CHANNELS],
        temporal_kernel=valid[CONF_TEMPORAL_KERNEL],
        graph=valid[CONF_GRAPH],
    )


def model_config_to_dict(config: ModelConfig) -> dict[str, Any]:
    """Plain-JSON form; the topology is embedded, not referenced."""
    return {
        CONF_TOPOLOGY: config.topology.to_dict(),
        CONF_IN_CHANNELS: config.in_channels,
        CONF_NUM_CLASSES: config.num_classes,
        CONF_BLOCKS: [
            {
                CONF_OUT_CHANNELS: b.out_channels,
                CONF_STRIDE: b.stride,
                CONF_RESIDUAL: b.residual,
                CONF_MID_CHANNELS: b.bottleneck,
            }
            for b in config.blocks
        ],
        CONF_FOCUS: config.focus.value,
        CONF_CONTEXT: config.context.value,
        CONF_CONTEXT_CHANNELS: config.context_channels,
        CONF_TEMPORAL_KERNEL: config.temporal_kernel,
        CONF_GRAPH: config.graph,
    }


def load_model_config(
    source: str | Path | dict[str, Any], overrides: dict[str, Any] | None = None
) -> ModelConfig:
    raw = source if isinstance(source, dict) else read_json(source)
    return model_config_from_dict(merge_overrides(raw, overrides))


def load_train_config(
    source: str | Path | dict[str, Any], overrides: dict[str, Any] | None = None
) -> TrainConfig:
    """Validate a train config; ``model`` may be a path or an inline dict."""
    raw = source if isinstance(source, dict) else read_json(source)
    valid = _validate(TRAIN_SCHEMA, merge_overrides(raw, overrides), "train")
    if any(b < a for a, b in zip(valid[CONF_LR_DECAY_EPOCHS], valid[CONF_LR_DECAY_EPOCHS][1:])):
        raise ConfigError(f"lr_decay_epochs must be ascending: {valid[CONF_LR_DECAY_EPOCHS]}")
    model_source = valid[CONF_MODEL]
    from_file = not isinstance(source, dict) and not (overrides or {}).get(CONF_MODEL)
    if isinstance(model_source, str) and from_file:
        # model paths are relative to the train config that names them
        model_source = Path(source).parent / model_source
    model = load_model_config(model_source)
    config = TrainConfig(
        model=model,
        manifest=Path(valid[CONF_MANIFEST]),
        train_split=valid[CONF_TRAIN_SPLIT],
        test_split=valid[CONF_TEST_SPLIT],
        stream=valid[CONF_STREAM],
        frames=valid.get(CONF_FRAMES),
        base_lr=valid[CONF_BASE_LR],
        momentum=valid[CONF_MOMENTUM],
        weight_decay=valid[CONF_WEIGHT_DECAY],
        epochs=valid[CONF_EPOCHS],
        lr_decay_epochs=tuple(valid[CONF_LR_DECAY_EPOCHS]),
        lr_decay_factor=valid[CONF_LR_DECAY_FACTOR],
        batch_size=valid[CONF_BATCH_SIZE],
        seed=valid[CONF_SEED],
        output_dir=Path(valid[CONF_OUTPUT_DIR]),
        max_steps=valid.get(CONF_MAX_STEPS),
        grad_clip=valid[CONF_GRAD_CLIP],
    )
    _LOGGER.debug("train config: %s", config)
    return config
