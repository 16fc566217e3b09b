"""Full model: data BN, block stack, global pooling, classifier, and two-stream fusion."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .block import Block, BlockConfig, block_forward
from .const import (
    DEFAULT_BLOCK_CHANNELS,
    DEFAULT_CONTEXT_CHANNELS,
    DEFAULT_DOWNSAMPLE_BLOCKS,
    DEFAULT_IN_CHANNELS,
    DEFAULT_TEMPORAL_KERNEL,
    GRAPH_DIRECTED,
    GRAPH_KINDS,
    MODE_EVAL,
)
from .errors import ConfigError, ShapeError
from .focus import ContextMode, FocusMode
from .graph import SkeletonTopology, build_partitioned_adjacency
from .module import BatchNorm, Module, kaiming
from .ops import add_bias, matmul
from .tensor import Parameter, Tensor, mean, reshape

_LOGGER = logging.getLogger(__name__)


def default_schedule(
    in_channels: int = DEFAULT_IN_CHANNELS,
    *,
    channels: tuple[int, ...] = DEFAULT_BLOCK_CHANNELS,
    downsample: tuple[int, ...] = DEFAULT_DOWNSAMPLE_BLOCKS,
    focus: FocusMode = FocusMode.ATT,
    context: ContextMode = ContextMode.BI,
    context_channels: int = DEFAULT_CONTEXT_CHANNELS,
    temporal_kernel: int = DEFAULT_TEMPORAL_KERNEL,
) -> tuple[BlockConfig, ...]:
    """Chain of blocks; the first has no residual, ``downsample`` blocks use stride 2."""
    blocks = []
    width = in_channels
    for index, out in enumerate(channels):
        blocks.append(
            BlockConfig(
                in_channels=width,
                out_channels=out,
                stride=2 if index in downsample else 1,
                residual=index > 0,
                focus=focus,
                context=context,
                temporal_kernel=temporal_kernel,
                context_channels=context_channels,
            )
        )
        width = out
    return tuple(blocks)


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to build a model, except the seed."""

    topology: SkeletonTopology
    num_classes: int
    in_channels: int = DEFAULT_IN_CHANNELS
    blocks: tuple[BlockConfig, ...] = field(default=())
    focus: FocusMode = FocusMode.ATT
    context: ContextMode = ContextMode.BI
    context_channels: int = DEFAULT_CONTEXT_CHANNELS
    temporal_kernel: int = DEFAULT_TEMPORAL_KERNEL
    graph: str = GRAPH_DIRECTED

    def __post_init__(self) -> None:
        object.__setattr__(self, "focus", FocusMode(self.focus))
        object.__setattr__(self, "context", ContextMode(self.context))
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be positive, got {self.num_classes}")
        if self.graph not in GRAPH_KINDS:
            raise ConfigError(f"graph must be one of {GRAPH_KINDS}, got {self.graph!r}")
        if not self.blocks:
            object.__setattr__(
                self,
                "blocks",
                default_schedule(
                    self.in_channels,
                    focus=self.focus,
                    context=self.context,
                    context_channels=self.context_channels,
                    temporal_kernel=self.temporal_kernel,
                ),
            )
        width = self.in_channels
        for index, block in enumerate(self.blocks):
            if block.in_channels != width:
                raise ConfigError(
                    f"block {index} expects {block.in_channels} input channels, previous gives {width}"
                )
            width = block.out_channels

    @property
    def feature_width(self) -> int:
        return self.blocks[-1].out_channels

    def with_modes(self, focus: FocusMode, context: ContextMode) -> ModelConfig:
        """Same schedule with every block switched to ``focus``/``context``."""
        blocks = tuple(replace(b, focus=focus, context=context) for b in self.blocks)
        return replace(self, focus=focus, context=context, blocks=blocks)

    def frame_schedule(self, frames: int) -> list[int]:
        """Temporal length after each block."""
        trace = []
        for block in self.blocks:
            frames = block.output_frames(frames)
            trace.append(frames)
        return trace


class BAGCNModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        joints = config.topology.num_joints
        self.config = config
        self.seed = seed
        self.adjacency = build_partitioned_adjacency(config.topology, config.graph)
        self.data_bn = BatchNorm("data_bn", config.in_channels)
        self.blocks = [
            Block(f"blocks.{index}", block, joints, rng) for index, block in enumerate(config.blocks)
        ]
        width = config.feature_width
        self.classifier_weight = Parameter(
            "classifier.weight", kaiming(rng, (width, config.num_classes), width)
        )
        self.classifier_bias = Parameter("classifier.bias", np.zeros(config.num_classes), decay=False)
        self.named_parameters()


def build_model(config: ModelConfig, seed: int = 0) -> BAGCNModel:
    model = BAGCNModel(config, seed)
    _LOGGER.info(
        "built model: %d blocks, %d joints, %d classes, %d parameters (focus=%s, context=%s)",
        len(config.blocks),
        config.topology.num_joints,
        config.num_classes,
        model.num_parameters(),
        config.focus.value,
        config.context.value,
    )
    return model


def forward(
    model: BAGCNModel,
    batch: Tensor | np.ndarray,
    mode: str = MODE_EVAL,
    attention: list[Tensor] | None = None,
    shape_trace: list[tuple[int, ...]] | None = None,
) -> Tensor:
    """Logits for ``(N, V, T, C)`` or multi-body ``(N, M, V, T, C)`` input.

    Bodies run as extra batch entries and their pooled features are averaged
    before the classifier. ``attention`` collects each block's score tensor
    and ``shape_trace`` each block's output shape.
    """
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    cfg = model.config
    if x.ndim == 5:
        samples, bodies = x.shape[:2]
        x = reshape(x, (samples * bodies, *x.shape[2:]))
    elif x.ndim == 4:
        samples, bodies = x.shape[0], 1
    else:
        raise ShapeError(f"batch must be (N, V, T, C) or (N, M, V, T, C), got {x.shape}")
    if x.shape[0] == 0 or x.shape[2] == 0:
        raise ShapeError(f"empty batch {x.shape}")
    if x.shape[1] != cfg.topology.num_joints or x.shape[3] != cfg.in_channels:
        raise ShapeError(
            f"batch {x.shape} does not match {cfg.topology.num_joints} joints "
            f"x {cfg.in_channels} channels"
        )
    x = model.data_bn(x, mode)
    for block in model.blocks:
        x = block_forward(x, block, model.adjacency, mode, attention)
        if shape_trace is not None:
            shape_trace.append(x.shape)
    pooled = mean(x, axis=(1, 2))
    if bodies > 1:
        pooled = mean(reshape(pooled, (samples, bodies, cfg.feature_width)), axis=1)
    return add_bias(matmul(pooled, model.classifier_weight), model.classifier_bias)


class FusedPrediction(NamedTuple):
    scores: np.ndarray
    predictions: np.ndarray


def fuse_two_stream(scores_spatial: np.ndarray, scores_motion: np.ndarray) -> FusedPrediction:
    """Add two softmax score tables and take the per-row argmax."""
    a = np.asarray(scores_spatial, dtype=np.float64)
    b = np.asarray(scores_motion, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"cannot fuse score tables {a.shape} and {b.shape}")
    fused = a + b
    return FusedPrediction(fused, np.argmax(fused, axis=1))
