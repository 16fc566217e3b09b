"""The building block: focus-graph conv, focus/diffuse unit, diffusion-graph conv, temporal conv."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .const import (
    DEFAULT_CONTEXT_CHANNELS,
    DEFAULT_TEMPORAL_KERNEL,
    MID_CHANNEL_RATIO,
    MODE_TRAIN,
    SUBSETS,
)
from .errors import ConfigError, ShapeError
from .focus import ContextMode, FocusDiffuseParams, FocusMode, fd_forward
from .graph import PartitionedAdjacency
from .module import BatchNorm, Module, kaiming
from .ops import conv_temporal, einsum, matmul
from .tensor import Parameter, Tensor, relu

_LOGGER = logging.getLogger(__name__)

RESIDUAL_NONE = "none"
RESIDUAL_IDENTITY = "identity"
RESIDUAL_CONV = "conv"


@dataclass(frozen=True)
class BlockConfig:
    """Channel widths, stride and mechanism switches of one block."""

    in_channels: int
    out_channels: int
    stride: int = 1
    residual: bool = True
    focus: FocusMode = FocusMode.ATT
    context: ContextMode = ContextMode.BI
    temporal_kernel: int = DEFAULT_TEMPORAL_KERNEL
    context_channels: int = DEFAULT_CONTEXT_CHANNELS
    mid_channels: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "focus", FocusMode(self.focus))
        object.__setattr__(self, "context", ContextMode(self.context))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(f"channel widths must be positive: {self.in_channels}->{self.out_channels}")
        if self.out_channels % MID_CHANNEL_RATIO:
            raise ConfigError(
                f"out_channels {self.out_channels} is not divisible by {MID_CHANNEL_RATIO}"
            )
        if self.mid_channels is None:
            object.__setattr__(self, "mid_channels", self.out_channels // MID_CHANNEL_RATIO)
        elif self.mid_channels * MID_CHANNEL_RATIO != self.out_channels:
            raise ConfigError(
                f"mid_channels {self.mid_channels} must be out_channels/{MID_CHANNEL_RATIO} "
                f"= {self.out_channels // MID_CHANNEL_RATIO}"
            )
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ConfigError(f"temporal_kernel must be odd and positive, got {self.temporal_kernel}")
        if self.context_channels < 2 or self.context_channels % 2:
            raise ConfigError(f"context_channels must be even, got {self.context_channels}")
        if (
            self.focus is not FocusMode.OFF
            and self.context is ContextMode.NONE
            and self.mid_channels > self.context_channels  # type: ignore[operator]
        ):
            raise ConfigError(
                f"mid_channels {self.mid_channels} exceed context_channels {self.context_channels}"
            )

    @property
    def bottleneck(self) -> int:
        return int(self.mid_channels)  # type: ignore[arg-type]

    @property
    def residual_kind(self) -> str:
        if not self.residual:
            return RESIDUAL_NONE
        if self.in_channels == self.out_channels and self.stride == 1:
            return RESIDUAL_IDENTITY
        return RESIDUAL_CONV

    def output_frames(self, frames: int) -> int:
        return (frames - 1) // self.stride + 1


class GraphConvParams(Module):
    """Per-subset channel projection and edge-importance mask."""

    def __init__(
        self, name: str, in_channels: int, out_channels: int, num_joints: int, rng: np.random.Generator
    ) -> None:
        self.weights = [
            Parameter(f"{name}.weight.{s}", kaiming(rng, (in_channels, out_channels), in_channels))
            for s in SUBSETS
        ]
        self.masks = [Parameter(f"{name}.mask.{s}", np.ones((num_joints, num_joints))) for s in SUBSETS]


def spatial_graph_conv(
    x: Tensor, adjacency: np.ndarray, params: GraphConvParams, use_mask: bool = True
) -> Tensor:
    """``sum_s (M_s * A_s) X W_s`` for ``x`` shaped ``(N, V, T, C_in)``.

    ``use_mask=False`` aggregates with the bare adjacency.
    """
    if x.ndim != 4 or adjacency.shape[-1] != x.shape[1]:
        raise ShapeError(
            f"graph conv: adjacency {adjacency.shape} does not match joints of {x.shape}"
        )
    out: Tensor | None = None
    for a_s, w_s, m_s in zip(adjacency, params.weights, params.masks, strict=True):
        graph = m_s * Tensor(a_s) if use_mask else Tensor(a_s)
        term = matmul(einsum("vw,nwtc->nvtc", graph, x), w_s)
        out = term if out is None else out + term
    assert out is not None
    return out


class Block(Module):
    def __init__(
        self, name: str, config: BlockConfig, num_joints: int, rng: np.random.Generator
    ) -> None:
        cin, cmid, cout = config.in_channels, config.bottleneck, config.out_channels
        self.name = name
        self.config = config
        self.gcn_focus = GraphConvParams(f"{name}.gcn_focus", cin, cmid, num_joints, rng)
        self.bn_focus = BatchNorm(f"{name}.bn_focus", cmid)
        self.focus_diffuse = (
            FocusDiffuseParams(
                f"{name}.focus_diffuse", cmid, config.context_channels, config.context, rng
            )
            if config.focus is not FocusMode.OFF
            else None
        )
        self.gcn_diffuse = GraphConvParams(f"{name}.gcn_diffuse", cmid, cout, num_joints, rng)
        self.bn_diffuse = BatchNorm(f"{name}.bn_diffuse", cout)
        k = config.temporal_kernel
        self.tcn_weight = Parameter(f"{name}.tcn.weight", kaiming(rng, (cout, cout, k), cout * k))
        self.bn_tcn = BatchNorm(f"{name}.bn_tcn", cout)
        self.residual_weight: Parameter | None = None
        self.bn_residual: BatchNorm | None = None
        if config.residual_kind == RESIDUAL_CONV:
            self.residual_weight = Parameter(f"{name}.residual.weight", kaiming(rng, (cin, cout), cin))
            self.bn_residual = BatchNorm(f"{name}.bn_residual", cout)


def block_forward(
    x_in: Tensor,
    block: Block,
    adjacency: PartitionedAdjacency,
    mode: str = MODE_TRAIN,
    attention: list[Tensor] | None = None,
) -> Tensor:
    """Run one block on ``(N, V, T, C_in)``; returns ``(N, V, ceil(T/stride), C_out)``."""
    cfg = block.config
    if x_in.ndim != 4 or x_in.shape[-1] != cfg.in_channels or x_in.shape[1] != adjacency.num_joints:
        raise ShapeError(
            f"{block.name}: input {x_in.shape} does not fit {adjacency.num_joints} joints "
            f"x {cfg.in_channels} channels"
        )
    x_mid = relu(block.bn_focus(spatial_graph_conv(x_in, adjacency.focus, block.gcn_focus), mode))
    x_mid = fd_forward(x_mid, block.focus_diffuse, cfg.focus, cfg.context, attention)
    x_out = block.bn_diffuse(spatial_graph_conv(x_mid, adjacency.diffusion, block.gcn_diffuse), mode)
    x_out = block.bn_tcn(conv_temporal(x_out, block.tcn_weight, cfg.stride), mode)
    match cfg.residual_kind:
        case "identity":
            x_out = x_out + x_in
        case "conv":
            assert block.residual_weight is not None and block.bn_residual is not None
            shortcut = matmul(x_in[:, :, :: cfg.stride, :], block.residual_weight)
            x_out = x_out + block.bn_residual(shortcut, mode)
    return relu(x_out)
