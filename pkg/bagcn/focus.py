"""Focusing, temporal context and diffusion.

Per frame, joint features are aggregated into one latent node (focusing), the
sequence of latent nodes runs through a stacked recurrent context module, and
the resulting context vector is gated back into every joint (diffusion). One
sigmoid score per joint and frame serves both as the focusing weight and as
the diffusion gate.

Feature maps are ``(N, V, T, C)``; latent nodes are ``(N, 1, T, C)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np

from .const import FORGET_GATE_BIAS
from .errors import ConfigError, ShapeError, ValidationError
from .module import Module, kaiming, uniform
from .ops import add_bias, concat_channels, matmul
from .tensor import (
    Parameter,
    Tensor,
    broadcast_to,
    concat,
    max_,
    reshape,
    sigmoid,
    stack,
    sum_,
    tanh,
    zeros,
)

_LOGGER = logging.getLogger(__name__)

CAM_LAYERS = 2


class FocusMode(str, Enum):
    """How joint features are aggregated into the latent node."""

    OFF = "off"
    MAX = "max"
    AVG = "avg"
    ATT = "att"


class ContextMode(str, Enum):
    """Temporal context module variant."""

    NONE = "none"
    UNI = "uni"
    BI = "bi"


@dataclass(frozen=True)
class AttentionMap:
    """Sigmoid scores of one sample at one block, laid out ``(T, V)``."""

    scores: np.ndarray
    layer: int
    sample_id: str

    def __post_init__(self) -> None:
        if self.scores.ndim != 2:
            raise ShapeError(f"attention map must be (T, V), got {self.scores.shape}")
        if self.scores.size and (self.scores.min() < 0.0 or self.scores.max() > 1.0):
            raise ValidationError(f"attention scores of {self.sample_id} leave [0, 1]")

    @classmethod
    def from_scores(
        cls, scores: Tensor | np.ndarray, layer: int, sample_ids: list[str]
    ) -> list[AttentionMap]:
        """Split a ``(N, V, T, 1)`` score tensor into per-sample maps."""
        data = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
        if data.ndim != 4 or data.shape[-1] != 1 or data.shape[0] != len(sample_ids):
            raise ShapeError(f"cannot split scores {data.shape} over {len(sample_ids)} samples")
        return [
            cls(np.array(data[n, :, :, 0].T), layer, sample_id)
            for n, sample_id in enumerate(sample_ids)
        ]

    def activated_joints(self, threshold: float) -> list[list[int]]:
        """Joints strictly above ``threshold``, per frame."""
        return [np.flatnonzero(row > threshold).tolist() for row in self.scores]

    def to_record(self) -> dict[str, Any]:
        frames, joints = self.scores.shape
        return {
            "sample_id": self.sample_id,
            "layer": self.layer,
            "T": frames,
            "V": joints,
            "scores": self.scores.tolist(),
        }


@dataclass(frozen=True)
class LstmState:
    hidden: Tensor
    cell: Tensor

    @classmethod
    def zeros(cls, batch: int, width: int) -> LstmState:
        return cls(zeros((batch, width)), zeros((batch, width)))


class LstmParams(Module):
    """One direction of one recurrent layer; gates are stacked i, f, o, g."""

    def __init__(self, name: str, in_width: int, hidden: int, rng: np.random.Generator) -> None:
        bound = 1.0 / np.sqrt(hidden)
        self.hidden = hidden
        self.w_input = Parameter(f"{name}.w_input", uniform(rng, (in_width, 4 * hidden), bound))
        self.w_hidden = Parameter(f"{name}.w_hidden", uniform(rng, (hidden, 4 * hidden), bound))
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = FORGET_GATE_BIAS
        self.bias = Parameter(f"{name}.bias", bias, decay=False)


class CamLayer(Module):
    def __init__(
        self, name: str, in_width: int, hidden: int, bidirectional: bool, rng: np.random.Generator
    ) -> None:
        self.forward = LstmParams(f"{name}.forward", in_width, hidden, rng)
        self.backward = LstmParams(f"{name}.backward", in_width, hidden, rng) if bidirectional else None


class FocusDiffuseParams(Module):
    """Weights of the focus/diffuse unit for a bottleneck of ``channels``."""

    def __init__(
        self,
        name: str,
        channels: int,
        context_channels: int,
        context: ContextMode,
        rng: np.random.Generator,
    ) -> None:
        context = ContextMode(context)
        if context is ContextMode.BI and context_channels % 2:
            raise ConfigError(f"bidirectional context needs an even width, got {context_channels}")
        if context is ContextMode.NONE and channels > context_channels:
            raise ConfigError(
                f"without a context module {channels} channels cannot be padded to {context_channels}"
            )
        self.channels = channels
        self.context_channels = context_channels
        self.context = context
        self.score_weight = Parameter(f"{name}.score.weight", kaiming(rng, (channels, 1), channels))
        self.score_bias = Parameter(f"{name}.score.bias", np.zeros(1), decay=False)
        self.w_node = Parameter(f"{name}.w_node", kaiming(rng, (channels, channels), channels))
        self.w_context = Parameter(f"{name}.w_context", kaiming(rng, (channels, channels), channels))
        # context rows start at zero: the gated context enters through learning only
        self.w_fuse = Parameter(
            f"{name}.w_fuse",
            np.concatenate(
                [kaiming(rng, (channels, channels), channels), np.zeros((context_channels, channels))]
            ),
        )
        self.cam_layers: list[CamLayer] = []
        if context is not ContextMode.NONE:
            bidirectional = context is ContextMode.BI
            hidden = context_channels // 2 if bidirectional else context_channels
            width = channels
            for layer in range(CAM_LAYERS):
                self.cam_layers.append(
                    CamLayer(f"{name}.cam.{layer}", width, hidden, bidirectional, rng)
                )
                width = context_channels


def attention_scores(f_in: Tensor, params: FocusDiffuseParams) -> Tensor:
    """Per joint and frame sigmoid score, shaped ``(N, V, T, 1)``."""
    return sigmoid(add_bias(matmul(f_in, params.score_weight), params.score_bias))


def focus(
    f_in: Tensor,
    mode: FocusMode,
    params: FocusDiffuseParams,
    scores: Tensor | None = None,
) -> Tensor:
    """Aggregate joints into the latent node and project it by ``w_node``."""
    n, v, t, c = f_in.shape
    match FocusMode(mode):
        case FocusMode.ATT:
            if scores is None:
                scores = attention_scores(f_in, params)
            weighted = sum_(broadcast_to(scores, f_in.shape) * f_in, axis=1, keepdims=True)
            total = broadcast_to(sum_(scores, axis=1, keepdims=True), (n, 1, t, c))
            node = weighted / total
        case FocusMode.AVG:
            node = sum_(f_in, axis=1, keepdims=True) / float(v)
        case FocusMode.MAX:
            node = max_(f_in, axis=1, keepdims=True)
        case FocusMode.OFF:
            raise ValidationError("focus mode 'off' has no latent node; bypass the unit instead")
    return matmul(node, params.w_node)


def _lstm_step(projected: Tensor, state: LstmState, params: LstmParams) -> LstmState:
    h = params.hidden
    gates = add_bias(projected + matmul(state.hidden, params.w_hidden), params.bias)
    i = sigmoid(gates[..., 0:h])
    f = sigmoid(gates[..., h : 2 * h])
    o = sigmoid(gates[..., 2 * h : 3 * h])
    g = tanh(gates[..., 3 * h : 4 * h])
    cell = f * state.cell + i * g
    return LstmState(o * tanh(cell), cell)


def lstm_cell(x_t: Tensor, state: LstmState, params: LstmParams) -> LstmState:
    """One recurrent step for ``x_t`` shaped ``(N, in_width)``."""
    if x_t.shape[-1] != params.w_input.shape[0] or state.hidden.shape[-1] != params.hidden:
        raise ShapeError(
            f"lstm_cell: input {x_t.shape} / state {state.hidden.shape} do not fit "
            f"weights {params.w_input.shape}"
        )
    return _lstm_step(matmul(x_t, params.w_input), state, params)


def _run_direction(seq: Tensor, params: LstmParams, reverse: bool) -> Tensor:
    n, t, _ = seq.shape
    projected = matmul(seq, params.w_input)
    state = LstmState.zeros(n, params.hidden)
    outputs: list[Tensor] = [None] * t  # type: ignore[list-item]
    for step in range(t - 1, -1, -1) if reverse else range(t):
        state = _lstm_step(projected[:, step, :], state, params)
        outputs[step] = state.hidden
    return stack(outputs, axis=1)


def cam_forward(g_s: Tensor, params: FocusDiffuseParams, context: ContextMode) -> Tensor:
    """Temporal context of the latent nodes, ``(N, 1, T, C')`` to ``(N, 1, T, Ĉ)``.

    The bidirectional output is ``[backward, forward]`` along channels.
    """
    context = ContextMode(context)
    if context is ContextMode.NONE or not params.cam_layers:
        raise ValidationError("cam_forward needs a 'uni' or 'bi' context module")
    n, _, t, c = g_s.shape
    if t == 0:
        raise ShapeError("context module needs at least one frame")
    seq = matmul(reshape(g_s, (n, t, c)), params.w_context)
    for layer in params.cam_layers:
        fwd = _run_direction(seq, layer.forward, reverse=False)
        if layer.backward is not None:
            seq = concat([_run_direction(seq, layer.backward, reverse=True), fwd], axis=-1)
        else:
            seq = fwd
    return reshape(seq, (n, 1, t, params.context_channels))


def diffuse(f_in: Tensor, g_st: Tensor, scores: Tensor, w_fuse: Tensor) -> Tensor:
    """Gate the context into every joint and fuse it with the joint features."""
    n, v, t, c = f_in.shape
    width = g_st.shape[-1]
    if g_st.shape != (n, 1, t, width):
        raise ShapeError(f"diffuse: context {g_st.shape} does not match features {f_in.shape}")
    if scores.shape != (n, v, t, 1):
        raise ShapeError(f"diffuse: scores {scores.shape} do not match features {f_in.shape}")
    target = (n, v, t, width)
    f_g = broadcast_to(scores, target) * broadcast_to(g_st, target)
    return matmul(concat_channels(f_in, f_g), w_fuse)


def _pad_channels(x: Tensor, width: int) -> Tensor:
    missing = width - x.shape[-1]
    if missing == 0:
        return x
    return concat([x, zeros((*x.shape[:-1], missing))], axis=-1)


def fd_forward(
    x_mid: Tensor,
    params: FocusDiffuseParams | None,
    mode: FocusMode,
    context: ContextMode,
    attention: list[Tensor] | None = None,
) -> Tensor:
    """Full focus/diffuse unit; mode ``off`` returns ``x_mid`` itself.

    When ``attention`` is a list, the score tensor is appended to it.
    """
    mode, context = FocusMode(mode), ContextMode(context)
    if mode is FocusMode.OFF:
        return x_mid
    if params is None:
        raise ConfigError(f"focus mode {mode.value!r} needs focus/diffuse parameters")
    scores = attention_scores(x_mid, params)
    if attention is not None:
        attention.append(scores)
    node = focus(x_mid, mode, params, scores)
    if context is ContextMode.NONE:
        g_st = _pad_channels(matmul(node, params.w_context), params.context_channels)
    else:
        g_st = cam_forward(node, params, context)
    return diffuse(x_mid, g_st, scores, params.w_fuse)
