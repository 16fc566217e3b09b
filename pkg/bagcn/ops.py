"""Differentiable operations built on the tape in ``bagcn.tensor``."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .const import BN_EPSILON, BN_MOMENTUM, MODE_EVAL, MODE_TRAIN
from .errors import LabelError, ShapeError, ValidationError
from .tensor import Tensor, as_tensor, concat, record

_LOGGER = logging.getLogger(__name__)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Multiply the last axis of ``a`` with a 2-D ``b``.

    ``a`` may carry any number of leading axes; they are treated as a batch of
    row vectors. Backward: ``da = g @ b.T`` and ``db = a.T @ g`` summed over
    the leading axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    x, y = a.data, b.data
    inner, cols = y.shape

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return g @ y.T, x.reshape(-1, inner).T @ g.reshape(-1, cols)

    return record("matmul", x @ y, (a, b), grad_fn)


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum with an explicit output, e.g. ``"vw,nwtc->nvtc"``.

    Every index of an operand must appear in the other operand or the output,
    so that each backward rule is itself an einsum.
    """
    a, b = as_tensor(a), as_tensor(b)
    spec = subscripts.replace(" ", "")
    try:
        operands, out = spec.split("->")
        sa, sb = operands.split(",")
    except ValueError as err:
        raise ValidationError(f"einsum needs 'a,b->out', got {subscripts!r}") from err
    for s in (sa, sb, out):
        if len(set(s)) != len(s):
            raise ValidationError(f"einsum: repeated index in {s!r}")
    if not set(sa) <= set(sb) | set(out) or not set(sb) <= set(sa) | set(out):
        raise ValidationError(f"einsum: an index is summed inside one operand in {subscripts!r}")
    try:
        data = np.einsum(f"{sa},{sb}->{out}", a.data, b.data)
    except ValueError as err:
        raise ShapeError(f"einsum {subscripts!r}: incompatible shapes {a.shape} and {b.shape}") from err
    x, y = a.data, b.data

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return np.einsum(f"{out},{sb}->{sa}", g, y), np.einsum(f"{out},{sa}->{sb}", g, x)

    return record("einsum", data, (a, b), grad_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the trailing (channel) axis."""
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_channels: leading extents differ: {a.shape} vs {b.shape}")
    return concat([a, b], axis=-1)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel vector to the trailing axis."""
    if bias.shape != (x.shape[-1],):
        raise ShapeError(f"add_bias: bias {bias.shape} does not match channels of {x.shape}")
    lead = tuple(range(x.ndim - 1))

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return g, g.sum(axis=lead)

    return record("add_bias", x.data + bias.data, (x, bias), grad_fn)


@dataclass
class BatchNormStats:
    """Running statistics of one batch-norm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    updates: int = field(default=0, compare=False)

    @classmethod
    def fresh(cls, channels: int) -> BatchNormStats:
        return cls(np.zeros(channels), np.ones(channels))


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: BatchNormStats,
    mode: str = MODE_TRAIN,
    eps: float = BN_EPSILON,
) -> Tensor:
    """Normalize each trailing-axis channel over all other axes.

    Train mode uses batch statistics and folds them into ``stats`` with
    ``running = momentum * running + (1 - momentum) * batch``; eval mode reads
    ``stats`` and leaves it untouched.
    """
    channels = x.shape[-1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(
            f"batch_norm: affine shapes {gamma.shape}/{beta.shape} do not match {x.shape}"
        )
    count = x.size // channels if channels else 0
    if count == 0:
        raise ShapeError(f"batch_norm: empty batch {x.shape}")
    axes = tuple(range(x.ndim - 1))
    data = x.data

    if mode == MODE_TRAIN:
        mu = data.mean(axis=axes)
        var = data.var(axis=axes)
        unbiased = var * count / (count - 1) if count > 1 else var
        m = stats.momentum
        stats.running_mean = m * stats.running_mean + (1.0 - m) * mu
        stats.running_var = m * stats.running_var + (1.0 - m) * unbiased
        stats.updates += 1
    elif mode == MODE_EVAL:
        mu, var = stats.running_mean, stats.running_var
    else:
        raise ValidationError(f"batch_norm: unknown mode {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (data - mu) * inv_std
    scale = gamma.data

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        d_gamma = (g * x_hat).sum(axis=axes)
        d_beta = g.sum(axis=axes)
        d_hat = g * scale
        if mode == MODE_EVAL:
            return d_hat * inv_std, d_gamma, d_beta
        d_x = (
            inv_std
            / count
            * (count * d_hat - d_hat.sum(axis=axes) - x_hat * (d_hat * x_hat).sum(axis=axes))
        )
        return d_x, d_gamma, d_beta

    return record("batch_norm", x_hat * scale + beta.data, (x, gamma, beta), grad_fn)


def conv_temporal(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Zero-padded 1-D convolution along the time axis (second to last).

    ``x`` is ``(..., T, C_in)`` and ``w`` is ``(C_out, C_in, K)`` with odd
    ``K``; the output is ``(..., (T - 1) // stride + 1, C_out)``.
    """
    if stride < 1:
        raise ValidationError(f"conv_temporal: stride must be >= 1, got {stride}")
    if w.ndim != 3 or x.ndim < 2 or w.shape[1] != x.shape[-1]:
        raise ShapeError(f"conv_temporal: kernel {w.shape} does not fit input {x.shape}")
    c_out, c_in, k = w.shape
    if k % 2 == 0:
        raise ValidationError(f"conv_temporal: kernel length must be odd, got {k}")
    pad = (k - 1) // 2
    lead, t = x.shape[:-2], x.shape[-2]
    t_out = (t - 1) // stride + 1
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    padded = np.pad(x.data, widths)
    # windows[..., t, j, c] = padded[..., t * stride + j, c]
    windows = np.stack(
        [padded[..., j : j + (t_out - 1) * stride + 1 : stride, :] for j in range(k)], axis=-2
    )
    cols = windows.reshape(-1, k * c_in)
    kernel = w.data.transpose(2, 1, 0).reshape(k * c_in, c_out)
    out = (cols @ kernel).reshape(*lead, t_out, c_out)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        flat = g.reshape(-1, c_out)
        d_kernel = cols.T @ flat
        d_w = d_kernel.reshape(k, c_in, c_out).transpose(2, 1, 0)
        d_windows = (flat @ kernel.T).reshape(*lead, t_out, k, c_in)
        d_padded = np.zeros(padded.shape)
        for j in range(k):
            d_padded[..., j : j + (t_out - 1) * stride + 1 : stride, :] += d_windows[..., j, :]
        return d_padded[..., pad : pad + t, :], d_w

    return record("conv_temporal", out, (x, w), grad_fn)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array (no tape)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int] | np.ndarray) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ShapeError(f"softmax_cross_entropy: logits must be non-empty (N, K), got {logits.shape}")
    n, k = logits.shape
    targets = np.asarray(labels, dtype=np.int64)
    if targets.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy: {targets.shape} labels for {n} rows")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        bad = int(targets[(targets < 0) | (targets >= k)][0])
        raise LabelError(f"label {bad} outside [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(n)
    loss = -log_probs[rows, targets].mean()

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        d = np.exp(log_probs)
        d[rows, targets] -= 1.0
        return (d * (g / n),)

    return record("softmax_cross_entropy", loss, (logits,), grad_fn)
