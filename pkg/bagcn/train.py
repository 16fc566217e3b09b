"""SGD training, evaluation and metrics."""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Iterable
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, TextIO

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .const import (
    BEST_CHECKPOINT,
    DEFAULT_BATCH_SIZE,
    FINAL_CHECKPOINT,
    LAST_CHECKPOINT,
    METRICS_LOG,
    MODE_EVAL,
    MODE_TRAIN,
    STREAM_SPATIAL,
    TOP_K,
)
from .data import DatasetManifest, SkeletonDataset, load_dataset, read_manifest, stack_batch
from .errors import LabelError, NumericalError, TopologyError, ValidationError
from .graph import SkeletonTopology
from .network import BAGCNModel, build_model, forward
from .ops import softmax, softmax_cross_entropy
from .tensor import Parameter, backward

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class Metrics:
    """Accuracy summary of one pass; top-k uses ``k = min(5, K)``."""

    top1: float
    top5: float
    mean_loss: float
    per_class: dict[int, float] = field(default_factory=dict)
    samples: int = 0

    def to_dict(self) -> dict[str, Any]:
        record = asdict(self)
        record["per_class"] = {str(k): v for k, v in self.per_class.items()}
        return record


def compute_metrics(
    scores: np.ndarray, labels: np.ndarray, mean_loss: float | None = None
) -> Metrics:
    """Top-1/top-5 and per-class top-1 from logits or probabilities ``(N, K)``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or labels.shape != (scores.shape[0],):
        raise ValidationError(f"scores {scores.shape} and labels {labels.shape} do not match")
    n, k = scores.shape
    if n == 0:
        return Metrics(0.0, 0.0, float("nan") if mean_loss is None else mean_loss)
    if labels.min() < 0 or labels.max() >= k:
        raise LabelError(f"labels must lie in [0, {k})")
    if mean_loss is None:
        mean_loss = softmax_cross_entropy_value(scores, labels)
    predicted = np.argmax(scores, axis=1)
    hit1 = predicted == labels
    top = min(TOP_K, k)
    ranked = np.argsort(-scores, axis=1, kind="stable")[:, :top]
    hitk = (ranked == labels[:, None]).any(axis=1) | hit1
    per_class = {int(c): float(hit1[labels == c].mean()) for c in np.unique(labels)}
    return Metrics(float(hit1.mean()), float(hitk.mean()), float(mean_loss), per_class, n)


def softmax_cross_entropy_value(logits: np.ndarray, labels: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(len(labels)), labels].mean())


@dataclass
class SgdState:
    """Momentum buffers keyed by parameter name."""

    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0


def sgd_step(
    params: Iterable[Parameter],
    state: SgdState,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """``v = momentum * v + (g + weight_decay * theta)``; ``theta -= lr * v``.

    Weight decay only touches parameters whose ``decay`` flag is set. All
    gradients are checked before any parameter moves.
    """
    params = list(params)
    for p in params:
        if p.grad is None or not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in parameter {p.name}")
    for p in params:
        assert p.grad is not None
        grad = p.grad + weight_decay * p.data if p.decay and weight_decay else p.grad
        previous = state.velocity.get(p.name)
        velocity = grad if previous is None else momentum * previous + grad
        state.velocity[p.name] = velocity
        p.assign(p.data - lr * velocity)
    state.steps += 1


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping. A non-positive ``max_norm`` or a
    non-finite norm leaves the gradients untouched.
    """
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(np.square(g))) for g in grads))
    if max_norm > 0 and math.isfinite(total) and total > max_norm:
        for g in grads:
            g *= max_norm / total
    return total


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule over zero-based epochs."""
    drops = sum(1 for boundary in cfg.lr_decay_epochs if epoch >= boundary)
    return cfg.base_lr * cfg.lr_decay_factor**drops


def spawn_seeds(seed: int) -> tuple[int, np.random.Generator]:
    """Independent streams for initialization and shuffling."""
    init_seq, shuffle_seq = np.random.SeedSequence(seed).spawn(2)
    return int(init_seq.generate_state(1)[0]), np.random.default_rng(shuffle_seq)


def check_topology(model_topo: SkeletonTopology, data_topo: SkeletonTopology) -> None:
    """Joint count, center joint and undirected bone set must agree."""
    if (
        model_topo.num_joints != data_topo.num_joints
        or model_topo.center != data_topo.center
        or set(map(frozenset, model_topo.bones)) != set(map(frozenset, data_topo.bones))
    ):
        raise TopologyError(
            f"dataset topology {data_topo.name or '<inline>'} ({data_topo.num_joints} joints, "
            f"center {data_topo.center}) does not match model topology "
            f"{model_topo.name or '<inline>'} ({model_topo.num_joints} joints, center {model_topo.center})"
        )


@dataclass
class SplitArrays:
    inputs: np.ndarray
    labels: np.ndarray
    ids: list[str]

    def __len__(self) -> int:
        return len(self.labels)


def load_split(
    dataset: SkeletonDataset, stream: str, frames: int | None
) -> SplitArrays:
    sequences = list(dataset)
    if not sequences:
        return SplitArrays(np.zeros((0,)), np.zeros((0,), dtype=np.int64), [])
    inputs, labels = stack_batch(sequences, dataset.topology, stream, frames)
    return SplitArrays(inputs, labels, [s.sample_id for s in sequences])


def predict_scores(
    model: BAGCNModel, inputs: np.ndarray, batch_size: int = DEFAULT_BATCH_SIZE
) -> np.ndarray:
    """Eval-mode logits for every sample, computed in batches."""
    logits = [
        forward(model, inputs[start : start + batch_size], MODE_EVAL).data
        for start in range(0, len(inputs), batch_size)
    ]
    return np.concatenate(logits) if logits else np.zeros((0, model.config.num_classes))


class MetricsLog:
    """JSON-lines writer for step and epoch records."""

    def __init__(self, path: Path) -> None:
        self.path = path
        self._fh: TextIO | None = None

    def __enter__(self) -> MetricsLog:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8")
        return self

    def __exit__(self, *exc: object) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def write(self, event: str, **fields: Any) -> None:
        assert self._fh is not None
        self._fh.write(json.dumps({"event": event, **fields}, sort_keys=True) + "\n")
        self._fh.flush()


@dataclass
class TrainResult:
    output_dir: Path
    best: Metrics | None
    final: Metrics | None
    step_losses: list[float]
    model: BAGCNModel


def _check_labels(split: SplitArrays, num_classes: int, name: str) -> None:
    if len(split) and split.labels.max() >= num_classes:
        raise LabelError(
            f"{name} split has label {int(split.labels.max())} but the model has {num_classes} classes"
        )


def train(cfg: TrainConfig, manifest: DatasetManifest | None = None) -> TrainResult:
    """Train from scratch and write checkpoints plus ``metrics.jsonl`` to ``cfg.output_dir``."""
    manifest = manifest or read_manifest(cfg.manifest)
    train_set = load_dataset(manifest, cfg.train_split)
    test_set = load_dataset(manifest, cfg.test_split)
    check_topology(cfg.model.topology, train_set.topology)
    train_data = load_split(train_set, cfg.stream, cfg.frames)
    test_data = load_split(test_set, cfg.stream, cfg.frames)
    if not len(train_data):
        raise ValidationError(f"split {cfg.train_split!r} of {manifest.path} is empty")
    _check_labels(train_data, cfg.model.num_classes, cfg.train_split)
    _check_labels(test_data, cfg.model.num_classes, cfg.test_split)

    init_seed, shuffle_rng = spawn_seeds(cfg.seed)
    model = build_model(cfg.model, init_seed)
    params = model.parameters()
    state = SgdState()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"stream": cfg.stream, "frames": cfg.frames, "seed": cfg.seed}
    step_losses: list[float] = []
    best: Metrics | None = None
    final: Metrics | None = None
    step = 0
    _LOGGER.info(
        "training on %d samples (%d test) for %d epochs, batch %d",
        len(train_data),
        len(test_data),
        cfg.epochs,
        cfg.batch_size,
    )
    with MetricsLog(out / METRICS_LOG) as log:
        for epoch in range(cfg.epochs):
            lr = learning_rate(cfg, epoch)
            order = shuffle_rng.permutation(len(train_data))
            epoch_logits = np.zeros((len(train_data), cfg.model.num_classes))
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                index = order[start : start + cfg.batch_size]
                model.zero_grad()
                logits = forward(model, train_data.inputs[index], MODE_TRAIN)
                loss = softmax_cross_entropy(logits, train_data.labels[index])
                value = loss.item()
                if not math.isfinite(value):
                    _LOGGER.error("loss became %s at epoch %d step %d; aborting", value, epoch, step)
                    raise NumericalError(f"non-finite loss {value} at step {step}")
                backward(loss)
                grad_norm = clip_grad_norm(params, cfg.grad_clip)
                sgd_step(params, state, lr, cfg.momentum, cfg.weight_decay)
                epoch_logits[index] = logits.data
                losses.append(value)
                step_losses.append(value)
                log.write("step", epoch=epoch, step=step, loss=value, lr=lr, grad_norm=grad_norm)
                _LOGGER.debug("epoch %d step %d loss %.6f lr %g", epoch, step, value, lr)
                step += 1
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
            seen = order[: len(losses) * cfg.batch_size]
            train_metrics = compute_metrics(
                epoch_logits[seen], train_data.labels[seen], float(np.mean(losses))
            )
            if len(test_data):
                final = compute_metrics(
                    predict_scores(model, test_data.inputs, cfg.batch_size), test_data.labels
                )
            else:
                final = train_metrics
            log.write(
                "epoch",
                epoch=epoch,
                lr=lr,
                train_loss=train_metrics.mean_loss,
                train_top1=train_metrics.top1,
                **final.to_dict(),
            )
            _LOGGER.info(
                "epoch %d: train loss %.4f top1 %.3f | test top1 %.3f top5 %.3f",
                epoch,
                train_metrics.mean_loss,
                train_metrics.top1,
                final.top1,
                final.top5,
            )
            save_checkpoint(out / LAST_CHECKPOINT, model, {**meta, "epoch": epoch, "top1": final.top1})
            if best is None or final.top1 > best.top1:
                best = final
                save_checkpoint(out / BEST_CHECKPOINT, model, {**meta, "epoch": epoch, "top1": final.top1})
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
    save_checkpoint(out / FINAL_CHECKPOINT, model, {**meta, "top1": final.top1 if final else None})
    _LOGGER.info("training finished after %d steps; best top1 %.3f", step, best.top1 if best else 0.0)
    return TrainResult(out, best, final, step_losses, model)


@dataclass
class EvalResult:
    metrics: Metrics
    scores: np.ndarray
    labels: np.ndarray
    ids: list[str]


def evaluate(
    checkpoint: str | Path,
    manifest: str | Path | DatasetManifest,
    split: str | None = "test",
    stream: str | None = None,
    frames: int | None = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> EvalResult:
    """Deterministic pass over ``split``; scores are softmax probabilities.

    ``stream`` and ``frames`` default to the values the checkpoint was trained with.
    """
    model, meta = load_checkpoint(Path(checkpoint))
    dataset = load_dataset(manifest, split)
    check_topology(model.config.topology, dataset.topology)
    stream = stream or meta.get("stream") or STREAM_SPATIAL
    frames = frames if frames is not None else meta.get("frames")
    data = load_split(dataset, stream, frames)
    _check_labels(data, model.config.num_classes, split or "all")
    logits = predict_scores(model, data.inputs, batch_size)
    metrics = compute_metrics(logits, data.labels) if len(data) else Metrics(0.0, 0.0, float("nan"))
    _LOGGER.info(
        "evaluated %s on %d samples: top1 %.4f top5 %.4f", checkpoint, len(data), metrics.top1, metrics.top5
    )
    return EvalResult(metrics, softmax(logits) if len(data) else logits, data.labels, data.ids)
