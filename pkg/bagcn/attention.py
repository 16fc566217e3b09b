"""Attention map extraction and thresholding for trained ``att`` models."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .checkpoint import load_checkpoint
from .const import ATTENTION_THRESHOLD, DEFAULT_BATCH_SIZE, MODE_EVAL, STREAM_SPATIAL
from .data import DatasetManifest, load_dataset
from .errors import ValidationError
from .focus import AttentionMap, FocusMode
from .network import forward
from .train import check_topology, load_split

_LOGGER = logging.getLogger(__name__)


@dataclass
class ClassAttention:
    """Mean score of every joint over the frames and samples of one class."""

    label: int
    samples: int
    joint_means: np.ndarray

    @property
    def overall_mean(self) -> float:
        return float(self.joint_means.mean())

    def joints_above_mean(self) -> list[int]:
        return np.flatnonzero(self.joint_means > self.overall_mean).tolist()

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "samples": self.samples,
            "joint_means": [round(float(x), 6) for x in self.joint_means],
            "mean": round(self.overall_mean, 6),
            "above_mean": self.joints_above_mean(),
        }


@dataclass
class AttentionDump:
    layer: int
    threshold: float
    maps: list[AttentionMap] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)

    def per_class(self) -> list[ClassAttention]:
        summary = []
        for label in sorted(set(self.labels)):
            picked = [m.scores for m, y in zip(self.maps, self.labels, strict=True) if y == label]
            joint_means = np.mean([s.mean(axis=0) for s in picked], axis=0)
            summary.append(ClassAttention(label, len(picked), joint_means))
        return summary

    def records(self) -> list[dict[str, Any]]:
        return [
            {**m.to_record(), "label": y, "activated": m.activated_joints(self.threshold)}
            for m, y in zip(self.maps, self.labels, strict=True)
        ]

    def write(self, path: str | Path) -> Path:
        """One JSON object per (sample, layer)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for record in self.records():
                fh.write(json.dumps(record) + "\n")
        return path


def _resolve_layer(layer: int, blocks: int) -> int:
    if not -blocks <= layer < blocks:
        raise ValidationError(f"layer {layer} out of range for a {blocks}-block model")
    return layer % blocks


def dump_attention(
    checkpoint: str | Path,
    manifest: str | Path | DatasetManifest,
    split: str | None = "test",
    layer: int = -1,
    threshold: float = ATTENTION_THRESHOLD,
    limit: int | None = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> AttentionDump:
    """Score maps of block ``layer`` (default: last) for the samples of ``split``.

    Multi-body samples yield one map per body, with ``#<body>`` appended to
    the sample id.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {threshold}")
    model, meta = load_checkpoint(Path(checkpoint))
    if model.config.focus is not FocusMode.ATT:
        raise ValidationError(
            f"attention maps need focus mode 'att'; this checkpoint uses "
            f"{model.config.focus.value!r}, which has no learned joint scores"
        )
    index = _resolve_layer(layer, len(model.blocks))
    dataset = load_dataset(manifest, split)
    check_topology(model.config.topology, dataset.topology)
    data = load_split(dataset, meta.get("stream") or STREAM_SPATIAL, meta.get("frames"))
    count = len(data) if limit is None else min(limit, len(data))
    dump = AttentionDump(index, threshold)
    for start in range(0, count, batch_size):
        stop = min(start + batch_size, count)
        inputs = data.inputs[start:stop]
        collected: list[Any] = []
        forward(model, inputs, MODE_EVAL, attention=collected)
        ids = data.ids[start:stop]
        labels = data.labels[start:stop].tolist()
        if inputs.ndim == 5:
            bodies = inputs.shape[1]
            ids = [f"{i}#{b}" for i in ids for b in range(bodies)]
            labels = [y for y in labels for _ in range(bodies)]
        dump.maps.extend(AttentionMap.from_scores(collected[index], index, ids))
        dump.labels.extend(int(y) for y in labels)
    _LOGGER.info("collected %d attention maps from block %d", len(dump.maps), index)
    return dump
