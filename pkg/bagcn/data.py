"""Skeleton datasets: manifest + blob storage, preprocessing and model inputs.

A dataset is a JSON manifest next to one binary blob. Each blob record is a
little-endian uint32 value count followed by that many little-endian float32
values laid out ``(M, T, V, C)`` (bodies, frames, joints, channels).
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from collections import Counter
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import voluptuous as vol

from .const import (
    BLOB_LENGTH_BYTES,
    MANIFEST_FORMAT,
    STREAM_MOTION,
    STREAM_SPATIAL,
    STREAMS,
)
from .errors import DatasetError, TopologyError, ValidationError
from .graph import SkeletonTopology, compute_bones, load_topology

_LOGGER = logging.getLogger(__name__)

_COUNT = struct.Struct("<I")
_CHUNK = 1 << 20

SAMPLE_SCHEMA = vol.Schema(
    {
        vol.Required("id"): str,
        vol.Required("split"): str,
        vol.Required("label"): vol.All(int, vol.Range(min=0)),
        vol.Required("offset"): vol.All(int, vol.Range(min=0)),
        vol.Required("length"): vol.All(int, vol.Range(min=0)),
        vol.Required("frames"): vol.All(int, vol.Range(min=1)),
        vol.Required("bodies"): vol.All(int, vol.Range(min=1)),
    }
)

MANIFEST_SCHEMA = vol.Schema(
    {
        vol.Required("format"): MANIFEST_FORMAT,
        vol.Required("topology"): vol.Any(str, dict),
        vol.Required("blob"): str,
        vol.Required("channels"): vol.All(int, vol.Range(min=1)),
        vol.Optional("has_confidence", default=False): bool,
        vol.Optional("classes", default=list): [str],
        vol.Optional("checksum", default=""): str,
        vol.Required("samples"): [SAMPLE_SCHEMA],
    }
)


@dataclass(frozen=True)
class SkeletonSequence:
    """One decoded sample; ``coords`` is ``(M, T, V, C)`` float64."""

    sample_id: str
    coords: np.ndarray
    label: int
    confidence: bool = False
    invalid_frames: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.coords.ndim != 4 or 0 in self.coords.shape:
            raise ValidationError(
                f"sample {self.sample_id}: coords must be non-empty (M, T, V, C), got {self.coords.shape}"
            )

    @property
    def body_count(self) -> int:
        return int(self.coords.shape[0])

    @property
    def frames(self) -> int:
        return int(self.coords.shape[1])

    @property
    def num_joints(self) -> int:
        return int(self.coords.shape[2])


@dataclass(frozen=True)
class SampleEntry:
    sample_id: str
    split: str
    label: int
    offset: int
    length: int
    frames: int
    bodies: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.sample_id,
            "split": self.split,
            "label": self.label,
            "offset": self.offset,
            "length": self.length,
            "frames": self.frames,
            "bodies": self.bodies,
        }


@dataclass(frozen=True)
class DatasetManifest:
    """Index of a blob: per-sample offsets, split tags and class names."""

    path: Path
    topology: str | dict[str, Any]
    blob: str
    channels: int
    samples: tuple[SampleEntry, ...] = ()
    classes: tuple[str, ...] = ()
    has_confidence: bool = False
    checksum: str = ""

    def __post_init__(self) -> None:
        seen: dict[str, str] = {}
        for entry in self.samples:
            if entry.sample_id in seen:
                raise DatasetError(
                    f"sample {entry.sample_id} listed twice (splits {seen[entry.sample_id]!r} "
                    f"and {entry.split!r})"
                )
            seen[entry.sample_id] = entry.split

    @property
    def blob_path(self) -> Path:
        return self.path.parent / self.blob

    @property
    def num_classes(self) -> int:
        if self.classes:
            return len(self.classes)
        return max((e.label for e in self.samples), default=-1) + 1

    def splits(self) -> list[str]:
        return sorted({e.split for e in self.samples})

    def split(self, name: str | None) -> DatasetManifest:
        """The same manifest restricted to one split (all samples for ``None``)."""
        if name is None:
            return self
        return replace(self, samples=tuple(e for e in self.samples if e.split == name))

    def load_topology(self) -> SkeletonTopology:
        try:
            return load_topology(self.topology)
        except TopologyError as err:
            raise DatasetError(f"manifest {self.path}: unknown topology: {err}") from err

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": MANIFEST_FORMAT,
            "topology": self.topology,
            "blob": self.blob,
            "channels": self.channels,
            "has_confidence": self.has_confidence,
            "classes": list(self.classes),
            "checksum": self.checksum,
            "samples": [e.to_dict() for e in self.samples],
        }

    def save(self) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return self.path


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as err:
        raise DatasetError(f"cannot read manifest {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise DatasetError(f"manifest {path} is not valid JSON: {err}") from err
    try:
        valid = MANIFEST_SCHEMA(raw)
    except vol.Invalid as err:
        raise DatasetError(f"manifest {path}: {err}") from err
    return DatasetManifest(
        path=path,
        topology=valid["topology"],
        blob=valid["blob"],
        channels=valid["channels"],
        samples=tuple(
            SampleEntry(s["id"], s["split"], s["label"], s["offset"], s["length"], s["frames"], s["bodies"])
            for s in valid["samples"]
        ),
        classes=tuple(valid["classes"]),
        has_confidence=valid["has_confidence"],
        checksum=valid["checksum"],
    )


def blob_checksum(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        while chunk := fh.read(_CHUNK):
            digest.update(chunk)
    return digest.hexdigest()


def verify_checksum(manifest: DatasetManifest) -> bool:
    if not manifest.checksum:
        return True
    try:
        return blob_checksum(manifest.blob_path) == manifest.checksum
    except OSError as err:
        raise DatasetError(f"cannot read blob {manifest.blob_path}: {err}") from err


def _zero_fill(sample_id: str, coords: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    bad = ~np.isfinite(coords).all(axis=(0, 2, 3))
    if not bad.any():
        return coords, ()
    frames = tuple(int(t) for t in np.flatnonzero(bad))
    coords = coords.copy()
    coords[:, bad] = 0.0
    _LOGGER.warning(
        "sample %s: zero-filled %d frame(s) with non-finite values", sample_id, len(frames)
    )
    return coords, frames


def _decode(fh: Any, entry: SampleEntry, joints: int, channels: int, manifest: DatasetManifest) -> bytes:
    per_joint = entry.bodies * entry.frames * channels
    expected = per_joint * joints
    if entry.length != expected and per_joint and entry.length % per_joint == 0:
        raise DatasetError(
            f"sample {entry.sample_id}: stored with {entry.length // per_joint} joints, "
            f"manifest topology has {joints}"
        )
    if entry.length != expected:
        raise DatasetError(
            f"sample {entry.sample_id}: corrupt header, {entry.length} values declared but "
            f"{entry.bodies}x{entry.frames}x{joints}x{channels} = {expected} expected"
        )
    fh.seek(entry.offset)
    head = fh.read(BLOB_LENGTH_BYTES)
    if len(head) < BLOB_LENGTH_BYTES:
        raise DatasetError(f"sample {entry.sample_id}: blob {manifest.blob_path} is truncated")
    (stored,) = _COUNT.unpack(head)
    if stored != entry.length:
        raise DatasetError(
            f"sample {entry.sample_id}: length mismatch, blob says {stored}, manifest says {entry.length}"
        )
    payload = fh.read(4 * entry.length)
    if len(payload) < 4 * entry.length:
        raise DatasetError(f"sample {entry.sample_id}: blob {manifest.blob_path} is truncated")
    return payload


@dataclass
class SkeletonDataset:
    """Lazily decoded samples of one manifest view, in manifest order."""

    manifest: DatasetManifest
    topology: SkeletonTopology = field(init=False)

    def __post_init__(self) -> None:
        self.topology = self.manifest.load_topology()

    def __len__(self) -> int:
        return len(self.manifest.samples)

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.manifest.samples], dtype=np.int64)

    def __iter__(self) -> Iterator[SkeletonSequence]:
        return self.read(self.manifest.samples)

    def read(self, entries: Iterable[SampleEntry]) -> Iterator[SkeletonSequence]:
        entries = list(entries)
        if not entries:
            return
        joints, channels = self.topology.num_joints, self.manifest.channels
        try:
            fh = self.manifest.blob_path.open("rb")
        except OSError as err:
            raise DatasetError(
                f"sample {entries[0].sample_id}: cannot open blob {self.manifest.blob_path}: {err}"
            ) from err
        with fh:
            for entry in entries:
                payload = _decode(fh, entry, joints, channels, self.manifest)
                coords = (
                    np.frombuffer(payload, dtype="<f4")
                    .astype(np.float64)
                    .reshape(entry.bodies, entry.frames, joints, channels)
                )
                coords, invalid = _zero_fill(entry.sample_id, coords)
                yield SkeletonSequence(
                    entry.sample_id, coords, entry.label, self.manifest.has_confidence, invalid
                )


def load_dataset(source: str | Path | DatasetManifest, split: str | None = None) -> SkeletonDataset:
    """Open a manifest (path or object), optionally restricted to ``split``."""
    manifest = source if isinstance(source, DatasetManifest) else read_manifest(source)
    view = manifest.split(split)
    if split is not None and not view.samples:
        _LOGGER.warning("manifest %s has no samples in split %r", manifest.path, split)
    return SkeletonDataset(view)


def write_dataset(
    manifest_path: str | Path,
    samples: Iterable[tuple[str, SkeletonSequence]],
    topology: str | dict[str, Any],
    classes: Iterable[str] = (),
    has_confidence: bool = False,
) -> DatasetManifest:
    """Write ``(split, sequence)`` pairs to a blob and manifest next to each other."""
    manifest_path = Path(manifest_path)
    blob_name = manifest_path.with_suffix(".bin").name
    blob_path = manifest_path.parent / blob_name
    blob_path.parent.mkdir(parents=True, exist_ok=True)
    topo = load_topology(topology)
    entries: list[SampleEntry] = []
    channels: int | None = None
    offset = 0
    with blob_path.open("wb") as fh:
        for split, seq in samples:
            if seq.num_joints != topo.num_joints:
                raise DatasetError(
                    f"sample {seq.sample_id}: {seq.num_joints} joints, topology has {topo.num_joints}"
                )
            if channels is None:
                channels = int(seq.coords.shape[-1])
            elif seq.coords.shape[-1] != channels:
                raise DatasetError(f"sample {seq.sample_id}: channel count differs from earlier samples")
            values = np.ascontiguousarray(seq.coords, dtype="<f4")
            fh.write(_COUNT.pack(values.size))
            fh.write(values.tobytes())
            entries.append(
                SampleEntry(
                    seq.sample_id, split, int(seq.label), offset, int(values.size), seq.frames, seq.body_count
                )
            )
            offset += BLOB_LENGTH_BYTES + 4 * values.size
    manifest = DatasetManifest(
        path=manifest_path,
        topology=topology,
        blob=blob_name,
        channels=channels or 3,
        samples=tuple(entries),
        classes=tuple(classes),
        has_confidence=has_confidence,
        checksum=blob_checksum(blob_path),
    )
    manifest.save()
    _LOGGER.info("wrote %d samples to %s", len(entries), manifest_path)
    return manifest


def pad_resize(seq: SkeletonSequence, target_frames: int) -> SkeletonSequence:
    """Cyclically repeat short sequences and truncate long ones to ``target_frames``."""
    if target_frames < 1:
        raise ValidationError(f"target frame count must be >= 1, got {target_frames}")
    if seq.frames == target_frames:
        return seq
    index = np.arange(target_frames) % seq.frames
    invalid = set(seq.invalid_frames)
    return replace(
        seq,
        coords=seq.coords[:, index],
        invalid_frames=tuple(t for t, src in enumerate(index) if int(src) in invalid),
    )


def build_input(
    seq: SkeletonSequence, topo: SkeletonTopology, stream: str = STREAM_SPATIAL
) -> np.ndarray:
    """Model input ``(M, V, T, 2C)``: joints then bones along channels.

    The motion stream replaces both halves by forward frame differences (last
    frame zero); a confidence channel is carried through unchanged.
    """
    if stream not in STREAMS:
        raise ValidationError(f"unknown stream {stream!r}; expected one of {STREAMS}")
    if seq.num_joints != topo.num_joints:
        raise TopologyError(f"sample {seq.sample_id} has {seq.num_joints} joints, topology {topo.num_joints}")
    joints = seq.coords
    bones = compute_bones(joints, topo, confidence=seq.confidence)
    features = np.concatenate([joints, bones], axis=-1)
    if stream == STREAM_MOTION:
        motion = np.zeros_like(features)
        motion[:, :-1] = features[:, 1:] - features[:, :-1]
        if seq.confidence:
            channels = joints.shape[-1]
            for c in (channels - 1, 2 * channels - 1):
                motion[..., c] = features[..., c]
        features = motion
    return features.transpose(0, 2, 1, 3)


def select_bodies(coords: np.ndarray, max_bodies: int, confidence: bool = False) -> np.ndarray:
    """Keep at most ``max_bodies`` bodies of ``(M, T, V, C)`` coordinates.

    With a confidence channel the most confident bodies are kept (highest
    first); otherwise the leading ones.
    """
    if max_bodies < 1:
        raise ValidationError(f"max_bodies must be >= 1, got {max_bodies}")
    if coords.shape[0] <= max_bodies:
        return coords
    if not confidence:
        return coords[:max_bodies]
    order = np.argsort(-coords[..., -1].mean(axis=(1, 2)), kind="stable")
    return coords[order[:max_bodies]]


def stack_batch(
    sequences: list[SkeletonSequence],
    topo: SkeletonTopology,
    stream: str = STREAM_SPATIAL,
    frames: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into ``(N, V, T, C)`` (single body) or ``(N, M, V, T, C)``.

    Samples with fewer bodies than the widest one are padded with zero bodies.
    """
    if not sequences:
        raise ValidationError("cannot build an empty batch")
    if frames is not None:
        sequences = [pad_resize(s, frames) for s in sequences]
    lengths = {s.frames for s in sequences}
    if len(lengths) > 1:
        raise ValidationError(f"samples have different lengths {sorted(lengths)}; set a frame count")
    inputs = [build_input(s, topo, stream) for s in sequences]
    labels = np.array([s.label for s in sequences], dtype=np.int64)
    bodies = max(x.shape[0] for x in inputs)
    if bodies == 1:
        return np.stack([x[0] for x in inputs]), labels
    padded = np.zeros((len(inputs), bodies, *inputs[0].shape[1:]))
    for n, x in enumerate(inputs):
        padded[n, : x.shape[0]] = x
    return padded, labels


def _trim_empty(coords: np.ndarray) -> np.ndarray:
    """Drop all-zero bodies and trailing all-zero frames, keeping at least one of each."""
    alive = np.flatnonzero(np.abs(coords).sum(axis=(1, 2, 3)) > 0)
    coords = coords[alive] if alive.size else coords[:1]
    active = np.flatnonzero(np.abs(coords).sum(axis=(0, 2, 3)) > 0)
    end = int(active[-1]) + 1 if active.size else 1
    return coords[:, :end]


def convert_npz(
    inputs: dict[str, Path],
    manifest_path: str | Path,
    topology: str | dict[str, Any],
    classes: Iterable[str] = (),
    max_bodies: int | None = None,
    has_confidence: bool = False,
) -> DatasetManifest:
    """Convert ``.npz`` files (``data`` as ``(N, C, T, V, M)``, ``label`` as ``(N,)``), one per split."""

    def generate() -> Iterator[tuple[str, SkeletonSequence]]:
        for split, path in inputs.items():
            try:
                with np.load(path) as archive:
                    data, labels = archive["data"], archive["label"]
            except (OSError, KeyError, ValueError) as err:
                raise DatasetError(f"cannot read {path}: {err}") from err
            if data.ndim != 5 or labels.shape != (data.shape[0],):
                raise DatasetError(
                    f"{path}: expected data (N, C, T, V, M) and label (N,), got {data.shape} / {labels.shape}"
                )
            _LOGGER.info("converting %d %s samples from %s", data.shape[0], split, path)
            for index in range(data.shape[0]):
                coords = _trim_empty(np.transpose(data[index], (3, 1, 2, 0)).astype(np.float64))
                if max_bodies is not None:
                    coords = select_bodies(coords, max_bodies, has_confidence)
                yield split, SkeletonSequence(
                    f"{split}-{index:06d}", coords, int(labels[index]), has_confidence
                )

    return write_dataset(manifest_path, generate(), topology, classes, has_confidence)


def describe_manifest(manifest: DatasetManifest) -> dict[str, Any]:
    """Per-split and per-class counts, frame and body statistics, checksum status."""
    summary: dict[str, Any] = {
        "manifest": str(manifest.path),
        "topology": manifest.topology if isinstance(manifest.topology, str) else manifest.topology.get("name", ""),
        "channels": manifest.channels,
        "has_confidence": manifest.has_confidence,
        "classes": manifest.num_classes,
        "checksum_ok": verify_checksum(manifest),
        "splits": {},
    }
    for split in manifest.splits():
        entries = manifest.split(split).samples
        frames = np.array([e.frames for e in entries])
        summary["splits"][split] = {
            "samples": len(entries),
            "per_class": dict(sorted(Counter(e.label for e in entries).items())),
            "frames": {"min": int(frames.min()), "mean": float(frames.mean()), "max": int(frames.max())},
            "bodies": dict(sorted(Counter(e.bodies for e in entries).items())),
        }
    return summary
