"""Synthetic skeleton actions for desk-scale experiments.

Every class moves a small set of joints sinusoidally along one axis on top of
a fixed rest pose. The ``standard`` preset gives each class its own disjoint
pair of non-adjacent joints; the ``focus`` preset moves the same pair in every
class and encodes the class in the relative phase of the two joints, so a model
has to relate joints that are several hops apart.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .const import SPLIT_TEST, SPLIT_TRAIN
from .data import DatasetManifest, SkeletonSequence, write_dataset
from .errors import ValidationError
from .graph import hop_distances, load_topology

_LOGGER = logging.getLogger(__name__)

SYNTH_MANIFEST = "synth.json"


@dataclass(frozen=True)
class ClassSignature:
    """Motion of one class: moving joints, cycles per sequence, per-joint phase, axis."""

    joints: tuple[int, ...]
    frequency: float = 2.0
    phases: tuple[float, ...] = ()
    axis: int = 1

    def __post_init__(self) -> None:
        if not self.joints:
            raise ValidationError("a class signature needs at least one moving joint")
        if not self.phases:
            object.__setattr__(self, "phases", (0.0,) * len(self.joints))
        if len(self.phases) != len(self.joints):
            raise ValidationError("one phase per moving joint is required")
        if self.axis not in (0, 1, 2):
            raise ValidationError(f"axis must be 0, 1 or 2, got {self.axis}")


@dataclass(frozen=True)
class SynthSpec:
    """Full description of a synthetic dataset; equal specs give identical blobs."""

    signatures: tuple[ClassSignature, ...]
    topology: str = "synth9"
    frames: int = 32
    noise: float = 0.05
    seed: int = 0
    train_per_class: int = 80
    test_per_class: int = 20
    amplitude: float = 0.5
    random_phase: bool = True
    name: str = "custom"
    class_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.signatures:
            raise ValidationError("at least one class is required")
        if len(set(self.signatures)) != len(self.signatures):
            raise ValidationError("classes must have distinct motion signatures")
        if self.frames < 1 or self.noise < 0:
            raise ValidationError("frames must be positive and noise non-negative")
        if self.train_per_class < 0 or self.test_per_class < 0:
            raise ValidationError("per-class sample counts must be non-negative")
        joints = load_topology(self.topology).num_joints
        for sig in self.signatures:
            if any(not 0 <= j < joints for j in sig.joints):
                raise ValidationError(f"signature joints {sig.joints} outside [0, {joints})")
        if not self.class_names:
            object.__setattr__(
                self, "class_names", tuple(f"class_{k}" for k in range(len(self.signatures)))
            )

    @property
    def num_classes(self) -> int:
        return len(self.signatures)


def standard_benchmark(seed: int = 0, noise: float = 0.05) -> SynthSpec:
    """Four classes, each moving its own non-adjacent joint pair in phase.

    The pairs are disjoint and leave the center joint at rest, so every
    moving joint belongs to exactly one class.
    """
    pairs = ((2, 7), (1, 4), (3, 6), (5, 8))
    return SynthSpec(
        signatures=tuple(ClassSignature(p) for p in pairs),
        noise=noise,
        seed=seed,
        name="standard",
    )


def focus_benchmark(seed: int = 0, noise: float = 0.05) -> SynthSpec:
    """Four classes on one joint pair, told apart only by the relative phase."""
    return SynthSpec(
        signatures=tuple(
            ClassSignature((2, 7), phases=(0.0, k * math.pi / 2)) for k in range(4)
        ),
        noise=noise,
        seed=seed,
        name="focus",
    )


SYNTH_PRESETS: dict[str, Callable[..., SynthSpec]] = {
    "standard": standard_benchmark,
    "focus": focus_benchmark,
}


def rest_pose(topology: str) -> np.ndarray:
    """``(V, 3)`` pose: joints spread along x, lowered along y by hop distance."""
    topo = load_topology(topology)
    hops = hop_distances(topo)
    pose = np.zeros((topo.num_joints, 3))
    pose[:, 0] = 0.1 * np.arange(topo.num_joints)
    pose[:, 1] = -0.2 * hops
    return pose


def sample_motion(
    spec: SynthSpec, label: int, rng: np.random.Generator, pose: np.ndarray
) -> np.ndarray:
    """One ``(1, T, V, 3)`` sample of class ``label``."""
    sig = spec.signatures[label]
    t = np.arange(spec.frames)
    offset = rng.uniform(0.0, 2.0 * math.pi) if spec.random_phase else 0.0
    coords = np.broadcast_to(pose, (spec.frames, *pose.shape)).copy()
    for joint, phase in zip(sig.joints, sig.phases, strict=True):
        angle = 2.0 * math.pi * sig.frequency * t / spec.frames + phase + offset
        coords[:, joint, sig.axis] += spec.amplitude * np.sin(angle)
    if spec.noise > 0:
        coords += rng.normal(0.0, spec.noise, size=coords.shape)
    return coords[np.newaxis]


def _samples(spec: SynthSpec) -> Iterator[tuple[str, SkeletonSequence]]:
    rng = np.random.default_rng(spec.seed)
    pose = rest_pose(spec.topology)
    for split, count in ((SPLIT_TRAIN, spec.train_per_class), (SPLIT_TEST, spec.test_per_class)):
        for label in range(spec.num_classes):
            for index in range(count):
                coords = sample_motion(spec, label, rng, pose)
                yield split, SkeletonSequence(f"{split}-c{label}-{index:04d}", coords, label)


def synth_generate(
    spec: SynthSpec, out_dir: str | Path
) -> tuple[DatasetManifest, DatasetManifest]:
    """Write the dataset under ``out_dir`` and return its train and test views."""
    manifest = write_dataset(
        Path(out_dir) / SYNTH_MANIFEST, _samples(spec), spec.topology, spec.class_names
    )
    _LOGGER.info(
        "generated %s benchmark: %d classes, %d train / %d test samples, checksum %s",
        spec.name,
        spec.num_classes,
        spec.train_per_class * spec.num_classes,
        spec.test_per_class * spec.num_classes,
        manifest.checksum[:12],
    )
    return manifest.split(SPLIT_TRAIN), manifest.split(SPLIT_TEST)
