"""Pytest configuration and fixtures."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from bagcn.block import BlockConfig
from bagcn.config import TrainConfig
from bagcn.data import DatasetManifest, read_manifest
from bagcn.focus import ContextMode, FocusMode
from bagcn.graph import SkeletonTopology, load_topology
from bagcn.network import ModelConfig
from bagcn.synth import standard_benchmark, synth_generate

CONFIG_DIR = Path(__file__).parent.parent / "configs"


def _random_tree(rng: np.random.Generator, min_joints: int = 2, max_joints: int = 6) -> SkeletonTopology:
    v = int(rng.integers(min_joints, max_joints + 1))
    labels = rng.permutation(v)
    bones = tuple((int(labels[j]), int(labels[rng.integers(0, j)])) for j in range(1, v))
    return SkeletonTopology(v, bones, int(rng.integers(0, v)), "random")


@pytest.fixture
def rng() -> np.random.Generator:
    """Create a seeded generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def random_tree() -> Callable[..., SkeletonTopology]:
    """Return a factory for random connected skeletons."""
    return _random_tree


@pytest.fixture
def chain3() -> SkeletonTopology:
    """Create the 0-1-2 chain centered at joint 0."""
    return SkeletonTopology(3, ((0, 1), (1, 2)), 0, "chain3")


@pytest.fixture
def synth9() -> SkeletonTopology:
    """Load the synthetic benchmark skeleton."""
    return load_topology("synth9")


def tiny_blocks(
    focus: FocusMode = FocusMode.ATT, context: ContextMode = ContextMode.BI
) -> tuple[BlockConfig, ...]:
    modes = {"focus": focus, "context": context, "temporal_kernel": 3, "context_channels": 4}
    return (
        BlockConfig(6, 8, residual=False, **modes),
        BlockConfig(8, 8, stride=2, **modes),
    )


@pytest.fixture
def tiny_model_config(synth9: SkeletonTopology) -> ModelConfig:
    """Create a two-block model config on the synthetic skeleton."""
    return ModelConfig(
        topology=synth9,
        num_classes=4,
        in_channels=6,
        blocks=tiny_blocks(),
        context_channels=4,
        temporal_kernel=3,
    )


@pytest.fixture
def synth_manifest(tmp_path: Path) -> DatasetManifest:
    """Generate a small standard synthetic dataset (16 train / 8 test)."""
    spec = replace(standard_benchmark(seed=0), train_per_class=4, test_per_class=2)
    train_view, _ = synth_generate(spec, tmp_path / "synth")
    return read_manifest(train_view.path)


@pytest.fixture
def train_config(
    tmp_path: Path, synth_manifest: DatasetManifest, tiny_model_config: ModelConfig
) -> TrainConfig:
    """Create a one-epoch training config over the small synthetic dataset."""
    return TrainConfig(
        model=tiny_model_config,
        manifest=synth_manifest.path,
        frames=16,
        base_lr=0.05,
        epochs=1,
        lr_decay_epochs=(),
        batch_size=8,
        output_dir=tmp_path / "run",
    )


@pytest.fixture
def make_model_config(synth9: SkeletonTopology) -> Callable[..., ModelConfig]:
    """Return a factory for tiny model configs in a given focus/context mode."""

    def make(
        focus: FocusMode = FocusMode.ATT,
        context: ContextMode = ContextMode.BI,
        graph: str = "directed",
    ) -> ModelConfig:
        return ModelConfig(
            topology=synth9,
            num_classes=4,
            in_channels=6,
            blocks=tiny_blocks(focus, context),
            focus=focus,
            context=context,
            context_channels=4,
            temporal_kernel=3,
            graph=graph,
        )

    return make
