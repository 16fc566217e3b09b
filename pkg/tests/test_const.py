"""Tests for const module."""

from bagcn.const import (
    ATTENTION_THRESHOLD,
    BN_EPSILON,
    BN_MOMENTUM,
    CHECKPOINT_MAGIC,
    DEFAULT_BLOCK_CHANNELS,
    DEFAULT_DOWNSAMPLE_BLOCKS,
    DEFAULT_LR_DECAY_EPOCHS,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_VALIDATION,
    GRADCHECK_STEP,
    GRADCHECK_STEP_SWEEP,
    PACKAGE,
    STREAMS,
    SUBSETS,
)


def test_package() -> None:
    """Test package constant."""
    assert PACKAGE == "bagcn"


def test_subset_order() -> None:
    """Partition subsets stack root, closer, far."""
    assert SUBSETS == ("root", "closer", "far")
    assert STREAMS == ("spatial", "motion")


def test_architecture_defaults() -> None:
    """Test the standard block widths and downsampling positions."""
    assert len(DEFAULT_BLOCK_CHANNELS) == 9
    assert [DEFAULT_BLOCK_CHANNELS[i] for i in DEFAULT_DOWNSAMPLE_BLOCKS] == [128, 256]
    assert DEFAULT_LR_DECAY_EPOCHS == (30, 40)


def test_numerics() -> None:
    """Test batch-norm and inspection constants."""
    assert BN_EPSILON == 1e-5
    assert BN_MOMENTUM == 0.9
    assert ATTENTION_THRESHOLD == 0.8
    assert GRADCHECK_STEP in GRADCHECK_STEP_SWEEP


def test_exit_codes() -> None:
    """Test distinct CLI exit codes."""
    assert (EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL) == (0, 1, 2)


def test_checkpoint_magic() -> None:
    """The file magic is eight bytes."""
    assert isinstance(CHECKPOINT_MAGIC, bytes)
    assert len(CHECKPOINT_MAGIC) == 8
