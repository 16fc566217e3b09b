"""Constants for the bagcn package."""

from typing import Final

PACKAGE: Final = "bagcn"

# Modes
MODE_TRAIN: Final = "train"
MODE_EVAL: Final = "eval"

STREAM_SPATIAL: Final = "spatial"
STREAM_MOTION: Final = "motion"
STREAMS: Final = (STREAM_SPATIAL, STREAM_MOTION)

GRAPH_DIRECTED: Final = "directed"
GRAPH_UNDIRECTED: Final = "undirected"
GRAPH_KINDS: Final = (GRAPH_DIRECTED, GRAPH_UNDIRECTED)

# Spatial-configuration subsets, in adjacency stacking order
SUBSET_ROOT: Final = "root"
SUBSET_CLOSER: Final = "closer"
SUBSET_FAR: Final = "far"
SUBSETS: Final = (SUBSET_ROOT, SUBSET_CLOSER, SUBSET_FAR)

# Numerics
NORMALIZATION_ALPHA: Final = 1e-4
BN_EPSILON: Final = 1e-5
BN_MOMENTUM: Final = 0.9
FORGET_GATE_BIAS: Final = 1.0

# Architecture defaults
DEFAULT_TEMPORAL_KERNEL: Final = 9
DEFAULT_CONTEXT_CHANNELS: Final = 128
MID_CHANNEL_RATIO: Final = 4
DEFAULT_BLOCK_CHANNELS: Final = (64, 64, 64, 128, 128, 128, 256, 256, 256)
DEFAULT_DOWNSAMPLE_BLOCKS: Final = (3, 6)  # zero-based: the 4th and 7th blocks
DEFAULT_IN_CHANNELS: Final = 6
DEFAULT_TOPOLOGY: Final = "ntu25"

# Data
DEFAULT_FRAMES: Final = 300
MANIFEST_FORMAT: Final = 1
BLOB_LENGTH_BYTES: Final = 4

# Training defaults
DEFAULT_BASE_LR: Final = 0.1
DEFAULT_MOMENTUM: Final = 0.9
DEFAULT_WEIGHT_DECAY: Final = 1e-4
DEFAULT_EPOCHS: Final = 50
DEFAULT_LR_DECAY_EPOCHS: Final = (30, 40)
DEFAULT_LR_DECAY_FACTOR: Final = 0.1
DEFAULT_BATCH_SIZE: Final = 8
DEFAULT_SEED: Final = 0
DEFAULT_GRAD_CLIP: Final = 0.0  # global L2 norm; 0 disables clipping
TOP_K: Final = 5

# Attention inspection
ATTENTION_THRESHOLD: Final = 0.8

# Gradient checking
GRADCHECK_STEP: Final = 1e-6
GRADCHECK_TOLERANCE: Final = 1e-4
GRADCHECK_SAMPLES: Final = 200
GRADCHECK_ABS_FLOOR: Final = 1e-3
GRADCHECK_STEP_SWEEP: Final = (1e-5, 1e-6, 1e-7)

# Checkpoints
CHECKPOINT_MAGIC: Final = b"BAGCNCK1"
CHECKPOINT_FORMAT: Final = 1

# Run directory artifacts
METRICS_LOG: Final = "metrics.jsonl"
BEST_CHECKPOINT: Final = "best.ckpt"
LAST_CHECKPOINT: Final = "last.ckpt"
FINAL_CHECKPOINT: Final = "final.ckpt"

# CLI exit codes
EXIT_OK: Final = 0
EXIT_VALIDATION: Final = 1
EXIT_NUMERICAL: Final = 2

# Model config keys
CONF_TOPOLOGY: Final = "topology"
CONF_IN_CHANNELS: Final = "in_channels"
CONF_NUM_CLASSES: Final = "num_classes"
CONF_BLOCKS: Final = "blocks"
CONF_OUT_CHANNELS: Final = "out_channels"
CONF_MID_CHANNELS: Final = "mid_channels"
CONF_STRIDE: Final = "stride"
CONF_RESIDUAL: Final = "residual"
CONF_FOCUS: Final = "focus"
CONF_CONTEXT: Final = "context"
CONF_CONTEXT_CHANNELS: Final = "context_channels"
CONF_TEMPORAL_KERNEL: Final = "temporal_kernel"
CONF_GRAPH: Final = "graph"

# Train config keys
CONF_MODEL: Final = "model"
CONF_MANIFEST: Final = "manifest"
CONF_TRAIN_SPLIT: Final = "train_split"
CONF_TEST_SPLIT: Final = "test_split"
CONF_STREAM: Final = "stream"
CONF_FRAMES: Final = "frames"
CONF_BASE_LR: Final = "base_lr"
CONF_MOMENTUM: Final = "momentum"
CONF_WEIGHT_DECAY: Final = "weight_decay"
CONF_EPOCHS: Final = "epochs"
CONF_LR_DECAY_EPOCHS: Final = "lr_decay_epochs"
CONF_LR_DECAY_FACTOR: Final = "lr_decay_factor"
CONF_BATCH_SIZE: Final = "batch_size"
CONF_SEED: Final = "seed"
CONF_OUTPUT_DIR: Final = "output_dir"
CONF_MAX_STEPS: Final = "max_steps"
CONF_GRAD_CLIP: Final = "grad_clip"

SPLIT_TRAIN: Final = "train"
SPLIT_TEST: Final = "test"
DEFAULT_OUTPUT_DIR: Final = "runs/latest"
