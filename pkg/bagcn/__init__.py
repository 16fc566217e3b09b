"""Bidirectional attentive graph convolutional networks for skeleton action recognition."""

from .errors import BagcnError, NumericalError, ValidationError
from .network import BAGCNModel, ModelConfig, build_model, forward, fuse_two_stream

__version__ = "0.1.0"

__all__ = [
    "BAGCNModel",
    "BagcnError",
    "ModelConfig",
    "NumericalError",
    "ValidationError",
    "build_model",
    "forward",
    "fuse_two_stream",
]
