"""Parameter containers and initializers."""

from __future__ import annotations

import logging
from collections.abc import Iterator
from typing import Any

import numpy as np

from .const import MODE_TRAIN
from .errors import ConfigError, ShapeError
from .ops import BatchNormStats, batch_norm
from .tensor import Parameter, Tensor

_LOGGER = logging.getLogger(__name__)


def kaiming(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Normal draw scaled by sqrt(2 / fan_in)."""
    return rng.normal(0.0, np.sqrt(2.0 / max(fan_in, 1)), size=shape)


def uniform(rng: np.random.Generator, shape: tuple[int, ...], bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


def _children(value: Any) -> Iterator[Any]:
    if isinstance(value, (Parameter, Module)):
        yield value
    elif isinstance(value, (list, tuple)):
        for item in value:
            yield from _children(item)
    elif isinstance(value, dict):
        for item in value.values():
            yield from _children(item)


class Module:
    """Base class for anything that owns parameters.

    Parameters and sub-modules are discovered from instance attributes (and
    lists, tuples or dicts of them) in assignment order, so the order of
    ``parameters()`` is fixed by construction order.
    """

    def modules(self) -> Iterator[Module]:
        yield self
        for value in vars(self).values():
            for child in _children(value):
                if isinstance(child, Module):
                    yield from child.modules()

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for module in self.modules():
            for value in vars(module).values():
                params.extend(c for c in _children(value) if isinstance(c, Parameter))
        return params

    def named_parameters(self) -> dict[str, Parameter]:
        named: dict[str, Parameter] = {}
        for param in self.parameters():
            if param.name in named:
                raise ConfigError(f"duplicate parameter name {param.name!r}")
            named[param.name] = param
        return named

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-learnable state (batch-norm running statistics)."""
        out: dict[str, np.ndarray] = {}
        for module in self.modules():
            if isinstance(module, BatchNorm):
                out[f"{module.name}.running_mean"] = module.stats.running_mean
                out[f"{module.name}.running_var"] = module.stats.running_var
        return out

    def load_buffers(self, values: dict[str, np.ndarray]) -> None:
        for module in self.modules():
            if isinstance(module, BatchNorm):
                module.load_stats(
                    values[f"{module.name}.running_mean"], values[f"{module.name}.running_var"]
                )

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()


class BatchNorm(Module):
    """Per-channel batch normalization with learnable affine terms."""

    def __init__(self, name: str, channels: int) -> None:
        self.name = name
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels), decay=False)
        self.beta = Parameter(f"{name}.beta", np.zeros(channels), decay=False)
        self.stats = BatchNormStats.fresh(channels)

    def __call__(self, x: Tensor, mode: str = MODE_TRAIN) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.stats, mode)

    def load_stats(self, mean: np.ndarray, var: np.ndarray) -> None:
        expected = self.stats.running_mean.shape
        if mean.shape != expected or var.shape != expected:
            raise ShapeError(f"{self.name}: running stats must have shape {expected}")
        self.stats.running_mean = np.array(mean, dtype=np.float64)
        self.stats.running_var = np.array(var, dtype=np.float64)
