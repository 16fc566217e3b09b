"""Central finite differences against taped gradients.

Each layer type is checked on tiny random inputs through a random linear
projection of its output, ``loss = sum(r * out)``. Up to ``samples`` entries
per layer (inputs and parameters together) are perturbed by ``+-h`` and the
relative error ``|a - b| / max(|a|, |b|, floor)`` is reported.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .block import Block, BlockConfig, GraphConvParams, block_forward, spatial_graph_conv
from .const import (
    GRADCHECK_ABS_FLOOR,
    GRADCHECK_SAMPLES,
    GRADCHECK_STEP,
    GRADCHECK_STEP_SWEEP,
    GRADCHECK_TOLERANCE,
    MODE_TRAIN,
)
from .errors import GradCheckError, ValidationError
from .focus import (
    ContextMode,
    FocusDiffuseParams,
    FocusMode,
    LstmParams,
    LstmState,
    cam_forward,
    diffuse,
    fd_forward,
    focus,
    lstm_cell,
)
from .graph import SkeletonTopology, build_partitioned_adjacency
from .module import BatchNorm
from .network import ModelConfig, build_model, forward
from .ops import add_bias, batch_norm, conv_temporal, matmul, softmax_cross_entropy
from .tables import render_table
from .tensor import Parameter, Tensor, backward, mul, stack, sum_

_LOGGER = logging.getLogger(__name__)

Loss = Callable[[], Tensor]

TINY_TOPOLOGY = SkeletonTopology(5, ((0, 1), (1, 2), (0, 3), (3, 4)), 0, "tiny5")


def relative_error(a: np.ndarray | float, b: np.ndarray | float, floor: float = GRADCHECK_ABS_FLOOR) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def projected_loss(out: Tensor, rng: np.random.Generator) -> Tensor:
    """``sum(r * out)`` with a fixed random ``r``."""
    return sum_(mul(out, Tensor(rng.uniform(-1.0, 1.0, size=out.shape))))


@contextmanager
def perturbed(tensor: Tensor, index: tuple[int, ...], delta: float) -> Iterator[None]:
    """Temporarily shift one entry of ``tensor``."""
    original = tensor.data
    shifted = np.array(original)
    shifted[index] += delta
    shifted.flags.writeable = False
    tensor.data = shifted
    try:
        yield
    finally:
        tensor.data = original


def _label(tensor: Tensor, position: int) -> str:
    return tensor.name if isinstance(tensor, Parameter) else f"input{position}"


@dataclass(frozen=True)
class LayerReport:
    layer: str
    max_error: float
    checked: int
    worst: str = ""
    kinks: int = 0

    def passed(self, tolerance: float = GRADCHECK_TOLERANCE) -> bool:
        return self.max_error < tolerance


def _central(loss_fn: Loss, tensor: Tensor, idx: tuple[int, ...], h: float) -> float:
    with perturbed(tensor, idx, h):
        up = loss_fn().item()
    with perturbed(tensor, idx, -h):
        down = loss_fn().item()
    return (up - down) / (2.0 * h)


def check_gradients(
    name: str,
    loss_fn: Loss,
    tensors: Sequence[Tensor],
    samples: int = GRADCHECK_SAMPLES,
    h: float = GRADCHECK_STEP,
    seed: int = 0,
    tolerance: float = GRADCHECK_TOLERANCE,
) -> LayerReport:
    """Compare taped gradients of ``loss_fn`` with central differences.

    Every tensor in ``tensors`` must have ``requires_grad``; when they hold
    more than ``samples`` entries a seeded random subset is checked. An entry
    whose difference quotients at ``h`` and ``h / 2`` disagree sits on a kink
    (relu, max) and is counted in ``kinks`` instead of the error.
    """
    for t in tensors:
        if not t.requires_grad:
            raise ValidationError(f"{name}: cannot check a tensor that takes no gradient")
        t.zero_grad()
    backward(loss_fn())
    analytic = [np.array(t.grad) for t in tensors]
    entries = [(k, idx) for k, t in enumerate(tensors) for idx in np.ndindex(t.shape)]
    if len(entries) > samples:
        pick = np.random.default_rng(seed).choice(len(entries), size=samples, replace=False)
        entries = [entries[i] for i in sorted(pick)]
    worst, worst_at, kinks = 0.0, "", 0
    for k, idx in entries:
        tensor = tensors[k]
        numeric = _central(loss_fn, tensor, idx, h)
        err = float(relative_error(analytic[k][idx], numeric))
        if err >= tolerance:
            half = _central(loss_fn, tensor, idx, h / 2.0)
            if float(relative_error(numeric, half)) > tolerance / 2.0:
                kinks += 1
                continue
        if err > worst:
            worst, worst_at = err, f"{_label(tensor, k)}{list(idx)}"
    _LOGGER.debug(
        "%s: %d entries, max rel err %.3e at %s, %d on kinks", name, len(entries), worst, worst_at, kinks
    )
    return LayerReport(name, worst, len(entries), worst_at, kinks)


@dataclass(frozen=True)
class GradCase:
    """A named layer check: ``build(seed)`` returns the loss closure and checked tensors."""

    name: str
    build: Callable[[int], tuple[Loss, list[Tensor]]]


def _rand(rng: np.random.Generator, *shape: int, grad: bool = True) -> Tensor:
    return Tensor(rng.uniform(-1.0, 1.0, size=shape), requires_grad=grad)


def _randomize(params: Sequence[Parameter], rng: np.random.Generator, around: float = 0.0) -> None:
    for p in params:
        p.assign(around + rng.uniform(-0.5, 0.5, size=p.shape))


def _fixed_loss(out_fn: Callable[[], Tensor], seed: int) -> Loss:
    """Projected loss with the same ``r`` on every call."""

    def loss() -> Tensor:
        return projected_loss(out_fn(), np.random.default_rng(seed))

    return loss


def default_cases(
    topo: SkeletonTopology = TINY_TOPOLOGY,
    frames: int = 6,
    focus_mode: FocusMode = FocusMode.ATT,
    context: ContextMode = ContextMode.BI,
) -> list[GradCase]:
    """One case per layer type, sized ``V = topo.num_joints`` and ``T = frames``."""
    v, t = topo.num_joints, frames
    adjacency = build_partitioned_adjacency(topo)

    def graph_conv(seed: int) -> tuple[Loss, list[Tensor]]:
        rng = np.random.default_rng(seed)
        params = GraphConvParams("gcn", 3, 4, v, rng)
        _randomize(params.masks, rng, around=1.0)
        x = _rand(rng, 2, v, t, 3)
        fn = _fixed_loss(lambda: spatial_graph_conv(x, adjacency.focus, params), seed)
        return fn, [x, *params.parameters()]

    def temporal_conv(seed: int) -> tuple[Loss, list[Tensor]]:
        rng = np.random.default_rng(seed)
        x, w = _rand(rng, 2, v, t, 3), _rand(rng, 4, 3, 3)
        return _fixed_loss(lambda: conv_temporal(x, w, stride=2), seed), [x, w]

    def batch_norm_case(seed: int) -> tuple[Loss, list[Tensor]]:
        rng = np.random.default_rng(seed)
        bn = BatchNorm("bn", 3)
        _randomize([bn.gamma], rng, around=1.0)
        _randomize([bn.beta], rng)
        x = _rand(rng, 2, v, t, 3)
        fn = _fixed_loss(lambda: batch_norm(x, bn.gamma, bn.beta, bn.stats, MODE_TRAIN), seed)
        return fn, [x, bn.gamma, bn.beta]

    def focus_case(mode: FocusMode) -> Callable[[int], tuple[Loss, list[Tensor]]]:
        def build(seed: int) -> tuple[Loss, list[Tensor]]:
            rng = np.random.default_rng(seed)
            params = FocusDiffuseParams("fd", 3, 4, ContextMode.BI, rng)
            f_in = _rand(rng, 2, v, t, 3)
            fn = _fixed_loss(lambda: focus(f_in, mode, params), seed)
            checked = [f_in, params.w_node]
            if mode is FocusMode.ATT:
                checked += [params.score_weight, params.score_bias]
            return fn, checked

        return build

    def lstm_case(seed: int) -> tuple[Loss, list[Tensor]]:
        rng = np.random.default_rng(seed)
        params = LstmParams("lstm", 3, 2, rng)
        xs = _rand(rng, 2, 5, 3)

        def unrolled() -> Tensor:
            state = LstmState.zeros(2, 2)
            hidden = []
            for step in range(5):
                state = lstm_cell(xs[:, step, :], state, params)
                hidden.append(state.hidden)
            return stack(hidden, axis=1)

        return _fixed_loss(unrolled, seed), [xs, *params.parameters()]

    def cam_case(seed: int) -> tuple[Loss, list[Tensor]]:
        rng = np.random.default_rng(seed)
        params = FocusDiffuseParams("fd", 3, 4, ContextMode.BI, rng)
        g_s = _rand(rng, 2, 1, t, 3)
        checked = [g_s, params.w_context]
        for layer in params.cam_layers:
            checked += layer.parameters()
        return _fixed_loss(lambda: cam_forward(g_s, params, ContextMode.BI), seed), checked

    def diffusion_case(seed: int) -> tuple[Loss, list[Tensor]]:
        rng = np.random.default_rng(seed)
        f_in, g_st = _rand(rng, 2, v, t, 3), _rand(rng, 2, 1, t, 4)
        scores = Tensor(rng.uniform(0.05, 0.95, size=(2, v, t, 1)), requires_grad=True)
        w_fuse = _rand(rng, 7, 3)
        return _fixed_loss(lambda: diffuse(f_in, g_st, scores, w_fuse), seed), [
            f_in,
            g_st,
            scores,
            w_fuse,
        ]

    def focus_diffuse_case(seed: int) -> tuple[Loss, list[Tensor]]:
        rng = np.random.default_rng(seed)
        params = FocusDiffuseParams("fd", 3, 4, context, rng)
        _randomize([params.w_fuse], rng)
        x = _rand(rng, 2, v, t, 3)
        fn = _fixed_loss(lambda: fd_forward(x, params, focus_mode, context), seed)
        return fn, [x, *params.parameters()]

    def classifier_case(seed: int) -> tuple[Loss, list[Tensor]]:
        rng = np.random.default_rng(seed)
        pooled, w, b = _rand(rng, 4, 8), _rand(rng, 8, 3), _rand(rng, 3)
        labels = rng.integers(0, 3, size=4)
        return (lambda: softmax_cross_entropy(add_bias(matmul(pooled, w), b), labels)), [pooled, w, b]

    def block_case(seed: int) -> tuple[Loss, list[Tensor]]:
        rng = np.random.default_rng(seed)
        cfg = BlockConfig(
            4, 8, stride=2, focus=focus_mode, context=context, temporal_kernel=3, context_channels=4
        )
        block = Block("block", cfg, v, rng)
        if block.focus_diffuse is not None:
            _randomize([block.focus_diffuse.w_fuse], rng)
        x = _rand(rng, 2, v, t, 4)
        fn = _fixed_loss(lambda: block_forward(x, block, adjacency, MODE_TRAIN), seed)
        return fn, [x, *block.parameters()]

    def model_case(seed: int) -> tuple[Loss, list[Tensor]]:
        rng = np.random.default_rng(seed)
        modes = {
            "focus": focus_mode,
            "context": context,
            "temporal_kernel": 3,
            "context_channels": 4,
        }
        config = ModelConfig(
            topology=topo,
            num_classes=3,
            in_channels=6,
            focus=focus_mode,
            context=context,
            context_channels=4,
            temporal_kernel=3,
            blocks=(
                BlockConfig(6, 8, residual=False, **modes),
                BlockConfig(8, 8, stride=2, **modes),
            ),
        )
        model = build_model(config, seed)
        batch = rng.uniform(-1.0, 1.0, size=(4, v, t, 6))
        labels = rng.integers(0, 3, size=4)
        return (
            lambda: softmax_cross_entropy(forward(model, batch, MODE_TRAIN), labels)
        ), model.parameters()

    cases = [
        GradCase("graph_conv", graph_conv),
        GradCase("temporal_conv", temporal_conv),
        GradCase("batch_norm", batch_norm_case),
        GradCase("focus_att", focus_case(FocusMode.ATT)),
        GradCase("focus_avg", focus_case(FocusMode.AVG)),
        GradCase("focus_max", focus_case(FocusMode.MAX)),
        GradCase("lstm_cell", lstm_case),
        GradCase("bi_cam", cam_case),
        GradCase("diffusion", diffusion_case),
        GradCase("classifier", classifier_case),
        GradCase("block", block_case),
        GradCase("model", model_case),
    ]
    if focus_mode is not FocusMode.OFF:
        cases.insert(9, GradCase("focus_diffuse", focus_diffuse_case))
    return cases


@dataclass
class GradCheckReport:
    layers: list[LayerReport]
    tolerance: float = GRADCHECK_TOLERANCE
    step: float = GRADCHECK_STEP
    sweep_layer: str = ""
    sweep: dict[float, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(layer.passed(self.tolerance) for layer in self.layers)

    @property
    def worst(self) -> LayerReport:
        return max(self.layers, key=lambda layer: layer.max_error)

    def render(self) -> str:
        table = render_table(
            ["layer", "checked", "kinks", "max rel err", "worst entry", "status"],
            [
                [
                    r.layer,
                    r.checked,
                    r.kinks,
                    f"{r.max_error:.3e}",
                    r.worst,
                    "ok" if r.passed(self.tolerance) else "FAIL",
                ]
                for r in self.layers
            ],
        )
        if self.sweep:
            sweep = ", ".join(f"h={h:g}: {err:.3e}" for h, err in self.sweep.items())
            table += f"\nstep sweep for {self.sweep_layer}: {sweep}\n"
        return table

    def raise_on_failure(self) -> None:
        if not self.passed:
            failed = [r.layer for r in self.layers if not r.passed(self.tolerance)]
            raise GradCheckError(
                f"gradient check failed for {', '.join(failed)} (tolerance {self.tolerance:g})"
            )


def run_gradcheck(
    cases: Sequence[GradCase] | None = None,
    samples: int = GRADCHECK_SAMPLES,
    h: float = GRADCHECK_STEP,
    tolerance: float = GRADCHECK_TOLERANCE,
    seed: int = 0,
    sweep: Sequence[float] = GRADCHECK_STEP_SWEEP,
    only: Sequence[str] | None = None,
) -> GradCheckReport:
    """Check every case; the worst layer is re-run for each step in ``sweep``."""
    cases = list(cases) if cases is not None else default_cases()
    if only:
        unknown = set(only) - {c.name for c in cases}
        if unknown:
            raise ValidationError(f"unknown layer(s) {sorted(unknown)}")
        cases = [c for c in cases if c.name in only]
    reports = []
    for case in cases:
        loss_fn, tensors = case.build(seed)
        report = check_gradients(case.name, loss_fn, tensors, samples, h, seed, tolerance)
        _LOGGER.info("%-14s max rel err %.3e over %d entries", case.name, report.max_error, report.checked)
        reports.append(report)
    result = GradCheckReport(reports, tolerance, h)
    if reports and sweep:
        worst = result.worst
        case = next(c for c in cases if c.name == worst.layer)
        result.sweep_layer = worst.layer
        for step in sweep:
            loss_fn, tensors = case.build(seed)
            result.sweep[step] = check_gradients(
                case.name, loss_fn, tensors, samples, step, seed, tolerance
            ).max_error
    return result
