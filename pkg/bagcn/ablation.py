"""Focus x context ablation grid over several seeds."""

from __future__ import annotations

import csv
import logging
import statistics
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

from .config import TrainConfig
from .data import DatasetManifest, read_manifest
from .focus import ContextMode, FocusMode
from .network import build_model
from .tables import render_table
from .train import train

_LOGGER = logging.getLogger(__name__)

ROWS_CSV = "ablation.csv"
SUMMARY_CSV = "ablation_summary.csv"
TABLE_TXT = "ablation.txt"


@dataclass(frozen=True)
class AblationVariant:
    focus: FocusMode
    context: ContextMode

    @property
    def name(self) -> str:
        if self.focus is FocusMode.OFF:
            return "off"
        return f"{self.focus.value}-{self.context.value}"


def ablation_grid(
    focus_modes: Iterable[FocusMode | str], context_modes: Iterable[ContextMode | str]
) -> list[AblationVariant]:
    """Cartesian grid; all ``off`` variants collapse into one (context is unused)."""
    variants: list[AblationVariant] = []
    for f, c in product(focus_modes, context_modes):
        focus, context = FocusMode(f), ContextMode(c)
        if focus is FocusMode.OFF:
            context = ContextMode.NONE
        variant = AblationVariant(focus, context)
        if variant not in variants:
            variants.append(variant)
    return variants


@dataclass(frozen=True)
class AblationRow:
    variant: str
    seed: int
    top1: float
    final_top1: float
    params: int


@dataclass(frozen=True)
class VariantSummary:
    variant: str
    seeds: int
    mean_top1: float
    sd_top1: float
    params: int


@dataclass
class AblationResult:
    rows: list[AblationRow]
    summary: list[VariantSummary]

    def mean_top1(self, variant: str) -> float:
        return next(s.mean_top1 for s in self.summary if s.variant == variant)


def summarize(rows: Sequence[AblationRow]) -> list[VariantSummary]:
    """Mean and sample standard deviation of top-1 per variant, in first-seen order."""
    order: list[str] = []
    for row in rows:
        if row.variant not in order:
            order.append(row.variant)
    summary = []
    for name in order:
        picked = [r for r in rows if r.variant == name]
        scores = [r.top1 for r in picked]
        summary.append(
            VariantSummary(
                name,
                len(picked),
                statistics.fmean(scores),
                statistics.stdev(scores) if len(scores) > 1 else 0.0,
                picked[0].params,
            )
        )
    return summary


def run_ablation(
    base: TrainConfig,
    variants: Sequence[AblationVariant],
    seeds: Sequence[int],
    manifest: DatasetManifest | None = None,
) -> AblationResult:
    """Train every variant with every seed on the same data and shuffle streams."""
    manifest = manifest or read_manifest(base.manifest)
    rows: list[AblationRow] = []
    for variant in variants:
        model_cfg = base.model.with_modes(variant.focus, variant.context)
        params = build_model(model_cfg, seed=0).num_parameters()
        for seed in seeds:
            _LOGGER.info("ablation: variant %s seed %d", variant.name, seed)
            cfg = replace(
                base,
                model=model_cfg,
                seed=seed,
                output_dir=Path(base.output_dir) / variant.name / f"seed{seed}",
            )
            result = train(cfg, manifest)
            best = result.best.top1 if result.best else 0.0
            final = result.final.top1 if result.final else 0.0
            rows.append(AblationRow(variant.name, seed, best, final, params))
    return AblationResult(rows, summarize(rows))


def summary_table(result: AblationResult) -> str:
    return render_table(
        ["variant", "seeds", "top1 mean", "top1 sd", "params"],
        [
            [s.variant, s.seeds, f"{s.mean_top1:.4f}", f"{s.sd_top1:.4f}", s.params]
            for s in result.summary
        ],
    )


def write_tables(result: AblationResult, out_dir: str | Path) -> list[Path]:
    """Write per-run rows and the summary as CSV, plus the aligned text tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / ROWS_CSV).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "top1", "final_top1", "params"])
        for r in result.rows:
            writer.writerow([r.variant, r.seed, f"{r.top1:.6f}", f"{r.final_top1:.6f}", r.params])
    with (out / SUMMARY_CSV).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seeds", "mean_top1", "sd_top1", "params"])
        for s in result.summary:
            writer.writerow([s.variant, s.seeds, f"{s.mean_top1:.6f}", f"{s.sd_top1:.6f}", s.params])
    runs = render_table(
        ["variant", "seed", "top1", "final top1", "params"],
        [[r.variant, r.seed, f"{r.top1:.4f}", f"{r.final_top1:.4f}", r.params] for r in result.rows],
    )
    (out / TABLE_TXT).write_text(runs + "\n" + summary_table(result), encoding="utf-8")
    return [out / ROWS_CSV, out / SUMMARY_CSV, out / TABLE_TXT]
