"""Tests for the ablation grid and result tables."""

import csv
from dataclasses import replace
from pathlib import Path

import pytest

from bagcn.ablation import (
    ROWS_CSV,
    SUMMARY_CSV,
    TABLE_TXT,
    AblationResult,
    AblationRow,
    AblationVariant,
    ablation_grid,
    run_ablation,
    summarize,
    write_tables,
)
from bagcn.config import TrainConfig, load_train_config
from bagcn.data import DatasetManifest, read_manifest
from bagcn.focus import ContextMode, FocusMode
from bagcn.synth import focus_benchmark, synth_generate
from bagcn.tables import render_table

from .conftest import CONFIG_DIR


def _rows() -> list[AblationRow]:
    return [
        AblationRow("att-bi", 0, 0.5, 0.5, 100),
        AblationRow("att-bi", 1, 0.7, 0.6, 100),
        AblationRow("off", 0, 0.25, 0.25, 60),
    ]


def test_grid_full() -> None:
    """Test every focus mode against every context, with 'off' collapsed."""
    variants = ablation_grid(list(FocusMode), list(ContextMode))
    names = [v.name for v in variants]
    assert len(variants) == 10
    assert names.count("off") == 1
    assert "att-bi" in names and "avg-none" in names


def test_string_modes() -> None:
    """Mode names are accepted and order is kept."""
    variants = ablation_grid(["att", "off"], ["bi", "uni"])
    assert [v.name for v in variants] == ["att-bi", "att-uni", "off"]
    assert variants[-1] == AblationVariant(FocusMode.OFF, ContextMode.NONE)


def test_unknown_mode() -> None:
    """An unknown mode name raises ValueError."""
    with pytest.raises(ValueError):
        ablation_grid(["mean"], ["bi"])


def test_summarize() -> None:
    """Test mean and sample standard deviation per variant."""
    summary = summarize(_rows())
    assert [s.variant for s in summary] == ["att-bi", "off"]
    assert summary[0].mean_top1 == pytest.approx(0.6)
    assert summary[0].sd_top1 == pytest.approx(0.1414213562)
    assert summary[1].sd_top1 == 0.0
    assert (summary[0].seeds, summary[0].params) == (2, 100)


def test_mean_lookup() -> None:
    """Test looking up a variant's mean accuracy."""
    result = AblationResult(_rows(), summarize(_rows()))
    assert result.mean_top1("off") == 0.25


def test_write_tables(tmp_path: Path) -> None:
    """Test the CSV and text outputs."""
    result = AblationResult(_rows(), summarize(_rows()))
    paths = write_tables(result, tmp_path / "out")
    assert [p.name for p in paths] == [ROWS_CSV, SUMMARY_CSV, TABLE_TXT]
    with paths[0].open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert rows[1] == {
        "variant": "att-bi",
        "seed": "1",
        "top1": "0.700000",
        "final_top1": "0.600000",
        "params": "100",
    }
    with paths[1].open(encoding="utf-8") as fh:
        summary = list(csv.DictReader(fh))
    assert summary[0]["mean_top1"] == "0.600000"
    assert "0.6000" in paths[2].read_text(encoding="utf-8")


def test_render_table() -> None:
    """Test column alignment and the header rule."""
    text = render_table(["a", "long"], [["xyz", 1]])
    assert text.splitlines() == ["a    long", "---  ----", "xyz  1"]


def test_runs_every_variant_and_seed(
    train_config: TrainConfig, synth_manifest: DatasetManifest
) -> None:
    """Test one row per variant and seed, each with its own run directory."""
    cfg = replace(train_config, max_steps=1)
    variants = ablation_grid(["att", "off"], ["bi"])
    result = run_ablation(cfg, variants, [0, 1], synth_manifest)
    assert [(r.variant, r.seed) for r in result.rows] == [
        ("att-bi", 0),
        ("att-bi", 1),
        ("off", 0),
        ("off", 1),
    ]
    params = {r.variant: r.params for r in result.rows}
    assert params["off"] < params["att-bi"]
    assert (cfg.output_dir / "off" / "seed1" / "final.ckpt").exists()
    assert all(0.0 <= r.top1 <= 1.0 for r in result.rows)


@pytest.mark.slow
def test_focusing_helps(tmp_path: Path) -> None:
    """Test att >= off and bi >= none in mean top-1 over three seeds."""
    train_view, _ = synth_generate(focus_benchmark(seed=0), tmp_path / "data")
    cfg = load_train_config(
        CONFIG_DIR / "train_synth.json",
        {"manifest": str(train_view.path), "output_dir": str(tmp_path / "runs")},
    )
    variants = ablation_grid(["att", "off"], ["bi", "none"])
    result = run_ablation(cfg, variants, [0, 1, 2], read_manifest(train_view.path))
    write_tables(result, tmp_path / "tables")
    assert result.mean_top1("att-bi") >= result.mean_top1("off")
    assert result.mean_top1("att-bi") >= result.mean_top1("att-none")
