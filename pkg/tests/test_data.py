"""Tests for dataset storage, preprocessing and batching."""

import json
import logging
import struct
from pathlib import Path

import numpy as np
import pytest

from bagcn.data import (
    DatasetManifest,
    SkeletonSequence,
    build_input,
    convert_npz,
    describe_manifest,
    load_dataset,
    pad_resize,
    read_manifest,
    select_bodies,
    stack_batch,
    verify_checksum,
    write_dataset,
)
from bagcn.errors import DatasetError, TopologyError, ValidationError
from bagcn.graph import SkeletonTopology


def _sequence(sample_id: str, label: int, bodies: int = 1, frames: int = 4, seed: int = 0) -> SkeletonSequence:
    coords = np.random.default_rng(seed).normal(size=(bodies, frames, 3, 3))
    return SkeletonSequence(sample_id, coords, label)


@pytest.fixture
def small_manifest(tmp_path: Path, chain3: SkeletonTopology) -> DatasetManifest:
    """Three chain samples: two train, one two-body test."""
    samples = [
        ("train", _sequence("a", 0, seed=1)),
        ("train", _sequence("b", 1, frames=6, seed=2)),
        ("test", _sequence("c", 1, bodies=2, seed=3)),
    ]
    return write_dataset(tmp_path / "small.json", samples, chain3.to_dict(), classes=["wave", "kick"])


class TestStorage:
    """Tests for writing and reading manifests and blobs."""

    def test_round_trip(self, small_manifest: DatasetManifest) -> None:
        """Samples come back as their float32 values in manifest order."""
        restored = list(load_dataset(small_manifest.path))
        assert [s.sample_id for s in restored] == ["a", "b", "c"]
        assert [s.label for s in restored] == [0, 1, 1]
        expected = _sequence("b", 1, frames=6, seed=2).coords.astype(np.float32).astype(np.float64)
        np.testing.assert_array_equal(restored[1].coords, expected)
        assert restored[2].coords.shape == (2, 4, 3, 3)

    def test_manifest_fields(self, small_manifest: DatasetManifest) -> None:
        """Test splits, classes and the blob name."""
        manifest = read_manifest(small_manifest.path)
        assert manifest.splits() == ["test", "train"]
        assert manifest.num_classes == 2
        assert manifest.blob == "small.bin"
        assert manifest.channels == 3
        assert manifest == small_manifest

    def test_split_view(self, small_manifest: DatasetManifest) -> None:
        """A split view keeps only its samples."""
        train = load_dataset(small_manifest.path, "train")
        assert len(train) == 2
        assert train.labels().tolist() == [0, 1]

    def test_empty_split(self, small_manifest: DatasetManifest, caplog: pytest.LogCaptureFixture) -> None:
        """An empty split warns and yields nothing."""
        with caplog.at_level(logging.WARNING):
            view = load_dataset(small_manifest, "val")
        assert len(view) == 0
        assert list(view) == []
        assert "no samples in split 'val'" in caplog.text

    def test_num_classes_from_labels(self, tmp_path: Path, chain3: SkeletonTopology) -> None:
        """Without class names the largest label decides."""
        manifest = write_dataset(tmp_path / "m.json", [("train", _sequence("x", 4))], chain3.to_dict())
        assert manifest.num_classes == 5

    def test_checksum(self, small_manifest: DatasetManifest) -> None:
        """A modified blob fails verification."""
        assert verify_checksum(small_manifest)
        raw = bytearray(small_manifest.blob_path.read_bytes())
        raw[10] ^= 0xFF
        small_manifest.blob_path.write_bytes(bytes(raw))
        assert not verify_checksum(small_manifest)

    def test_duplicate_ids(self, tmp_path: Path, chain3: SkeletonTopology) -> None:
        """One id may not appear twice."""
        samples = [("train", _sequence("a", 0)), ("test", _sequence("a", 0))]
        with pytest.raises(DatasetError, match="listed twice"):
            write_dataset(tmp_path / "m.json", samples, chain3.to_dict())

    def test_joint_mismatch(self, tmp_path: Path) -> None:
        """Samples must match the topology."""
        with pytest.raises(DatasetError, match="joints"):
            write_dataset(tmp_path / "m.json", [("train", _sequence("a", 0))], "synth9")


class TestCorruption:
    """Tests for damaged datasets."""

    def _edit_manifest(self, manifest: DatasetManifest, index: int, **fields: int) -> None:
        raw = json.loads(manifest.path.read_text())
        raw["samples"][index].update(fields)
        manifest.path.write_text(json.dumps(raw))

    def test_declared_length(self, small_manifest: DatasetManifest) -> None:
        """A wrong value count in the manifest names the sample."""
        self._edit_manifest(small_manifest, 1, length=small_manifest.samples[1].length + 1)
        with pytest.raises(DatasetError, match="sample b: corrupt header"):
            list(load_dataset(small_manifest.path))

    def test_topology_mismatch_names_sample(self, small_manifest: DatasetManifest) -> None:
        """Samples stored for another skeleton name the sample and both joint counts."""
        raw = json.loads(small_manifest.path.read_text())
        raw["topology"] = "synth9"
        small_manifest.path.write_text(json.dumps(raw))
        with pytest.raises(DatasetError, match="sample a: stored with 3 joints, manifest topology has 9"):
            list(load_dataset(small_manifest.path))

    def test_blob_length_prefix(self, small_manifest: DatasetManifest) -> None:
        """A damaged record prefix names the sample."""
        raw = bytearray(small_manifest.blob_path.read_bytes())
        raw[0:4] = struct.pack("<I", 7)
        small_manifest.blob_path.write_bytes(bytes(raw))
        with pytest.raises(DatasetError, match="sample a: length mismatch"):
            list(load_dataset(small_manifest.path))

    def test_truncated_blob(self, small_manifest: DatasetManifest) -> None:
        """A cut-off blob names the last sample."""
        raw = small_manifest.blob_path.read_bytes()
        small_manifest.blob_path.write_bytes(raw[:-4])
        with pytest.raises(DatasetError, match="sample c: .* truncated"):
            list(load_dataset(small_manifest.path))

    def test_missing_blob(self, small_manifest: DatasetManifest) -> None:
        """A missing blob is reported."""
        small_manifest.blob_path.unlink()
        with pytest.raises(DatasetError, match="cannot open blob"):
            list(load_dataset(small_manifest.path))

    @pytest.mark.parametrize("text", ["{", json.dumps({"format": 2, "samples": []})])
    def test_bad_manifest(self, tmp_path: Path, text: str) -> None:
        """Test malformed and unsupported manifests."""
        path = tmp_path / "m.json"
        path.write_text(text)
        with pytest.raises(DatasetError):
            read_manifest(path)

    def test_non_finite_frames(
        self, tmp_path: Path, chain3: SkeletonTopology, caplog: pytest.LogCaptureFixture
    ) -> None:
        """NaN frames are zero-filled with a warning."""
        coords = np.ones((1, 3, 3, 3))
        coords[0, 1, 2, 0] = np.nan
        manifest = write_dataset(
            tmp_path / "m.json", [("train", SkeletonSequence("n", coords, 0))], chain3.to_dict()
        )
        with caplog.at_level(logging.WARNING):
            (seq,) = list(load_dataset(manifest))
        assert seq.invalid_frames == (1,)
        np.testing.assert_array_equal(seq.coords[0, 1], np.zeros((3, 3)))
        np.testing.assert_array_equal(seq.coords[0, 0], np.ones((3, 3)))
        assert "sample n: zero-filled 1 frame(s)" in caplog.text

    def test_empty_sequence(self) -> None:
        """A sequence needs at least one frame."""
        with pytest.raises(ValidationError):
            SkeletonSequence("e", np.zeros((1, 0, 3, 3)), 0)


class TestPreprocessing:
    """Tests for resizing, inputs and body selection."""

    def test_pad_resize_repeats(self) -> None:
        """Test cyclic repetition of a short sequence."""
        coords = np.arange(3.0).reshape(1, 3, 1, 1)
        seq = SkeletonSequence("s", coords, 0, invalid_frames=(1,))
        resized = pad_resize(seq, 7)
        assert resized.coords[0, :, 0, 0].tolist() == [0, 1, 2, 0, 1, 2, 0]
        assert resized.invalid_frames == (1, 4)

    def test_pad_resize_truncates(self) -> None:
        """Test truncation of a long sequence."""
        seq = SkeletonSequence("s", np.arange(5.0).reshape(1, 5, 1, 1), 0)
        assert pad_resize(seq, 2).coords[0, :, 0, 0].tolist() == [0, 1]
        assert pad_resize(seq, 5) is seq
        with pytest.raises(ValidationError):
            pad_resize(seq, 0)

    def test_spatial_input(self, chain3: SkeletonTopology) -> None:
        """Test (M, V, T, 2C) with joints then bones."""
        seq = _sequence("s", 0, frames=5)
        features = build_input(seq, chain3)
        assert features.shape == (1, 3, 5, 6)
        np.testing.assert_array_equal(features[..., :3], seq.coords.transpose(0, 2, 1, 3))
        np.testing.assert_array_equal(features[0, 0, :, 3:], np.zeros((5, 3)))
        np.testing.assert_allclose(features[0, 2, :, 3:], seq.coords[0, :, 2] - seq.coords[0, :, 1])

    def test_motion_input(self, chain3: SkeletonTopology) -> None:
        """Test forward frame differences with a zero last frame."""
        seq = _sequence("s", 0, frames=5)
        spatial = build_input(seq, chain3)
        motion = build_input(seq, chain3, "motion")
        np.testing.assert_allclose(motion[:, :, :-1], spatial[:, :, 1:] - spatial[:, :, :-1])
        np.testing.assert_array_equal(motion[:, :, -1], np.zeros((1, 3, 6)))

    def test_motion_keeps_confidence(self, chain3: SkeletonTopology) -> None:
        """Confidence channels pass through the motion stream."""
        coords = np.random.default_rng(0).uniform(size=(1, 4, 3, 3))
        seq = SkeletonSequence("s", coords, 0, confidence=True)
        spatial = build_input(seq, chain3)
        motion = build_input(seq, chain3, "motion")
        np.testing.assert_array_equal(motion[..., 2], spatial[..., 2])
        np.testing.assert_array_equal(motion[..., 5], spatial[..., 5])

    def test_input_errors(self, chain3: SkeletonTopology) -> None:
        """Test unknown streams and joint mismatches."""
        with pytest.raises(ValidationError):
            build_input(_sequence("s", 0), chain3, "depth")
        four = SkeletonTopology(4, ((0, 1), (1, 2), (2, 3)), 0)
        with pytest.raises(TopologyError):
            build_input(_sequence("s", 0), four)

    def test_select_by_confidence(self) -> None:
        """The most confident bodies are kept, highest first."""
        coords = np.zeros((3, 2, 2, 3))
        coords[0, ..., -1] = 0.2
        coords[1, ..., -1] = 0.9
        coords[2, ..., -1] = 0.5
        kept = select_bodies(coords, 2, confidence=True)
        assert kept[:, 0, 0, -1].tolist() == [0.9, 0.5]
        assert select_bodies(coords, 2)[:, 0, 0, -1].tolist() == [0.2, 0.9]
        assert select_bodies(coords, 5) is coords
        with pytest.raises(ValidationError):
            select_bodies(coords, 0)

    def test_stack_single_body(self, chain3: SkeletonTopology) -> None:
        """Test (N, V, T, C) batches with a common frame count."""
        inputs, labels = stack_batch([_sequence("a", 2, frames=3), _sequence("b", 1, frames=5)], chain3, frames=4)
        assert inputs.shape == (2, 3, 4, 6)
        assert labels.tolist() == [2, 1]

    def test_stack_multi_body(self, chain3: SkeletonTopology) -> None:
        """Missing bodies are zero padded."""
        inputs, _ = stack_batch([_sequence("a", 0), _sequence("b", 0, bodies=2)], chain3)
        assert inputs.shape == (2, 2, 3, 4, 6)
        assert not inputs[0, 1].any()

    def test_stack_errors(self, chain3: SkeletonTopology) -> None:
        """Test empty batches and unequal lengths."""
        with pytest.raises(ValidationError):
            stack_batch([], chain3)
        with pytest.raises(ValidationError, match="different lengths"):
            stack_batch([_sequence("a", 0, frames=3), _sequence("b", 0, frames=4)], chain3)


class TestConvert:
    """Tests for npz conversion and manifest summaries."""

    def test_convert_npz(self, tmp_path: Path, chain3: SkeletonTopology) -> None:
        """Test conversion with empty-body and trailing-frame trimming."""
        data = np.zeros((2, 3, 6, 3, 2))
        data[0, :, :4, :, 0] = 1.0
        data[1, :, :, :, :] = 2.0
        np.savez(tmp_path / "train.npz", data=data, label=np.array([0, 1]))
        manifest = convert_npz({"train": tmp_path / "train.npz"}, tmp_path / "out.json", chain3.to_dict())
        first, second = list(load_dataset(manifest))
        assert first.sample_id == "train-000000"
        assert first.coords.shape == (1, 4, 3, 3)
        assert second.coords.shape == (2, 6, 3, 3)
        assert second.label == 1

    def test_convert_max_bodies(self, tmp_path: Path, chain3: SkeletonTopology) -> None:
        """Conversion can cap the body count."""
        np.savez(tmp_path / "t.npz", data=np.ones((1, 3, 2, 3, 3)), label=np.array([0]))
        manifest = convert_npz({"test": tmp_path / "t.npz"}, tmp_path / "out.json", chain3.to_dict(), max_bodies=1)
        assert manifest.samples[0].bodies == 1

    def test_convert_bad_archive(self, tmp_path: Path, chain3: SkeletonTopology) -> None:
        """Wrongly shaped arrays are rejected."""
        np.savez(tmp_path / "t.npz", data=np.ones((1, 3, 2)), label=np.array([0]))
        with pytest.raises(DatasetError, match="expected data"):
            convert_npz({"test": tmp_path / "t.npz"}, tmp_path / "out.json", chain3.to_dict())

    def test_describe(self, small_manifest: DatasetManifest) -> None:
        """Test per-split counts and statistics."""
        summary = describe_manifest(small_manifest)
        assert summary["topology"] == "chain3"
        assert summary["checksum_ok"] is True
        train = summary["splits"]["train"]
        assert train["samples"] == 2
        assert train["per_class"] == {0: 1, 1: 1}
        assert train["frames"] == {"min": 4, "mean": 5.0, "max": 6}
        assert summary["splits"]["test"]["bodies"] == {2: 1}
