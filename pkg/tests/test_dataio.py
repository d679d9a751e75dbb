"""Dataset file format: round trips and corruption handling."""

import numpy as np
import pytest

from eegimpute.dataio import DATASET_MAGIC, load_dataset, save_dataset
from eegimpute.errors import FormatError
from eegimpute.montage import EEGRecording
from eegimpute.shiftlab import DomainSpec, SyntheticSpec, generate_synthetic


def sample_recordings(n=5, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        out.append(
            EEGRecording(
                samples=rng.normal(size=(16, 3)),
                channel_names=("x", "y", "z"),
                sample_rate_hz=128.0,
                label=int(i % 2),
                subject_id=f"s{i}",
                domain_id="lab",
                missing_channels=("y",) if i == 2 else (),
            )
        )
    return out


class TestRoundTrip:
    def test_save_load_save_bytes_identical(self, tmp_path):
        recs = sample_recordings()
        p1 = tmp_path / "a.eeg"
        p2 = tmp_path / "b.eeg"
        save_dataset(recs, p1)
        save_dataset(load_dataset(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_payload_is_float32_exact(self, tmp_path):
        recs = sample_recordings()
        path = tmp_path / "a.eeg"
        save_dataset(recs, path)
        loaded = load_dataset(path)
        assert len(loaded) == len(recs)
        for orig, back in zip(recs, loaded):
            np.testing.assert_array_equal(
                back.samples, orig.samples.astype(np.float32).astype(np.float64)
            )
            assert back.samples.dtype == np.float64
            assert back.channel_names == orig.channel_names
            assert back.label == orig.label
            assert back.subject_id == orig.subject_id
            assert back.domain_id == orig.domain_id
            assert back.missing_channels == orig.missing_channels
            assert back.sample_rate_hz == orig.sample_rate_hz

    def test_synthetic_set_round_trips(self, tmp_path):
        spec = SyntheticSpec(
            num_classes=2,
            channels=8,
            num_samples=32,
            sample_rate_hz=64.0,
            rank=4,
            num_recordings=6,
            seed=3,
            domains=(DomainSpec("a"), DomainSpec("b", channel_keep_fraction=0.5)),
        )
        recs = generate_synthetic(spec)
        path = tmp_path / "syn.eeg"
        save_dataset(recs, path)
        loaded = load_dataset(path)
        labels = [r.label for r in loaded]
        assert labels == [r.label for r in recs]
        assert any(r.missing_channels for r in loaded)


class TestFormatErrors:
    def test_empty_list_rejected(self, tmp_path):
        with pytest.raises(FormatError):
            save_dataset([], tmp_path / "e.eeg")

    def test_mixed_shapes_rejected(self, tmp_path):
        rng = np.random.default_rng(0)
        recs = sample_recordings(2)
        recs.append(
            EEGRecording(
                samples=rng.normal(size=(8, 3)),
                channel_names=("x", "y", "z"),
                sample_rate_hz=128.0,
                label=0,
            )
        )
        with pytest.raises(FormatError):
            save_dataset(recs, tmp_path / "m.eeg")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.eeg"
        save_dataset(sample_recordings(), path)
        blob = bytearray(path.read_bytes())
        blob[: len(DATASET_MAGIC)] = b"NOTADSET"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            load_dataset(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "cut.eeg"
        save_dataset(sample_recordings(), path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 10])
        with pytest.raises(FormatError):
            load_dataset(path)

    def test_unreadable_header(self, tmp_path):
        path = tmp_path / "junk.eeg"
        import struct

        path.write_bytes(DATASET_MAGIC + struct.pack("<Q", 4) + b"\xff\xfe\x00\x01")
        with pytest.raises(FormatError):
            load_dataset(path)
