"""On-disk dataset format: JSON header, float32 payload, label block.

Layout: 8 magic bytes, a little-endian uint64 header length, a UTF-8
JSON header (version, sample rate, channel names, per-recording
metadata), the signal payload as contiguous little-endian float32
(recording-major, then time-major within a recording), and finally all
labels as little-endian int32. Values are stored at 32-bit precision;
loading returns float64 arrays upcast from exactly those stored bits, so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError
from .montage import EEGRecording

DATASET_MAGIC = b"EEGDSET1"
DATASET_VERSION = 1


def save_dataset(recordings, path):
    if not recordings:
        raise FormatError("refusing to write an empty dataset")
    first = recordings[0]
    for rec in recordings:
        if rec.channel_names != first.channel_names:
            raise FormatError("all recordings must share one channel list")
        if rec.samples.shape != first.samples.shape:
            raise FormatError("all recordings must share one shape")
        if rec.sample_rate_hz != first.sample_rate_hz:
            raise FormatError("all recordings must share one sample rate")
    header = {
        "format_version": DATASET_VERSION,
        "sample_rate_hz": first.sample_rate_hz,
        "channel_names": list(first.channel_names),
        "num_recordings": len(recordings),
        "num_samples": int(first.samples.shape[0]),
        "recordings": [
            {
                "subject_id": rec.subject_id,
                "domain_id": rec.domain_id,
                "missing_channels": list(rec.missing_channels),
            }
            for rec in recordings
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for rec in recordings:
            fh.write(rec.samples.astype("<f4").tobytes())
        labels = np.asarray([int(rec.label) for rec in recordings], dtype="<i4")
        fh.write(labels.tobytes())


def load_dataset(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic bytes; not a dataset file")
    cursor = len(DATASET_MAGIC)
    if len(blob) < cursor + 8:
        raise FormatError(f"{path}: truncated before header length")
    (header_len,) = struct.unpack_from("<Q", blob, cursor)
    cursor += 8
    if len(blob) < cursor + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[cursor : cursor + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from exc
    cursor += header_len
    if header.get("format_version") != DATASET_VERSION:
        raise FormatError(
            f"{path}: format version {header.get('format_version')} unsupported"
        )

    count = header["num_recordings"]
    T = header["num_samples"]
    names = tuple(header["channel_names"])
    C = len(names)
    payload_bytes = count * T * C * 4
    label_bytes = count * 4
    if len(blob) - cursor < payload_bytes + label_bytes:
        raise FormatError(
            f"{path}: payload truncated ({len(blob) - cursor} bytes, expected "
            f"{payload_bytes + label_bytes})"
        )
    signals = np.frombuffer(blob, dtype="<f4", count=count * T * C, offset=cursor)
    signals = signals.reshape(count, T, C)
    labels = np.frombuffer(
        blob, dtype="<i4", count=count, offset=cursor + payload_bytes
    )
    recordings = []
    for i, meta in enumerate(header["recordings"]):
        recordings.append(
            EEGRecording(
                samples=signals[i].astype(np.float64),
                channel_names=names,
                sample_rate_hz=header["sample_rate_hz"],
                label=int(labels[i]),
                subject_id=meta["subject_id"],
                domain_id=meta["domain_id"],
                missing_channels=tuple(meta["missing_channels"]),
            )
        )
    return recordings
