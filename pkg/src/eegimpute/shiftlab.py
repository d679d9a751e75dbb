"""Acquisition-shift simulation, integrity scoring, and synthetic EEG.

Three shift kinds modify recordings: a linear-phase band-pass FIR filter,
additive broadband or narrowband Gaussian noise, and channel removal.
The integrity metric compares neighborhood structure of clean versus
shifted feature clouds via Delaunay triangulations on a shared 2-D
principal projection. The synthetic generator mixes class-specific
band-limited oscillators through a low-rank linear map, which is what
makes removed channels recoverable from the observed ones in principle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .errors import ContractError, ValidationError
from .montage import EEGRecording, canonical_names

FIR_TAPS = 257
NOISE_MODES = ("broadband", "narrowband")
SHIFT_KINDS = ("bandpass", "noise", "channel_mask")


@dataclass(frozen=True)
class ShiftSpec:
    """One acquisition shift; only the fields of its kind are read."""

    kind: str
    band: tuple = (1.0, 25.0)
    sigma: float = 0.1
    mode: str = "broadband"
    fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise ContractError(
                f"unknown shift kind {self.kind!r}; expected one of {SHIFT_KINDS}"
            )
        if self.kind == "noise" and self.mode not in NOISE_MODES:
            raise ContractError(
                f"unknown noise mode {self.mode!r}; expected one of {NOISE_MODES}"
            )
        if self.sigma < 0:
            raise ContractError(f"noise sigma must be nonnegative, got {self.sigma}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ContractError(
                f"channel fraction must be in [0,1], got {self.fraction}"
            )

    def validate_for(self, sample_rate_hz):
        nyquist = sample_rate_hz / 2.0
        if self.kind == "bandpass":
            low, high = self.band
            if not 0.0 < low < high < nyquist:
                raise ContractError(
                    f"band {self.band} invalid for sample rate {sample_rate_hz} "
                    f"(need 0 < low < high < {nyquist})"
                )


def design_bandpass(low_hz, high_hz, sample_rate_hz, taps=FIR_TAPS):
    """Linear-phase windowed-sinc band-pass: Hamming-windowed, odd length."""
    if taps % 2 != 1:
        raise ContractError(f"tap count must be odd for linear phase, got {taps}")
    nyquist = sample_rate_hz / 2.0
    if not 0.0 < low_hz < high_hz < nyquist:
        raise ContractError(
            f"band ({low_hz}, {high_hz}) invalid for sample rate {sample_rate_hz}"
        )
    m = np.arange(taps) - (taps - 1) / 2.0

    def lowpass(cutoff_hz):
        fc = cutoff_hz / sample_rate_hz
        kernel = 2.0 * fc * np.sinc(2.0 * fc * m)
        return kernel

    window = np.hamming(taps)
    h = (lowpass(high_hz) - lowpass(low_hz)) * window
    return h


def _filter_same_length(x, taps):
    """Full convolution then center slice; robust when len(x) < len(taps)."""
    full = np.convolve(x, taps, mode="full")
    start = (len(taps) - 1) // 2
    return full[start : start + len(x)]


def apply_shift(recording, spec):
    """Return a shifted copy of the recording; the input is untouched."""
    spec.validate_for(recording.sample_rate_hz)
    samples = recording.samples
    T, C = samples.shape

    if spec.kind == "bandpass":
        taps = design_bandpass(*spec.band, recording.sample_rate_hz)
        out = np.column_stack(
            [_filter_same_length(samples[:, c], taps) for c in range(C)]
        )
        return replace(recording, samples=out)

    if spec.kind == "noise":
        rng = np.random.default_rng(spec.seed)
        if spec.sigma == 0.0:
            return replace(recording, samples=samples.copy())
        if spec.mode == "broadband":
            noise = spec.sigma * rng.standard_normal((T, C))
        else:
            center = rng.uniform(8.0, 16.0)
            low = center - 1.0
            high = center + 1.0
            taps = design_bandpass(low, high, recording.sample_rate_hz)
            white = rng.standard_normal((T, C))
            noise = np.column_stack(
                [_filter_same_length(white[:, c], taps) for c in range(C)]
            )
            spread = noise.std()
            if spread > 0:
                noise *= spec.sigma / spread
        return replace(recording, samples=samples + noise)

    # channel_mask
    rng = np.random.default_rng(spec.seed)
    count = int(math.floor(spec.fraction * C + 0.5))
    chosen = sorted(rng.choice(C, size=count, replace=False).tolist())
    out = samples.copy()
    out[:, chosen] = 0.0
    flagged = tuple(sorted(set(recording.missing_channels)
                           | {recording.channel_names[i] for i in chosen}))
    return replace(recording, samples=out, missing_channels=flagged)


@dataclass(frozen=True)
class IntegrityReport:
    """Neighborhood-overlap summary of clean vs shifted feature clouds."""

    score: float
    overlaps: np.ndarray
    metadata: dict


def _neighbor_sets(points2d):
    """Delaunay adjacency; falls back to 3-nearest-neighbor graphs."""
    m = points2d.shape[0]
    try:
        tri = Delaunay(points2d)
        neighbors = [set() for _ in range(m)]
        for simplex in tri.simplices:
            for a in simplex:
                for b in simplex:
                    if a != b:
                        neighbors[a].add(int(b))
        return neighbors, False
    except QhullError:
        tree = cKDTree(points2d)
        k = min(4, m)  # self plus three others
        _, idx = tree.query(points2d, k=k)
        neighbors = [set(int(j) for j in row[1:]) for row in idx]
        return neighbors, True


def integrity_score(features_clean, features_shifted, basis=None):
    """Mean Jaccard overlap of per-point Delaunay neighborhoods.

    Both feature sets are projected onto the same 2-D basis (the clean
    set's top two principal axes unless one is supplied), triangulated,
    and compared index-by-index.
    """
    clean = np.asarray(features_clean, dtype=np.float64)
    shifted = np.asarray(features_shifted, dtype=np.float64)
    if clean.ndim != 2 or shifted.ndim != 2:
        raise ContractError("feature sets must be 2-D arrays (samples x dims)")
    if clean.shape != shifted.shape:
        raise ContractError(
            f"feature sets differ in shape: {clean.shape} vs {shifted.shape}"
        )
    if clean.shape[0] < 4:
        raise ContractError(
            f"need at least 4 samples for a triangulation, got {clean.shape[0]}"
        )

    center = clean.mean(axis=0)
    if basis is None:
        _, _, vt = np.linalg.svd(clean - center, full_matrices=False)
        basis = vt[:2].T  # dims x 2
    basis = np.asarray(basis, dtype=np.float64)
    if basis.shape != (clean.shape[1], 2):
        raise ContractError(
            f"projection basis must be {clean.shape[1]} x 2, got {basis.shape}"
        )
    p_clean = (clean - center) @ basis
    p_shift = (shifted - center) @ basis

    n_clean, fb_clean = _neighbor_sets(p_clean)
    n_shift, fb_shift = _neighbor_sets(p_shift)
    overlaps = np.empty(clean.shape[0])
    for i, (a, b) in enumerate(zip(n_clean, n_shift)):
        union = a | b
        overlaps[i] = len(a & b) / len(union) if union else 1.0
    return IntegrityReport(
        score=float(overlaps.mean()),
        overlaps=overlaps,
        metadata={
            "knn_fallback_clean": fb_clean,
            "knn_fallback_shifted": fb_shift,
            "basis": basis,
        },
    )


# -- synthetic generator ------------------------------------------------


@dataclass(frozen=True)
class DomainSpec:
    """Per-domain acquisition quirks."""

    name: str
    channel_keep_fraction: float = 1.0
    gain_sigma: float = 0.05
    latency_max: int = 2

    def __post_init__(self):
        if not 0.0 < self.channel_keep_fraction <= 1.0:
            raise ValidationError(
                f"domain {self.name}: keep fraction must be in (0,1], "
                f"got {self.channel_keep_fraction}"
            )
        if self.gain_sigma < 0 or self.latency_max < 0:
            raise ValidationError(
                f"domain {self.name}: gain_sigma and latency_max must be nonnegative"
            )


@dataclass(frozen=True)
class SyntheticSpec:
    """Low-rank oscillator mixture with per-domain perturbations."""

    num_classes: int = 4
    channels: int = 64
    num_samples: int = 64
    sample_rate_hz: float = 64.0
    domains: tuple = (DomainSpec("site_a"),)
    rank: int = 8
    noise_sigma: float = 0.1
    phase_jitter: float = 0.15
    num_recordings: int = 100
    seed: int = 0
    index_offset: int = 0

    def __post_init__(self):
        if self.rank >= self.channels:
            raise ValidationError(
                f"latent rank {self.rank} must be below channel count "
                f"{self.channels} for masked channels to stay recoverable"
            )
        if self.num_classes < 2 or self.num_recordings < 1:
            raise ValidationError("need >= 2 classes and >= 1 recording")
        if not self.domains:
            raise ValidationError("need at least one domain")
        if self.channels > 64:
            raise ValidationError("at most 64 channels (canonical layout)")


def class_frequencies(spec):
    """Distinct oscillator frequencies per (class, latent source), in Hz."""
    freqs = np.empty((spec.num_classes, spec.rank))
    for c in range(spec.num_classes):
        for k in range(spec.rank):
            freqs[c, k] = 3.0 + 1.1 * c + 1.9 * k
    nyquist = spec.sample_rate_hz / 2.0
    if freqs.max() >= nyquist:
        raise ValidationError(
            f"class frequencies reach {freqs.max():.1f} Hz, at or above "
            f"nyquist {nyquist:.1f}; raise the sample rate"
        )
    return freqs


def synthetic_mixing(spec):
    """The shared channels x rank mixing matrix, fixed by the seed."""
    rng = np.random.default_rng([spec.seed, 1])
    return rng.standard_normal((spec.channels, spec.rank))


def _class_phases(spec):
    rng = np.random.default_rng([spec.seed, 2])
    return rng.uniform(0.0, 2.0 * np.pi, (spec.num_classes, spec.rank))


def domain_missing_channels(spec, domain_index):
    """Channels a domain never records, a fixed seeded subset."""
    dom = spec.domains[domain_index]
    keep = int(math.ceil(dom.channel_keep_fraction * spec.channels))
    drop = spec.channels - keep
    if drop == 0:
        return ()
    rng = np.random.default_rng([spec.seed, 3, domain_index])
    return tuple(sorted(rng.choice(spec.channels, size=drop, replace=False).tolist()))


def generate_synthetic(spec):
    """Deterministic dataset of labeled, domain-tagged recordings."""
    freqs = class_frequencies(spec)
    phases = _class_phases(spec)
    mixing = synthetic_mixing(spec)
    names = canonical_names()[: spec.channels]
    t = np.arange(spec.num_samples) / spec.sample_rate_hz
    missing_by_domain = [
        domain_missing_channels(spec, d) for d in range(len(spec.domains))
    ]

    recordings = []
    for i in range(spec.num_recordings):
        label = i % spec.num_classes
        domain_index = (i // spec.num_classes) % len(spec.domains)
        dom = spec.domains[domain_index]
        rng = np.random.default_rng([spec.seed, 4, spec.index_offset + i])

        jitter = spec.phase_jitter * rng.standard_normal(spec.rank)
        latency = int(rng.integers(-dom.latency_max, dom.latency_max + 1))
        angles = (
            2.0 * np.pi * freqs[label][:, None] * t[None, :]
            + phases[label][:, None]
            + jitter[:, None]
        )
        sources = np.sin(angles)  # rank x T
        if latency:
            sources = np.roll(sources, latency, axis=1)
        signal = (mixing @ sources).T  # T x channels
        gains = 1.0 + dom.gain_sigma * rng.standard_normal(spec.channels)
        signal = signal * gains[None, :]
        if spec.noise_sigma > 0:
            signal = signal + spec.noise_sigma * rng.standard_normal(signal.shape)

        missing_idx = missing_by_domain[domain_index]
        if missing_idx:
            signal = signal.copy()
            signal[:, list(missing_idx)] = 0.0
        recordings.append(
            EEGRecording(
                samples=signal,
                channel_names=names,
                sample_rate_hz=spec.sample_rate_hz,
                label=label,
                subject_id=f"subj{spec.index_offset + i}",
                domain_id=dom.name,
                missing_channels=tuple(names[j] for j in missing_idx),
            )
        )
    return recordings
