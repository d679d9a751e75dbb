"""Spatial unification of heterogeneous electrode layouts.

Electrodes with normalized scalp coordinates are snapped onto a 9x10 grid;
channels absent from a recording are filled in by thin-plate-spline
interpolation over the observed grid positions, producing a fixed
64-channel layout. Unified recordings are then cut into non-overlapping
cross-channel patches with sinusoidal position features appended.
"""

from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, NumericalError, ValidationError

GRID_ROWS = 9
GRID_COLS = 10
UNIFIED_CHANNELS = 64


@dataclass(frozen=True)
class Electrode:
    """A named scalp position with coordinates normalized to [0,1]."""

    name: str
    x_norm: float
    y_norm: float


@dataclass(frozen=True)
class GridLayout:
    """Electrode-to-cell assignment plus the canonical 64-cell targets."""

    cells: tuple  # GRID_ROWS tuples of GRID_COLS entries (name or None)
    canonical64: tuple  # ordered (name, row, col) triples
    unobserved_cells: tuple  # canonical (row, col) pairs with no electrode

    def cell_of(self, name):
        for r in range(GRID_ROWS):
            for c in range(GRID_COLS):
                if self.cells[r][c] == name:
                    return (r, c)
        return None


@dataclass
class EEGRecording:
    """One multichannel recording: samples are time-major, T x C."""

    samples: np.ndarray
    channel_names: tuple
    sample_rate_hz: float
    label: int = -1
    subject_id: str = ""
    domain_id: str = ""
    missing_channels: tuple = ()

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.channel_names = tuple(self.channel_names)
        self.missing_channels = tuple(self.missing_channels)
        if self.samples.ndim != 2:
            raise ContractError(
                f"samples must be T x C, got shape {self.samples.shape}"
            )
        if self.samples.shape[0] < 1:
            raise ContractError("recording needs at least one sample")
        if self.samples.shape[1] != len(self.channel_names):
            raise ContractError(
                f"{self.samples.shape[1]} sample columns vs "
                f"{len(self.channel_names)} channel names"
            )
        if self.sample_rate_hz <= 0:
            raise ContractError("sample_rate_hz must be positive")
        unknown = set(self.missing_channels) - set(self.channel_names)
        if unknown:
            raise ValidationError(
                f"missing_channels not in recording: {sorted(unknown)}"
            )

    @property
    def num_samples(self):
        return self.samples.shape[0]

    @property
    def num_channels(self):
        return self.samples.shape[1]


@dataclass(frozen=True)
class PatchSet:
    """Non-overlapping cross-channel windows, flattened time-major."""

    patches: np.ndarray  # N x (L*C + pos_embed_dim)
    positions: np.ndarray  # N patch indices
    pos_embed_dim: int
    patch_len: int
    num_channels: int

    @property
    def num_patches(self):
        return self.patches.shape[0]

    @property
    def content_dim(self):
        """Width of the raw signal part, excluding position features."""
        return self.patch_len * self.num_channels


def _read_montage_table(text):
    electrodes = []
    for line_no, line in enumerate(text.splitlines()):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if parts[0] == "label":
            continue
        if len(parts) != 3:
            raise ValidationError(f"montage table line {line_no + 1}: {line!r}")
        electrodes.append(Electrode(parts[0], float(parts[1]), float(parts[2])))
    names = [e.name for e in electrodes]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate electrode names in montage table")
    return electrodes


def load_default_montage():
    """The canonical 64-electrode table shipped with the package."""
    text = (
        importlib.resources.files("eegimpute")
        .joinpath("montage64.tsv")
        .read_text(encoding="utf-8")
    )
    electrodes = _read_montage_table(text)
    if len(electrodes) != UNIFIED_CHANNELS:
        raise ValidationError(
            f"default montage must list {UNIFIED_CHANNELS} electrodes, "
            f"found {len(electrodes)}"
        )
    return electrodes


def canonical_names():
    return tuple(e.name for e in load_default_montage())


def _half_up(v):
    return int(math.floor(v + 0.5))


def project_to_grid(electrodes):
    """Snap electrodes to grid cells; half-up rounding, nearest wins ties.

    When two electrodes round to the same cell the one whose pre-rounding
    position is closer to the cell center keeps it and the other is
    dropped (treated as unobserved).
    """
    electrodes = list(electrodes)
    if not electrodes:
        raise ContractError("electrode list is empty")
    cells = [[None] * GRID_COLS for _ in range(GRID_ROWS)]
    dist = [[math.inf] * GRID_COLS for _ in range(GRID_ROWS)]
    for e in electrodes:
        if not (0.0 <= e.x_norm <= 1.0 and 0.0 <= e.y_norm <= 1.0):
            raise ValidationError(
                f"electrode {e.name}: coordinates ({e.x_norm}, {e.y_norm}) "
                "outside [0,1]"
            )
        r = _half_up(e.x_norm * (GRID_ROWS - 1))
        c = _half_up(e.y_norm * (GRID_COLS - 1))
        d = math.hypot(e.x_norm * (GRID_ROWS - 1) - r, e.y_norm * (GRID_COLS - 1) - c)
        if d < dist[r][c]:  # strict: earlier electrode wins exact ties
            cells[r][c] = e.name
            dist[r][c] = d
    canonical = tuple(
        (e.name, _half_up(e.x_norm * (GRID_ROWS - 1)), _half_up(e.y_norm * (GRID_COLS - 1)))
        for e in load_default_montage()
    )
    unobserved = tuple(
        (r, c) for _, r, c in canonical if cells[r][c] is None
    )
    return GridLayout(
        cells=tuple(tuple(row) for row in cells),
        canonical64=canonical,
        unobserved_cells=unobserved,
    )


class ThinPlateSpline2D:
    """Exact scattered-data interpolation with phi(r) = r^2 log r + affine.

    The affine term makes constants and linear fields reproduce exactly;
    the spline weights are constrained to be orthogonal to the affine
    basis, giving the standard bordered symmetric system.
    """

    def __init__(self, points, values):
        points = np.asarray(points, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 2:
            raise ContractError(f"points must be m x 2, got {points.shape}")
        m = points.shape[0]
        if m < 3:
            raise NumericalError(
                f"thin-plate fit needs at least 3 points, got {m}"
            )
        squeeze = values.ndim == 1
        if squeeze:
            values = values[:, None]
        if values.shape[0] != m:
            raise ContractError(
                f"{m} points vs {values.shape[0]} value rows"
            )
        P = np.column_stack([np.ones(m), points])
        if np.linalg.matrix_rank(P) < 3:
            raise NumericalError(
                "interpolation sites are collinear; thin-plate system is singular"
            )
        K = self._kernel(points, points)
        A = np.zeros((m + 3, m + 3))
        A[:m, :m] = K
        A[:m, m:] = P
        A[m:, :m] = P.T
        rhs = np.zeros((m + 3, values.shape[1]))
        rhs[:m] = values
        try:
            sol = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"thin-plate system is singular: {exc}") from exc
        if not np.all(np.isfinite(sol)):
            raise NumericalError("thin-plate solve produced non-finite weights")
        self._points = points
        self._weights = sol[:m]
        self._affine = sol[m:]
        self._squeeze = squeeze

    @staticmethod
    def _kernel(a, b):
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            k = 0.5 * d2 * np.log(d2)  # r^2 log r written via r^2 log r^2 / 2
        k[d2 == 0.0] = 0.0
        return k

    def __call__(self, queries):
        queries = np.asarray(queries, dtype=np.float64)
        single = queries.ndim == 1
        if single:
            queries = queries[None, :]
        K = self._kernel(queries, self._points)
        P = np.column_stack([np.ones(queries.shape[0]), queries])
        out = K @ self._weights + P @ self._affine
        if self._squeeze:
            out = out[:, 0]
        return out[0] if single else out


def rbf_interpolate(recording, layout):
    """Fill the canonical 64 channels from whatever the recording observed.

    Channels listed in ``missing_channels`` (or dropped during grid
    collision resolution) contribute nothing; their canonical cells are
    estimated per time step by a thin-plate spline over the observed grid
    positions. Observed canonical channels pass through untouched.
    """
    name_to_cell = {}
    for r in range(GRID_ROWS):
        for c in range(GRID_COLS):
            if layout.cells[r][c] is not None:
                name_to_cell[layout.cells[r][c]] = (r, c)

    observed_cells = []
    observed_cols = []
    for idx, name in enumerate(recording.channel_names):
        if name in recording.missing_channels:
            continue
        cell = name_to_cell.get(name)
        if cell is None:
            continue  # lost a collision or off-montage: no grid position
        observed_cells.append(cell)
        observed_cols.append(idx)

    canonical = layout.canonical64
    cell_to_observed = {cell: col for cell, col in zip(observed_cells, observed_cols)}

    if all((r, c) in cell_to_observed for _, r, c in canonical):
        samples = np.column_stack(
            [recording.samples[:, cell_to_observed[(r, c)]] for _, r, c in canonical]
        )
        return replace(
            recording,
            samples=samples,
            channel_names=tuple(n for n, _, _ in canonical),
            missing_channels=(),
        )

    if len(observed_cells) < 3:
        raise NumericalError(
            f"only {len(observed_cells)} observed grid positions; "
            "need at least 3 non-collinear sites to interpolate"
        )
    points = np.asarray(observed_cells, dtype=np.float64)
    values = recording.samples[:, observed_cols].T  # one column per time step
    spline = ThinPlateSpline2D(points, values)
    targets = np.asarray([(r, c) for _, r, c in canonical], dtype=np.float64)
    filled = spline(targets)  # 64 x T

    samples = filled.T.copy()
    for j, (_, r, c) in enumerate(canonical):
        col = cell_to_observed.get((r, c))
        if col is not None:
            samples[:, j] = recording.samples[:, col]
    return replace(
        recording,
        samples=samples,
        channel_names=tuple(n for n, _, _ in canonical),
        missing_channels=(),
    )


def unify(recording, electrodes=None):
    """Convenience wrapper: project the montage, then interpolate."""
    if electrodes is None:
        table = {e.name: e for e in load_default_montage()}
        try:
            electrodes = [table[n] for n in recording.channel_names]
        except KeyError as exc:
            raise ValidationError(
                f"channel {exc.args[0]!r} is not in the default montage"
            ) from exc
    return rbf_interpolate(recording, project_to_grid(electrodes))


def patchify(recording, patch_len):
    """Cut the recording into T/L non-overlapping cross-channel patches."""
    T, C = recording.samples.shape
    if patch_len < 1:
        raise ContractError(f"patch length must be positive, got {patch_len}")
    if T % patch_len != 0:
        raise ContractError(
            f"signal length {T} is not divisible by patch length {patch_len}; "
            "resample or trim first"
        )
    n = T // patch_len
    patches = recording.samples.reshape(n, patch_len * C)
    return PatchSet(
        patches=patches.copy(),
        positions=np.arange(n),
        pos_embed_dim=0,
        patch_len=patch_len,
        num_channels=C,
    )


def sinusoid_position_features(positions, dim, base=10000.0):
    """(sin, cos) pairs of geometrically spaced frequencies, one row each."""
    if dim % 2 != 0 or dim < 2:
        raise ContractError(f"position feature width must be even >= 2, got {dim}")
    positions = np.asarray(positions, dtype=np.float64)
    freqs = base ** (-2.0 * np.arange(dim // 2) / dim)
    angles = positions[:, None] * freqs[None, :]
    out = np.empty((positions.shape[0], dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def add_positional_embedding(patchset, dim=8):
    """Append fixed sinusoidal features of each patch index."""
    if patchset.pos_embed_dim != 0:
        raise ContractError("patch set already carries position features")
    emb = sinusoid_position_features(patchset.positions, dim)
    return replace(
        patchset,
        patches=np.concatenate([patchset.patches, emb], axis=1),
        pos_embed_dim=dim,
    )


def strip_positional_embedding(patchset):
    """Drop the appended position block, recovering the raw patches."""
    if patchset.pos_embed_dim == 0:
        return patchset
    return replace(
        patchset,
        patches=patchset.patches[:, : patchset.content_dim].copy(),
        pos_embed_dim=0,
    )
