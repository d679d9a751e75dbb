"""Temporal pattern pool, spatial encoding, and factorized reconstruction.

A small pool holds three candidate temporal embeddings (slow trend,
periodic structure, residual texture), each a pattern_dim x patch_len
matrix. Every patch picks the pool entry most similar to it (cosine in
patch space, via a fixed channel-lifting map), a transformer block turns
the patch into one feature row per channel (H, n x d), and the product
H @ Z reconstructs the patch. The training loss scores that
reconstruction elementwise.

Spatial features are represented directly as n x d tensors; there is no
wrapper type around H.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ContractError, DegenerateInputError, DimensionError
from .montage import sinusoid_position_features
from .numerics import Tensor

PATTERN_KINDS = ("trend", "season", "resid")


@dataclass
class TemporalPatternPool:
    """Three named temporal embeddings, all pattern_dim x patch_len."""

    trend: Tensor
    season: Tensor
    resid: Tensor
    trainable: bool = True

    def __post_init__(self):
        shapes = {self.trend.shape, self.season.shape, self.resid.shape}
        if len(shapes) != 1:
            raise ContractError(f"pool entries disagree in shape: {shapes}")
        for kind in PATTERN_KINDS:
            z = getattr(self, kind)
            if not np.all(np.isfinite(z.data)):
                raise ContractError(f"pattern {kind} has non-finite entries")
            if np.linalg.norm(z.data) == 0.0:
                raise ContractError(f"pattern {kind} has zero norm")

    @property
    def pattern_dim(self):
        return self.trend.shape[0]

    @property
    def patch_len(self):
        return self.trend.shape[1]

    def entries(self):
        return [(kind, getattr(self, kind)) for kind in PATTERN_KINDS]


def make_pattern_pool(pattern_dim, patch_len, seed=0, trainable=True):
    """Seeded pool: polynomial rows, sinusoid rows, white-noise rows.

    Rows are unit-normalized so cosine selection starts on equal footing.
    """
    if pattern_dim < 1 or patch_len < 2:
        raise ContractError(
            f"need pattern_dim >= 1 and patch_len >= 2, got {pattern_dim}, {patch_len}"
        )
    rng = np.random.default_rng(seed)
    t = np.linspace(-1.0, 1.0, patch_len)
    u = np.arange(patch_len) / patch_len

    trend = np.empty((pattern_dim, patch_len))
    for j in range(pattern_dim):
        trend[j] = (t + 0.25 * (j // 4)) ** (j % 4)
    season = np.empty((pattern_dim, patch_len))
    for j in range(pattern_dim):
        cycles = 1 + j // 2
        phase = 2.0 * np.pi * cycles * u
        season[j] = np.sin(phase) if j % 2 == 0 else np.cos(phase)
    resid = rng.standard_normal((pattern_dim, patch_len))

    def normalize(m):
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return m / norms

    return TemporalPatternPool(
        trend=Tensor(normalize(trend), requires_grad=trainable),
        season=Tensor(normalize(season), requires_grad=trainable),
        resid=Tensor(normalize(resid), requires_grad=trainable),
        trainable=trainable,
    )


class PatternProjection:
    """Fixed linear lift from pattern space to patch space.

    A pattern Z (pattern_dim x patch_len) becomes a full cross-channel
    patch by replicating pattern rows over channels (channel c reads
    pattern row c mod pattern_dim, scaled so columns of the lifting map
    are orthonormal) and flattening time-major, matching patch layout.
    """

    def __init__(self, num_channels, pattern_dim):
        if pattern_dim < 1 or num_channels < pattern_dim:
            raise ContractError(
                f"need 1 <= pattern_dim <= num_channels, got "
                f"{pattern_dim}, {num_channels}"
            )
        self.num_channels = num_channels
        self.pattern_dim = pattern_dim
        W = np.zeros((num_channels, pattern_dim))
        counts = np.bincount(np.arange(num_channels) % pattern_dim, minlength=pattern_dim)
        for c in range(num_channels):
            k = c % pattern_dim
            W[c, k] = 1.0 / np.sqrt(counts[k])
        self.W = W

    def lift(self, pattern):
        """pattern (D x L) -> channel-major matrix (C x L), plain numpy."""
        pattern = np.asarray(pattern, dtype=np.float64)
        if pattern.ndim != 2 or pattern.shape[0] != self.pattern_dim:
            raise DimensionError(
                f"pattern must be {self.pattern_dim} x L, got {pattern.shape}"
            )
        return self.W @ pattern

    def to_patch_vector(self, channel_major):
        """(C x L) -> time-major flattened patch vector of length L*C."""
        return np.asarray(channel_major).T.reshape(-1)

    def project_pattern(self, pattern):
        return self.to_patch_vector(self.lift(pattern))


def select_pattern(patch_content, pool, proj):
    """Pick the pool entry with the highest cosine to the patch.

    Similarity is computed in patch space on the raw (position-free)
    patch content. Ties resolve in pool order: trend, season, resid.
    """
    patch = np.asarray(patch_content, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(patch)
    if norm == 0.0:
        raise DegenerateInputError("cannot match a zero-norm patch")
    if patch.size != proj.num_channels * pool.patch_len:
        raise DimensionError(
            f"patch length {patch.size} vs expected "
            f"{proj.num_channels * pool.patch_len}"
        )
    sims = []
    for _, z in pool.entries():
        lifted = proj.project_pattern(z.data)
        sims.append(float(patch @ lifted / (norm * np.linalg.norm(lifted))))
    best = int(np.argmax(sims))
    return PATTERN_KINDS[best], sims[best]


@dataclass
class EncoderParams:
    """One self-attention block mapping a patch to per-channel features."""

    W_in: Tensor
    b_in: Tensor
    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    W_o: Tensor
    b_o: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    W_ff1: Tensor
    b_ff1: Tensor
    W_ff2: Tensor
    b_ff2: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    channel_encoding: np.ndarray
    num_channels: int
    patch_len: int
    pos_dim: int
    num_heads: int
    use_channel_encoding: bool = True

    def tensors(self):
        """Named trainable tensors in a fixed order."""
        return [
            ("W_in", self.W_in),
            ("b_in", self.b_in),
            ("W_q", self.W_q),
            ("W_k", self.W_k),
            ("W_v", self.W_v),
            ("W_o", self.W_o),
            ("b_o", self.b_o),
            ("ln1_gain", self.ln1_gain),
            ("ln1_bias", self.ln1_bias),
            ("W_ff1", self.W_ff1),
            ("b_ff1", self.b_ff1),
            ("W_ff2", self.W_ff2),
            ("b_ff2", self.b_ff2),
            ("ln2_gain", self.ln2_gain),
            ("ln2_bias", self.ln2_bias),
        ]


def make_encoder_params(
    num_channels,
    patch_len,
    pos_dim,
    embed_dim,
    num_heads=2,
    seed=0,
    use_channel_encoding=True,
):
    if embed_dim % num_heads != 0:
        raise ContractError(
            f"embed_dim {embed_dim} not divisible by {num_heads} heads"
        )
    rng = np.random.default_rng(seed)
    token_dim = patch_len + pos_dim

    def w(rows, cols):
        return Tensor(
            rng.normal(0.0, 1.0 / np.sqrt(rows), (rows, cols)), requires_grad=True
        )

    def b(cols):
        return Tensor(np.zeros(cols), requires_grad=True)

    d = embed_dim
    return EncoderParams(
        W_in=w(token_dim, d),
        b_in=b(d),
        W_q=w(d, d),
        W_k=w(d, d),
        W_v=w(d, d),
        W_o=w(d, d),
        b_o=b(d),
        ln1_gain=Tensor(np.ones(d), requires_grad=True),
        ln1_bias=b(d),
        W_ff1=w(d, 2 * d),
        b_ff1=b(2 * d),
        W_ff2=w(2 * d, d),
        b_ff2=b(d),
        ln2_gain=Tensor(np.ones(d), requires_grad=True),
        ln2_bias=b(d),
        channel_encoding=sinusoid_position_features(np.arange(num_channels), d)
        if d % 2 == 0
        else np.zeros((num_channels, d)),
        num_channels=num_channels,
        patch_len=patch_len,
        pos_dim=pos_dim,
        num_heads=num_heads,
        use_channel_encoding=use_channel_encoding,
    )


def _self_attention(x, params):
    d = x.shape[1]
    heads = params.num_heads
    hd = d // heads
    q = nx.matmul(x, params.W_q)
    k = nx.matmul(x, params.W_k)
    v = nx.matmul(x, params.W_v)
    outs = []
    for h in range(heads):
        qs = nx.slice_axis(q, 1, h * hd, (h + 1) * hd)
        ks = nx.slice_axis(k, 1, h * hd, (h + 1) * hd)
        vs = nx.slice_axis(v, 1, h * hd, (h + 1) * hd)
        logits = nx.matmul(qs, nx.transpose(ks)) * (1.0 / np.sqrt(hd))
        outs.append(nx.matmul(nx.softmax_rows(logits), vs))
    return nx.matmul(nx.concat(outs, axis=1), params.W_o) + params.b_o.reshape((1, -1))


def encode_patch(patch_row, patchset, params):
    """One positional-embedded patch row -> per-channel features (n x d)."""
    C = patchset.num_channels
    L = patchset.patch_len
    if C != params.num_channels:
        raise ContractError(
            f"encoder built for {params.num_channels} channels, patch has {C}"
        )
    if L != params.patch_len or patchset.pos_embed_dim != params.pos_dim:
        raise ContractError(
            f"encoder expects patch_len {params.patch_len} with "
            f"{params.pos_dim} position features, got {L}, {patchset.pos_embed_dim}"
        )
    patch_row = np.asarray(patch_row, dtype=np.float64).reshape(-1)
    content = patch_row[: L * C].reshape(L, C)
    pos = patch_row[L * C :]
    tokens = np.concatenate(
        [content.T, np.tile(pos, (C, 1))], axis=1
    )  # n x (L + pos_dim)

    x = nx.matmul(Tensor(tokens), params.W_in) + params.b_in.reshape((1, -1))
    if params.use_channel_encoding:
        x = x + Tensor(params.channel_encoding)
    x = nx.layer_norm(x + _self_attention(x, params), params.ln1_gain, params.ln1_bias)
    ff = nx.matmul(
        nx.relu(nx.matmul(x, params.W_ff1) + params.b_ff1.reshape((1, -1))),
        params.W_ff2,
    ) + params.b_ff2.reshape((1, -1))
    return nx.layer_norm(x + ff, params.ln2_gain, params.ln2_bias)


def encode_spatial(patchset, params):
    """Encode every patch; one n x d feature tensor per patch."""
    return [
        encode_patch(patchset.patches[i], patchset, params)
        for i in range(patchset.num_patches)
    ]


def reconstruct(H, pattern, proj):
    """Factorized patch estimate: flatten (H @ Z) back to patch layout."""
    H = nx.as_tensor(H)
    pattern = nx.as_tensor(pattern)
    if H.ndim != 2 or pattern.ndim != 2 or H.shape[1] != pattern.shape[0]:
        raise DimensionError(
            f"need (n x d) @ (d x L), got {H.shape} and {pattern.shape}"
        )
    if H.shape[0] != proj.num_channels:
        raise DimensionError(
            f"H has {H.shape[0]} rows, projection expects {proj.num_channels}"
        )
    channel_major = nx.matmul(H, pattern)  # n x L
    return nx.transpose(channel_major).reshape((-1,))


def decomposition_loss(patch_contents, features, patterns, proj):
    """Mean elementwise squared reconstruction error over patches."""
    if len(patch_contents) == 0:
        raise ContractError("decomposition loss needs at least one patch")
    if not (len(patch_contents) == len(features) == len(patterns)):
        raise ContractError(
            f"got {len(patch_contents)} patches, {len(features)} feature "
            f"matrices, {len(patterns)} patterns"
        )
    total = None
    for content, H, z in zip(patch_contents, features, patterns):
        est = reconstruct(H, z, proj)
        diff = est - Tensor(np.asarray(content, dtype=np.float64).reshape(-1))
        term = (diff * diff).mean()
        total = term if total is None else total + term
    return total * (1.0 / len(patch_contents))
