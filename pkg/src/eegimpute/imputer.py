"""Channel masking and cross-attention imputation over spatial features.

Whole rows of the per-channel feature matrix H (one row per channel) are
replaced by a shared learnable token, then rebuilt by a stack of
attention blocks whose keys and values always come from the original
uncorrupted H. Two losses score the rebuild: fidelity against the
original rows, and consistency between two independently masked views.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ContractError
from .montage import sinusoid_position_features
from .numerics import Tensor


@dataclass(frozen=True)
class MaskSpec:
    """Which channel rows are hidden; constant along each row."""

    num_rows: int
    ratio: float
    seed: object
    masked_rows: tuple

    def __post_init__(self):
        bad = [i for i in self.masked_rows if not 0 <= i < self.num_rows]
        if bad:
            raise ContractError(f"masked rows out of range: {bad}")
        if len(set(self.masked_rows)) != len(self.masked_rows):
            raise ContractError("masked rows must be unique")

    def keep_column(self):
        """(n,1) float column: 1 on kept rows, 0 on masked rows."""
        keep = np.ones((self.num_rows, 1))
        keep[list(self.masked_rows), 0] = 0.0
        return keep

    def mask_matrix(self, width):
        """The full n x width binary matrix form."""
        return np.repeat(self.keep_column(), width, axis=1)


def _half_up(v):
    return int(math.floor(v + 0.5))


def make_mask(num_rows, ratio, seed):
    """Uniformly random row subset of size round(ratio * n), seeded."""
    if not 0.0 <= ratio <= 1.0:
        raise ContractError(f"mask ratio must be in [0,1], got {ratio}")
    if num_rows < 1:
        raise ContractError(f"need at least one row, got {num_rows}")
    count = _half_up(ratio * num_rows)
    rng = np.random.default_rng(seed)
    rows = tuple(sorted(rng.choice(num_rows, size=count, replace=False).tolist()))
    return MaskSpec(num_rows=num_rows, ratio=ratio, seed=seed, masked_rows=rows)


def mask_from_rows(num_rows, rows):
    """Deterministic mask over an explicit row set (inference path)."""
    rows = tuple(sorted(set(int(r) for r in rows)))
    return MaskSpec(
        num_rows=num_rows,
        ratio=len(rows) / num_rows if num_rows else 0.0,
        seed=None,
        masked_rows=rows,
    )


@dataclass
class ImputerBlock:
    """One cross-attention block: attend, project, norm, feed forward."""

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

    def tensors(self):
        return [
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


@dataclass
class ImputerParams:
    """Shared mask token, learnable row positions, and the block stack."""

    mask_token: Tensor
    row_positions: Tensor
    blocks: list
    num_rows: int
    width: int

    def tensors(self):
        out = [("mask_token", self.mask_token), ("row_positions", self.row_positions)]
        for b, block in enumerate(self.blocks):
            out.extend((f"block{b}/{name}", t) for name, t in block.tensors())
        return out


@dataclass(frozen=True)
class ImputationResult:
    """Rebuilt feature matrix plus the rows that were hidden."""

    H_tilde: Tensor
    masked_rows: tuple


def make_imputer_params(num_rows, width, num_blocks=2, seed=0):
    if num_blocks < 1:
        raise ContractError(f"need at least one block, got {num_blocks}")
    rng = np.random.default_rng(seed)
    d = width

    def w():
        return Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), (d, d)), requires_grad=True)

    def make_block():
        return ImputerBlock(
            W_q=w(),
            W_k=w(),
            W_v=w(),
            W_o=w(),
            b_o=Tensor(np.zeros(d), requires_grad=True),
            ln1_gain=Tensor(np.ones(d), requires_grad=True),
            ln1_bias=Tensor(np.zeros(d), requires_grad=True),
            W_ff1=Tensor(
                rng.normal(0.0, 1.0 / np.sqrt(d), (d, 2 * d)), requires_grad=True
            ),
            b_ff1=Tensor(np.zeros(2 * d), requires_grad=True),
            W_ff2=Tensor(
                rng.normal(0.0, 1.0 / np.sqrt(2 * d), (2 * d, d)), requires_grad=True
            ),
            b_ff2=Tensor(np.zeros(d), requires_grad=True),
            ln2_gain=Tensor(np.ones(d), requires_grad=True),
            ln2_bias=Tensor(np.zeros(d), requires_grad=True),
        )

    row_pos = (
        sinusoid_position_features(np.arange(num_rows), d)
        if d % 2 == 0
        else rng.normal(0.0, 0.02, (num_rows, d))
    )
    return ImputerParams(
        mask_token=Tensor(rng.normal(0.0, 0.02, d), requires_grad=True),
        row_positions=Tensor(row_pos, requires_grad=True),
        blocks=[make_block() for _ in range(num_blocks)],
        num_rows=num_rows,
        width=d,
    )


def apply_mask(H, spec, mask_token):
    """Replace masked rows with the shared token; keep the rest bit-exact."""
    H = nx.as_tensor(H)
    token = nx.as_tensor(mask_token)
    if H.ndim != 2 or H.shape[0] != spec.num_rows:
        raise ContractError(
            f"feature matrix is {H.shape}, mask covers {spec.num_rows} rows"
        )
    if token.data.reshape(-1).shape[0] != H.shape[1]:
        raise ContractError(
            f"mask token width {token.data.size} vs feature width {H.shape[1]}"
        )
    keep = Tensor(spec.keep_column())
    hole = Tensor(1.0 - spec.keep_column())
    return H * keep + token.reshape((1, -1)) * hole


def cross_attention_core(Q_in, H, block):
    """Scaled dot-product attention; keys/values from H. Returns weights too."""
    Q_in, H = nx.as_tensor(Q_in), nx.as_tensor(H)
    d_k = block.W_q.shape[1]
    q = nx.matmul(Q_in, block.W_q)
    k = nx.matmul(H, block.W_k)
    v = nx.matmul(H, block.W_v)
    weights = nx.softmax_rows(nx.matmul(q, nx.transpose(k)) * (1.0 / np.sqrt(d_k)))
    return nx.matmul(weights, v), weights


def context_attention(Q_in, H, block):
    """Full block: attention, output projection, residual norms, feed forward."""
    attended, _ = cross_attention_core(Q_in, H, block)
    projected = nx.matmul(attended, block.W_o) + block.b_o.reshape((1, -1))
    x = nx.layer_norm(Q_in + projected, block.ln1_gain, block.ln1_bias)
    ff = nx.matmul(
        nx.relu(nx.matmul(x, block.W_ff1) + block.b_ff1.reshape((1, -1))),
        block.W_ff2,
    ) + block.b_ff2.reshape((1, -1))
    return nx.layer_norm(x + ff, block.ln2_gain, block.ln2_bias)


def impute(H_mask, H, params, spec):
    """Rebuild masked rows from context; copy unmasked rows through.

    The first block queries the masked matrix plus row positions; later
    blocks query the previous block's output. Keys and values are drawn
    from the original H at every depth.
    """
    H_mask, H = nx.as_tensor(H_mask), nx.as_tensor(H)
    if not params.blocks:
        raise ContractError("imputer needs at least one block")
    if H_mask.shape != H.shape:
        raise ContractError(f"masked shape {H_mask.shape} vs context {H.shape}")
    q = H_mask + params.row_positions
    for block in params.blocks:
        q = context_attention(q, H, block)
    keep = Tensor(spec.keep_column())
    hole = Tensor(1.0 - spec.keep_column())
    return ImputationResult(H_tilde=H * keep + q * hole, masked_rows=spec.masked_rows)


def fidelity_loss(result, H):
    """Mean squared-row error over masked rows; zero for an empty mask."""
    H = nx.as_tensor(H)
    if result.H_tilde.shape != H.shape:
        raise ContractError(
            f"imputed shape {result.H_tilde.shape} vs original {H.shape}"
        )
    rows = list(result.masked_rows)
    if not rows:
        return Tensor(0.0)
    picked = np.zeros((H.shape[0], 1))
    picked[rows] = 1.0
    diff = (result.H_tilde - H) * Tensor(picked)
    return (diff * diff).sum() * (1.0 / len(rows))


def consistency_loss(result_a, result_b):
    """Mean squared-row gap between two views, over the union of masks."""
    if result_a.H_tilde.shape != result_b.H_tilde.shape:
        raise ContractError(
            f"view shapes differ: {result_a.H_tilde.shape} vs "
            f"{result_b.H_tilde.shape}"
        )
    union = sorted(set(result_a.masked_rows) | set(result_b.masked_rows))
    if not union:
        return Tensor(0.0)
    picked = np.zeros((result_a.H_tilde.shape[0], 1))
    picked[union] = 1.0
    diff = (result_a.H_tilde - result_b.H_tilde) * Tensor(picked)
    return (diff * diff).sum() * (1.0 / len(union))


def total_loss(fidelity, consistency, weight):
    """fidelity + weight * consistency."""
    if weight < 0:
        raise ContractError(f"consistency weight must be nonnegative, got {weight}")
    return nx.as_tensor(fidelity) + nx.as_tensor(consistency) * weight
