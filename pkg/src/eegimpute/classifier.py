"""Compact convolutional classification head for multichannel signals.

The layout follows the familiar EEGNet recipe scaled down for desk-size
inputs: a small bank of temporal filters, depthwise spatial filters
across channels, a separable temporal stage, two average-pooling steps,
and a dense softmax readout. Dropout and batch norm are omitted so the
forward pass is a pure deterministic function of its parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ContractError
from .numerics import Tensor

TEMPORAL_FILTERS = 4
TEMPORAL_KERNEL = 32
DEPTH_MULTIPLIER = 2
SEPARABLE_KERNEL = 16
POOL_1 = 4
POOL_2 = 8


@dataclass
class ClassifierParams:
    """All trainable tensors plus the fixed input geometry."""

    temporal_kernels: Tensor  # F1 x TEMPORAL_KERNEL
    spatial_weights: Tensor  # (F1 * depth) x num_channels, rows 2f..2f+1 serve map f
    separable_depth: Tensor  # (F1 * depth) x SEPARABLE_KERNEL
    separable_point: Tensor  # (F1 * depth) x (F1 * depth)
    dense_w: Tensor  # feature_dim x num_classes
    dense_b: Tensor  # num_classes
    num_channels: int
    input_len: int
    num_classes: int

    @property
    def feature_dim(self):
        return TEMPORAL_FILTERS * DEPTH_MULTIPLIER * (self.input_len // (POOL_1 * POOL_2))

    def tensors(self):
        return [
            ("temporal_kernels", self.temporal_kernels),
            ("spatial_weights", self.spatial_weights),
            ("separable_depth", self.separable_depth),
            ("separable_point", self.separable_point),
            ("dense_w", self.dense_w),
            ("dense_b", self.dense_b),
        ]


def make_classifier_params(num_channels, input_len, num_classes, seed=0):
    if input_len % (POOL_1 * POOL_2) != 0:
        raise ContractError(
            f"input length {input_len} must be divisible by {POOL_1 * POOL_2}"
        )
    if num_classes < 2:
        raise ContractError(f"need at least 2 classes, got {num_classes}")
    rng = np.random.default_rng(seed)
    maps = TEMPORAL_FILTERS * DEPTH_MULTIPLIER
    feat = maps * (input_len // (POOL_1 * POOL_2))

    def he(rows, cols):
        return Tensor(
            rng.normal(0.0, np.sqrt(2.0 / cols), (rows, cols)), requires_grad=True
        )

    return ClassifierParams(
        temporal_kernels=he(TEMPORAL_FILTERS, TEMPORAL_KERNEL),
        spatial_weights=he(maps, num_channels),
        separable_depth=he(maps, SEPARABLE_KERNEL),
        separable_point=he(maps, maps),
        dense_w=he(feat, num_classes),
        dense_b=Tensor(np.zeros(num_classes), requires_grad=True),
        num_channels=num_channels,
        input_len=input_len,
        num_classes=num_classes,
    )


def _avgpool_rows(x, factor):
    rows, T = x.shape
    return x.reshape((rows, T // factor, factor)).mean(axis=2)


def classify(signal, params, return_features=False):
    """Class probabilities for one time-major (T x n) signal.

    With ``return_features`` also returns the flattened penultimate
    activation vector (useful for feature-space diagnostics).
    """
    signal = nx.as_tensor(signal)
    if signal.ndim != 2 or signal.shape != (params.input_len, params.num_channels):
        raise ContractError(
            f"signal shape {signal.shape} vs configured "
            f"({params.input_len}, {params.num_channels})"
        )
    x = nx.transpose(signal)  # channels x T
    banked = nx.conv1d_bank(x, params.temporal_kernels)  # F1 x n x T

    mixed = []
    for f in range(TEMPORAL_FILTERS):
        fmap = nx.slice_axis(banked, 0, f, f + 1).reshape(
            (params.num_channels, params.input_len)
        )
        w = nx.slice_axis(params.spatial_weights, 0, DEPTH_MULTIPLIER * f, DEPTH_MULTIPLIER * (f + 1))
        mixed.append(nx.matmul(w, fmap))  # depth x T
    x = nx.relu(nx.concat(mixed, axis=0))  # maps x T
    x = _avgpool_rows(x, POOL_1)
    x = nx.matmul(params.separable_point, nx.conv1d_rowwise(x, params.separable_depth))
    x = _avgpool_rows(nx.relu(x), POOL_2)
    features = x.reshape((1, params.feature_dim))
    logits = nx.matmul(features, params.dense_w) + params.dense_b.reshape((1, -1))
    probs = nx.softmax_rows(logits).reshape((params.num_classes,))
    if return_features:
        return probs, features.reshape((params.feature_dim,))
    return probs


def cross_entropy(probs, label):
    """Negative log-likelihood of the labeled class, floored at 1e-12."""
    probs = nx.as_tensor(probs)
    n = probs.data.reshape(-1).shape[0]
    if not isinstance(label, (int, np.integer)) or not 0 <= int(label) < n:
        raise ContractError(f"label {label!r} out of range for {n} classes")
    if abs(float(probs.data.sum()) - 1.0) > 1e-6 or np.any(probs.data < -1e-12):
        raise ContractError("probabilities do not form a distribution")
    p = nx.slice_axis(probs.reshape((n,)), 0, int(label), int(label) + 1).sum()
    return -nx.clip_min(p, 1e-12).log()
