"""Classification summary statistics on integer label arrays."""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def confusion_matrix(true_labels, predicted_labels, num_classes):
    """Counts with true class on rows and predicted class on columns."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    if true_labels.shape != predicted_labels.shape or true_labels.ndim != 1:
        raise ContractError("label arrays must be 1-D and the same length")
    if true_labels.size == 0:
        raise ContractError("cannot score an empty label array")
    for arr in (true_labels, predicted_labels):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ContractError(
                f"labels must lie in [0, {num_classes}); saw "
                f"[{arr.min()}, {arr.max()}]"
            )
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (true_labels, predicted_labels), 1)
    return counts


def accuracy(true_labels, predicted_labels, num_classes):
    counts = confusion_matrix(true_labels, predicted_labels, num_classes)
    return float(np.trace(counts) / counts.sum())


def _per_class_scores(counts):
    tp = np.diag(counts).astype(np.float64)
    predicted = counts.sum(axis=0).astype(np.float64)
    actual = counts.sum(axis=1).astype(np.float64)
    # A class never predicted (or never present) contributes zero rather
    # than a 0/0; macro averages still run over every class.
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(
        2.0 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0
    )
    return precision, recall, f1


def macro_precision(true_labels, predicted_labels, num_classes):
    counts = confusion_matrix(true_labels, predicted_labels, num_classes)
    return float(_per_class_scores(counts)[0].mean())


def macro_recall(true_labels, predicted_labels, num_classes):
    counts = confusion_matrix(true_labels, predicted_labels, num_classes)
    return float(_per_class_scores(counts)[1].mean())


def macro_f1(true_labels, predicted_labels, num_classes):
    counts = confusion_matrix(true_labels, predicted_labels, num_classes)
    return float(_per_class_scores(counts)[2].mean())


def cohen_kappa(true_labels, predicted_labels, num_classes):
    """Agreement corrected for chance; 1.0 when perfect, 0.0 at chance.

    A constant predictor on a balanced two-class set lands exactly at the
    chance rate, so the score is 0.0 there by construction.
    """
    counts = confusion_matrix(true_labels, predicted_labels, num_classes)
    total = counts.sum()
    observed = np.trace(counts) / total
    expected = float((counts.sum(axis=0) / total) @ (counts.sum(axis=1) / total))
    if expected >= 1.0:
        # Both raters constant and identical: perfect but degenerate.
        return 1.0 if observed == 1.0 else 0.0
    return float((observed - expected) / (1.0 - expected))


def score_report(true_labels, predicted_labels, num_classes):
    counts = confusion_matrix(true_labels, predicted_labels, num_classes)
    precision, recall, f1 = _per_class_scores(counts)
    return {
        "accuracy": float(np.trace(counts) / counts.sum()),
        "macro_precision": float(precision.mean()),
        "macro_recall": float(recall.mean()),
        "macro_f1": float(f1.mean()),
        "cohen_kappa": cohen_kappa(true_labels, predicted_labels, num_classes),
        "confusion": counts,
    }
