"""Evaluation metrics: rank-based AUC, macro one-vs-rest AUC, confidence
split by correctness, and PCA projection for feature-space export."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError


def _mean_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their block."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_mw(scores: np.ndarray, labels: np.ndarray) -> float:
    """AUC via the rank statistic: (pairs won + half the ties) / (P*N).

    Implemented with mean ranks; the brute-force pairwise count is the test
    oracle.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs at least one positive and one negative")
    ranks = _mean_ranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_ovr_auc(probs: np.ndarray, labels: np.ndarray):
    """Per-class one-vs-rest AUCs and their unweighted mean."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] != labels.size:
        raise DimensionError(f"probs {probs.shape} vs {labels.size} labels")
    n_classes = probs.shape[1]
    present = set(np.unique(labels).tolist())
    per_class = []
    for m in range(n_classes):
        if m not in present:
            raise DataError(f"class {m} absent from labels")
        per_class.append(auc_mw(probs[:, m], (labels == m).astype(int)))
    return per_class, float(np.mean(per_class))


@dataclass
class ConfidenceSummary:
    mean_correct: float | None
    std_correct: float | None
    mean_incorrect: float | None
    std_incorrect: float | None
    n_correct: int
    n_incorrect: int


def confidence_summary(
    probs: np.ndarray, labels: np.ndarray, predictions: np.ndarray
) -> ConfidenceSummary:
    """Mean/std of max-probability confidence, split by correctness. An
    empty group is reported as absent (None), never as 0."""
    probs = np.asarray(probs, dtype=np.float64)
    conf = probs.max(axis=1)
    correct = np.asarray(predictions) == np.asarray(labels)

    def stats(mask):
        if not mask.any():
            return None, None
        vals = conf[mask]
        return float(vals.mean()), float(vals.std())

    mc, sc = stats(correct)
    mi, si = stats(~correct)
    return ConfidenceSummary(
        mean_correct=mc,
        std_correct=sc,
        mean_incorrect=mi,
        std_incorrect=si,
        n_correct=int(correct.sum()),
        n_incorrect=int((~correct).sum()),
    )


def pca_project(
    vectors: np.ndarray, n_components: int = 50, out_dims: int = 2
) -> np.ndarray:
    """First ``out_dims`` principal-component scores of mean-centered data.

    Components come from an eigendecomposition of the covariance matrix,
    with each component's sign fixed so its largest-magnitude loading is
    positive. Zero-variance input maps to zeros.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise DimensionError(f"need an (N>=2, d>=2) matrix, got {x.shape}")
    n, d = x.shape
    centered = x - x.mean(axis=0)
    if np.allclose(centered, 0.0):
        return np.zeros((n, out_dims))
    n_components = min(n_components, d, n - 1)
    out_dims = min(out_dims, n_components)
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:n_components]
    comps = eigvecs[:, order]  # (d, n_components)
    for j in range(comps.shape[1]):
        lead = np.argmax(np.abs(comps[:, j]))
        if comps[lead, j] < 0:
            comps[:, j] = -comps[:, j]
    scores = centered @ comps
    out = np.zeros((n, out_dims))
    out[:, : scores.shape[1]] = scores[:, :out_dims]
    return out


def format_report(pairs) -> str:
    """key=value report, one entry per line, stable ordering as given."""
    buf = io.StringIO()
    for key, value in pairs:
        if isinstance(value, float):
            buf.write(f"{key}={value!r}\n")
        else:
            buf.write(f"{key}={value}\n")
    return buf.getvalue()
