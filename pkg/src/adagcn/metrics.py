"""Prediction thresholding, micro/macro F1 and embedding export."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .model import ModelParams, embed
from .graph import DomainPair, renormalized_filter


@dataclass
class PredictionSet:
    labels: list[frozenset]
    scores: np.ndarray


def threshold_predict(scores: np.ndarray, mode: str) -> PredictionSet:
    """Labels scoring above 0.5 (multi-label) or the argmax (multi-class).

    Multi-label rows with no score above 0.5 fall back to the argmax, so every
    prediction is nonempty.  ``np.argmax`` breaks ties toward the lowest index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    top = np.argmax(scores, axis=1)
    preds = []
    for i, row in enumerate(scores):
        if mode == "multi-label":
            chosen = frozenset(np.flatnonzero(row > 0.5).tolist())
            preds.append(chosen or frozenset([int(top[i])]))
        elif mode == "multi-class":
            preds.append(frozenset([int(top[i])]))
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return PredictionSet(preds, scores)


def _indicator(sets, num_labels: int) -> np.ndarray:
    m = np.zeros((len(sets), num_labels), dtype=bool)
    for i, s in enumerate(sets):
        for k in s:
            if not 0 <= k < num_labels:
                raise IndexError(f"label {k} outside 0..{num_labels - 1}")
            m[i, k] = True
    return m


def _counts(pred, truth, num_labels):
    pred = pred.labels if isinstance(pred, PredictionSet) else pred
    if len(pred) != len(truth):
        raise ValueError(f"{len(pred)} predictions for {len(truth)} nodes")
    p, t = _indicator(pred, num_labels), _indicator(truth, num_labels)
    tp = (p & t).sum(axis=0)
    fp = (p & ~t).sum(axis=0)
    fn = (~p & t).sum(axis=0)
    return tp, fp, fn


def _num_labels(pred, truth):
    pred = pred.labels if isinstance(pred, PredictionSet) else pred
    return 1 + max((max(s) for s in list(pred) + list(truth) if s), default=0)


def micro_f1(pred, truth, num_labels: int | None = None) -> float:
    """F1 pooled over every (node, label) decision."""
    num_labels = num_labels or _num_labels(pred, truth)
    tp, fp, fn = (int(c.sum()) for c in _counts(pred, truth, num_labels))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def macro_f1(pred, truth, num_labels: int | None = None) -> float:
    """Unweighted mean of per-label F1; a label never predicted nor present scores 0.

    Summed in exact rational arithmetic, so the result is the correctly
    rounded mean regardless of label order.
    """
    num_labels = num_labels or _num_labels(pred, truth)
    tp, fp, fn = _counts(pred, truth, num_labels)
    total = sum((Fraction(2 * int(a), int(2 * a + b + c)) for a, b, c in zip(tp, fp, fn)
                 if 2 * a + b + c), Fraction(0))
    return float(total / num_labels)


def export_embeddings(params: ModelParams, pair: DomainPair, path) -> None:
    """TSV rows: node id, domain, embedding values, comma-joined true labels."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for domain, net in (("source", pair.source), ("target", pair.target)):
            h = embed(params, renormalized_filter(net), net.features)
            for i, row in enumerate(h):
                labels = ",".join(str(k) for k in sorted(net.labels[i]))
                values = "\t".join(repr(float(v)) for v in row)
                fh.write(f"{i}\t{domain}\t{values}\t{labels}\n")
