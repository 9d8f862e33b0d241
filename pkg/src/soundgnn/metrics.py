"""Classification metrics and step-wise average precision."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .errors import ValidationError


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    auprc: Optional[float] = None
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_json(self) -> dict:
        return asdict(self)


def _check_lengths(a, b) -> None:
    if len(a) != len(b):
        raise ValidationError(f"length mismatch: {len(a)} predictions, {len(b)} labels")
    if len(a) == 0:
        raise ValidationError("metrics need at least one example")


def metrics(predictions: Sequence[bool], labels: Sequence[bool]) -> EvalReport:
    _check_lengths(predictions, labels)
    p = np.asarray(predictions, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    tp = int(np.sum(p & y))
    fp = int(np.sum(p & ~y))
    fn = int(np.sum(~p & y))
    tn = int(np.sum(~p & ~y))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(tp, fp, fn, tn, (tp + tn) / len(p), precision, recall, f1)


def auprc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Average precision: rank by descending score (ties keep input order)
    and sum precision at each positive, weighted by its recall step."""
    _check_lengths(scores, labels)
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValidationError("AUPRC is undefined without positive labels")
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    hits = y[order]
    precision_at = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(np.sum(precision_at[hits]) / n_pos)


def evaluate_scores(scores: Sequence[float], labels: Sequence[bool], threshold: float,
                    **metadata) -> EvalReport:
    s = np.asarray(scores, dtype=float)
    report = metrics(s >= threshold, labels)
    report.auprc = auprc(s, labels) if any(labels) else None
    report.metadata = {"threshold": threshold, **metadata}
    return report
