from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import LengthMismatch


@dataclass(frozen=True)
class MetricsReport:
    """Binary confusion counts and rates; undefined rates are NaN with the flag cleared."""

    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    sensitivity: float
    specificity: float
    sensitivity_defined: bool = True
    specificity_defined: bool = True

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "MetricsReport":
        total = tp + fp + tn + fn
        sens_ok, spec_ok = tp + fn > 0, tn + fp > 0
        return cls(
            tp, fp, tn, fn,
            accuracy=(tp + tn) / total if total else math.nan,
            sensitivity=tp / (tp + fn) if sens_ok else math.nan,
            specificity=tn / (tn + fp) if spec_ok else math.nan,
            sensitivity_defined=sens_ok,
            specificity_defined=spec_ok,
        )


def compute_metrics(pred, truth, positive_class: int = 1) -> MetricsReport:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise LengthMismatch(f"pred {pred.shape} and truth {truth.shape} differ")
    if pred.size == 0:
        raise LengthMismatch("metrics need at least one prediction")
    p, t = pred == positive_class, truth == positive_class
    return MetricsReport.from_counts(
        tp=int(np.sum(p & t)),
        fp=int(np.sum(p & ~t)),
        tn=int(np.sum(~p & ~t)),
        fn=int(np.sum(~p & t)),
    )
