"""Binary classification metrics with phisher as the positive class."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PHISHER, NORMAL = 1, 0
THRESHOLD = 0.5


@dataclass
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    b_acc: float
    undefined: list[str] = field(default_factory=list)  # metrics whose denominator was zero

    def to_dict(self, **context) -> dict:
        out = dict(context)
        out.update(precision=self.precision, recall=self.recall, f1=self.f1, b_acc=self.b_acc,
                   confusion={"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn})
        if self.undefined:
            out["undefined"] = list(self.undefined)
        return out


def _ratio(num: float, den: float, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def f1_score(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def report_from_counts(tp: int, fp: int, tn: int, fn: int) -> EvalReport:
    flags: list[str] = []
    precision = _ratio(tp, tp + fp, "precision", flags)
    recall = _ratio(tp, tp + fn, "recall", flags)
    if precision + recall == 0:
        flags.append("f1")
    specificity = _ratio(tn, tn + fp, "specificity", flags)
    b_acc = (recall + specificity) / 2
    return EvalReport(tp, fp, tn, fn, precision, recall, f1_score(precision, recall), b_acc, flags)


def evaluate(predictions, labels) -> EvalReport:
    """``predictions``: phisher probabilities (N,) or class-probability rows (N, 2)."""
    p = np.asarray(predictions, dtype=np.float64)
    if p.ndim == 2:
        p = p[:, PHISHER]
    y = np.asarray(labels).astype(bool)
    if p.shape != y.shape:
        raise ValueError(f"{p.shape[0]} predictions for {y.shape[0]} labels")
    hit = p > THRESHOLD
    return report_from_counts(int((hit & y).sum()), int((hit & ~y).sum()),
                              int((~hit & ~y).sum()), int((~hit & y).sum()))
