"""Multilabel F1 aggregations: samples, micro, macro, and weighted.

All functions take binary {0,1} prediction and truth matrices of shape
[N, n_classes]. Per-sample scores follow the Dice form; a sample where both
prediction and truth are empty counts as 1.0, empty-versus-nonempty as 0.
A per-class F1 whose TP+FP+FN pool is empty is defined as 0.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError


@dataclass
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: float


@dataclass
class MetricsReport:
    micro: float
    macro: float
    weighted: float
    samples: float
    per_class: list = field(default_factory=list)
    cycles: int = 1
    std: dict | None = None

    def as_dict(self):
        out = {
            "micro": self.micro,
            "macro": self.macro,
            "weighted": self.weighted,
            "samples": self.samples,
            "cycles": self.cycles,
            "per_class": [
                {"precision": c.precision, "recall": c.recall, "f1": c.f1, "support": c.support}
                for c in self.per_class
            ],
        }
        if self.std is not None:
            out["std"] = dict(self.std)
        return out


def _validate(y_hat, y_true):
    y_hat = np.asarray(y_hat)
    y_true = np.asarray(y_true)
    if y_hat.shape != y_true.shape or y_hat.ndim != 2:
        raise DimensionError(
            f"predictions {y_hat.shape} and truths {y_true.shape} must be equal 2-d shapes"
        )
    if y_hat.shape[0] == 0:
        raise ContractError("metrics require at least one sample")
    for name, arr in (("predictions", y_hat), ("truths", y_true)):
        if not np.all((arr == 0) | (arr == 1)):
            raise ContractError(f"{name} must be binary")
    return y_hat.astype(np.int64), y_true.astype(np.int64)


def f1_samples(y_hat, y_true):
    y_hat, y_true = _validate(y_hat, y_true)
    inter = (y_hat & y_true).sum(axis=1)
    denom = y_hat.sum(axis=1) + y_true.sum(axis=1)
    scores = np.where(denom > 0, 2.0 * inter / np.maximum(denom, 1), 1.0)
    # fsum keeps the mean exactly order-independent under sample permutation
    return math.fsum(scores) / scores.size


def _confusion(y_hat, y_true):
    tp = ((y_hat == 1) & (y_true == 1)).sum(axis=0)
    fp = ((y_hat == 1) & (y_true == 0)).sum(axis=0)
    fn = ((y_hat == 0) & (y_true == 1)).sum(axis=0)
    return tp, fp, fn


def _f1_from_counts(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2.0 * tp / denom


def f1_micro(y_hat, y_true):
    y_hat, y_true = _validate(y_hat, y_true)
    tp, fp, fn = _confusion(y_hat, y_true)
    return _f1_from_counts(int(tp.sum()), int(fp.sum()), int(fn.sum()))


def per_class_scores(y_hat, y_true):
    y_hat, y_true = _validate(y_hat, y_true)
    tp, fp, fn = _confusion(y_hat, y_true)
    support = y_true.sum(axis=0)
    if np.any(support == 0):
        warnings.warn(
            f"{int((support == 0).sum())} classes have zero support; their F1 counts as 0",
            stacklevel=2,
        )
    scores = []
    for c in range(y_hat.shape[1]):
        p = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] > 0 else 0.0
        r = tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] > 0 else 0.0
        scores.append(
            ClassScore(
                precision=float(p),
                recall=float(r),
                f1=_f1_from_counts(int(tp[c]), int(fp[c]), int(fn[c])),
                support=float(support[c]),
            )
        )
    return scores


def f1_macro(y_hat, y_true):
    scores = per_class_scores(y_hat, y_true)
    return float(np.mean([c.f1 for c in scores]))


def f1_weighted(y_hat, y_true):
    scores = per_class_scores(y_hat, y_true)
    total = sum(c.support for c in scores)
    if total == 0:
        return 0.0
    return float(sum(c.support * c.f1 for c in scores) / total)


def compute_report(y_hat, y_true):
    """The full report for one train/test cycle."""
    scores = per_class_scores(y_hat, y_true)
    total = sum(c.support for c in scores)
    weighted = float(sum(c.support * c.f1 for c in scores) / total) if total else 0.0
    return MetricsReport(
        micro=f1_micro(y_hat, y_true),
        macro=float(np.mean([c.f1 for c in scores])),
        weighted=weighted,
        samples=f1_samples(y_hat, y_true),
        per_class=scores,
        cycles=1,
    )


def aggregate_cycles(reports):
    """Arithmetic mean of every score field plus per-score sample std."""
    if not reports:
        raise ContractError("aggregate_cycles requires at least one report")
    n_classes = {len(r.per_class) for r in reports}
    if len(n_classes) != 1:
        raise ContractError(f"reports disagree on class count: {sorted(n_classes)}")
    names = ("micro", "macro", "weighted", "samples")
    columns = {name: np.array([getattr(r, name) for r in reports]) for name in names}
    ddof = 1 if len(reports) > 1 else 0
    per_class = []
    for c in range(n_classes.pop()):
        per_class.append(
            ClassScore(
                precision=float(np.mean([r.per_class[c].precision for r in reports])),
                recall=float(np.mean([r.per_class[c].recall for r in reports])),
                f1=float(np.mean([r.per_class[c].f1 for r in reports])),
                support=float(np.mean([r.per_class[c].support for r in reports])),
            )
        )
    return MetricsReport(
        micro=float(columns["micro"].mean()),
        macro=float(columns["macro"].mean()),
        weighted=float(columns["weighted"].mean()),
        samples=float(columns["samples"].mean()),
        per_class=per_class,
        cycles=sum(r.cycles for r in reports),
        std={name: float(columns[name].std(ddof=ddof)) for name in names},
    )
