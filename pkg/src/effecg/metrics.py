"""Evaluation metric suite.

Confusion matrices, precision/recall/F1 (per-class, macro, micro), the
challenge score (mean of per-class F1), ROC curves and AUC. AUC is
computed by the pairwise rank statistic (ties count 0.5) and must agree
with the trapezoidal area under the reported curve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class F1Result:
    precision: np.ndarray
    recall: np.ndarray
    per_class: np.ndarray
    macro: float
    micro: float


@dataclass
class RocCurve:
    """Operating points ordered from (0,0) to (1,1)."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def confusion_matrix(y_true, y_pred, class_count: int) -> np.ndarray:
    """K x K counts; rows are true classes, columns predicted classes."""
    yt = np.asarray(y_true, dtype=np.int64)
    yp = np.asarray(y_pred, dtype=np.int64)
    if yt.shape != yp.shape:
        raise ValueError(f"label arrays differ in length: {yt.shape} vs {yp.shape}")
    for name, arr in (("true", yt), ("predicted", yp)):
        bad = arr[(arr < 0) | (arr >= class_count)]
        if bad.size:
            raise ValueError(f"{name} label {bad[0]} outside [0, {class_count})")
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(cm, (yt, yp), 1)
    return cm


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def f1_scores(cm: np.ndarray) -> F1Result:
    """Per-class, macro and micro F1 from a K x K confusion matrix.

    0/0 ratios resolve to 0. Micro pools TP/FP/FN over classes, which for
    single-label problems equals accuracy.
    """
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
    per_class = np.array([_f1(p, r) for p, r in zip(precision, recall)])
    macro = float(per_class.mean())
    tp_s, fp_s, fn_s = tp.sum(), fp.sum(), fn.sum()
    micro_p = tp_s / (tp_s + fp_s) if tp_s + fp_s > 0 else 0.0
    micro_r = tp_s / (tp_s + fn_s) if tp_s + fn_s > 0 else 0.0
    return F1Result(precision, recall, per_class, macro, _f1(micro_p, micro_r))


def multilabel_counts(y_true: list[set[int]], y_pred: list[set[int]],
                      class_count: int) -> np.ndarray:
    """One-vs-rest 2x2 counts per class: columns (tp, fp, fn, tn)."""
    counts = np.zeros((class_count, 4), dtype=np.int64)
    for truth, pred in zip(y_true, y_pred):
        for c in range(class_count):
            t, p = c in truth, c in pred
            if t and p:
                counts[c, 0] += 1
            elif p:
                counts[c, 1] += 1
            elif t:
                counts[c, 2] += 1
            else:
                counts[c, 3] += 1
    return counts


def multilabel_f1(counts: np.ndarray) -> F1Result:
    """Per-class/macro/micro F1 from one-vs-rest counts."""
    tp, fp, fn = (counts[:, i].astype(np.float64) for i in range(3))
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
    per_class = np.array([_f1(p, r) for p, r in zip(precision, recall)])
    tp_s, fp_s, fn_s = tp.sum(), fp.sum(), fn.sum()
    micro_p = tp_s / (tp_s + fp_s) if tp_s + fp_s > 0 else 0.0
    micro_r = tp_s / (tp_s + fn_s) if tp_s + fn_s > 0 else 0.0
    return F1Result(precision, recall, per_class, float(per_class.mean()),
                    _f1(micro_p, micro_r))


def cinc_score(per_class_f1, classes: list[int] | None = None) -> float:
    """Arithmetic mean of per-class F1 over the scored class subset."""
    f1 = np.asarray(per_class_f1, dtype=np.float64)
    if classes is not None:
        f1 = f1[list(classes)]
    if f1.size == 0:
        raise ValueError("cinc_score over an empty class set")
    return float(f1.mean())


def roc_auc(scores, labels) -> tuple[RocCurve, float]:
    """ROC curve plus AUC for binary labels.

    The AUC is the probability that a uniformly random positive outscores
    a random negative, ties counting 0.5 (average-rank statistic); it
    equals the trapezoidal area under the returned curve.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-d arrays")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs at least one positive and one negative label")

    # average ranks (1-based) with ties shared
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[order[j]] == s[order[i]]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j + 1)
        i = j
    auc = (ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    # curve: sweep unique thresholds from high to low
    thresholds = np.unique(s)[::-1]
    tps = np.array([int(((s >= t) & (y == 1)).sum()) for t in thresholds])
    fps = np.array([int(((s >= t) & (y == 0)).sum()) for t in thresholds])
    fpr = np.concatenate([[0.0], fps / n_neg])
    tpr = np.concatenate([[0.0], tps / n_pos])
    thr = np.concatenate([[np.inf], thresholds])
    if fpr[-1] != 1.0 or tpr[-1] != 1.0:
        fpr = np.concatenate([fpr, [1.0]])
        tpr = np.concatenate([tpr, [1.0]])
        thr = np.concatenate([thr, [-np.inf]])
    return RocCurve(fpr, tpr, thr), float(auc)


def trapezoid_area(curve: RocCurve) -> float:
    dx = curve.fpr[1:] - curve.fpr[:-1]
    return float(np.sum(dx * 0.5 * (curve.tpr[1:] + curve.tpr[:-1])))


def tune_thresholds(scores: np.ndarray, y_true: list[set[int]],
                    grid: np.ndarray | None = None) -> np.ndarray:
    """Per-class threshold sweep maximizing one-vs-rest F1."""
    if grid is None:
        grid = np.linspace(0.05, 0.95, 19)
    scores = np.asarray(scores, dtype=np.float64)
    k = scores.shape[1]
    best = np.full(k, 0.5)
    for c in range(k):
        truth = np.array([1 if c in t else 0 for t in y_true])
        best_f1 = -1.0
        for t in grid:
            pred = (scores[:, c] >= t).astype(np.int64)
            tp = int(((pred == 1) & (truth == 1)).sum())
            fp = int(((pred == 1) & (truth == 0)).sum())
            fn = int(((pred == 0) & (truth == 1)).sum())
            p = tp / (tp + fp) if tp + fp else 0.0
            r = tp / (tp + fn) if tp + fn else 0.0
            f1 = _f1(p, r)
            if f1 > best_f1:
                best_f1, best[c] = f1, t
    return best


@dataclass
class EvalReport:
    """Everything the evaluation emits, serializable to JSON."""

    parameter_count: int
    label_mode: str
    confusion: list          # KxK matrix (single) or per-class 2x2 counts (multi)
    per_class_f1: list
    precision: list
    recall: list
    macro_f1: float
    micro_f1: float
    cinc: float
    auc_per_class: dict = field(default_factory=dict)
    thresholds: list | None = None

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.__dict__, indent=indent)


def roc_points_csv(curves: dict[int, RocCurve]) -> str:
    """CSV rows `class,threshold,fpr,tpr` across the per-class curves."""
    lines = ["class,threshold,fpr,tpr"]
    for cls in sorted(curves):
        c = curves[cls]
        for t, f, r in zip(c.thresholds, c.fpr, c.tpr):
            lines.append(f"{cls},{t:.10g},{f:.10g},{r:.10g}")
    return "\n".join(lines) + "\n"
