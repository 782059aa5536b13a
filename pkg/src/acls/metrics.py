"""Confusion-matrix accounting and the five report metrics.

Reported precision/recall/F1 use support-weighted averaging, under which
weighted recall coincides with accuracy; macro and per-class values are
exposed alongside. Reported F1 is the weighted mean of per-class F1
scores, not the harmonic mean of the weighted P and R.
"""

import json

import numpy as np

from .corpus import Dataset, Vocab, batches
from .errors import DataError
from .heads import ModelParams, model_forward
from .numerics import softmax
from .training import average_loss


class ConfusionMatrix:
    """C x C count matrix indexed (true, predicted)."""

    def __init__(self, n_classes: int):
        if n_classes < 1:
            raise ValueError("need at least one class")
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, true_label: int, predicted: int) -> None:
        c = self.n_classes
        if not (0 <= true_label < c and 0 <= predicted < c):
            raise DataError(f"label pair ({true_label}, {predicted}) out of "
                            f"range for {c} classes")
        self.counts[true_label, predicted] += 1

    def per_class_counts(self):
        """Arrays of (tp, fp, fn, support) per class."""
        tp = np.diag(self.counts).astype(np.float64)
        support = self.counts.sum(axis=1).astype(np.float64)
        predicted = self.counts.sum(axis=0).astype(np.float64)
        fp = predicted - tp
        fn = support - tp
        return tp, fp, fn, support


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise DataError("cannot compute metrics on an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def _safe_div(num, den):
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def precision_recall_f1(cm: ConfusionMatrix, averaging: str = "weighted"):
    """Per-class P/R/F1 reduced by the requested averaging.

    Zero denominators yield zero for the affected class. ``per-class``
    returns the three arrays unreduced.
    """
    if cm.total == 0:
        raise DataError("cannot compute metrics on an empty confusion matrix")
    tp, fp, fn, support = cm.per_class_counts()
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    if averaging == "per-class":
        return precision, recall, f1
    if averaging == "weighted":
        weights = support / cm.total
        return (float(weights @ precision), float(weights @ recall),
                float(weights @ f1))
    if averaging == "macro":
        return (float(precision.mean()), float(recall.mean()), float(f1.mean()))
    raise ValueError(f"unknown averaging {averaging!r}")


class MetricsReport:
    """The five headline metrics plus per-class breakdown and raw counts."""

    def __init__(self, cm: ConfusionMatrix, avg_loss: float,
                 class_names: list[str] | None = None):
        self.confusion = cm
        self.average_loss = float(avg_loss)
        self.class_names = class_names or [str(i) for i in range(cm.n_classes)]
        self.accuracy = accuracy(cm)
        self.precision, self.recall, self.f1 = precision_recall_f1(cm, "weighted")
        self.macro = precision_recall_f1(cm, "macro")
        p, r, f = precision_recall_f1(cm, "per-class")
        _, _, _, support = cm.per_class_counts()
        self.per_class = [
            {"name": self.class_names[i], "precision": float(p[i]),
             "recall": float(r[i]), "f1": float(f[i]), "support": int(support[i])}
            for i in range(cm.n_classes)
        ]
        # weighted recall and accuracy are the same sum of diagonal counts
        if abs(self.recall - self.accuracy) > 1e-12:
            raise AssertionError(
                f"weighted recall {self.recall!r} diverged from accuracy "
                f"{self.accuracy!r}")

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "average_loss": self.average_loss,
            "macro": {"precision": self.macro[0], "recall": self.macro[1],
                      "f1": self.macro[2]},
            "per_class": self.per_class,
            "confusion": self.confusion.counts.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    def format_table(self) -> str:
        lines = [f"{'metric':<12} value",
                 f"{'accuracy':<12} {self.accuracy:.4f}",
                 f"{'precision':<12} {self.precision:.4f}",
                 f"{'recall':<12} {self.recall:.4f}",
                 f"{'f1':<12} {self.f1:.4f}",
                 f"{'avg_loss':<12} {self.average_loss:.4f}",
                 ""]
        width = max(len(c["name"]) for c in self.per_class)
        width = max(width, 5)
        lines.append(f"{'class':<{width}}  {'prec':>6}  {'rec':>6}  {'f1':>6}  {'support':>7}")
        for c in self.per_class:
            lines.append(f"{c['name']:<{width}}  {c['precision']:>6.4f}  "
                         f"{c['recall']:>6.4f}  {c['f1']:>6.4f}  {c['support']:>7}")
        return "\n".join(lines)


def evaluate(dataset: Dataset, params: ModelParams, vocab: Vocab,
             batch_size: int = 64) -> MetricsReport:
    """Run the model over a dataset and assemble the full report.

    Predictions take the first maximal logit; the loss is the mean
    cross-entropy over all examples.
    """
    if dataset.label_map.count != params.n_classes:
        raise DataError(f"dataset has {dataset.label_map.count} classes, "
                        f"model expects {params.n_classes}")
    if len(dataset) == 0:
        raise DataError("cannot evaluate an empty dataset")
    cm = ConfusionMatrix(params.n_classes)
    loss_sum = 0.0
    for batch in batches(dataset, vocab, batch_size):
        logits, _ = model_forward(batch, params)
        probs = softmax(logits)
        preds = np.argmax(logits, axis=1)
        for i in range(batch.size):
            cm.accumulate(int(batch.labels[i]), int(preds[i]))
        loss_sum += average_loss(probs, batch.labels) * batch.size
    return MetricsReport(cm, loss_sum / len(dataset), dataset.label_map.names)
