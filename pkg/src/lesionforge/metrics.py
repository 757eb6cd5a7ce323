"""Confusion matrix, derived metrics, and the multi-model comparison table.

Positive class is malignant (label 1). Degenerate 0/0 quotients evaluate to
0 with a warning.
"""

import json
import warnings
from dataclasses import dataclass

from .errors import InputError


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def as_dict(self):
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def as_dict(self):
        return {"accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


def confusion(pred_labels, true_labels):
    """Tally a 2x2 confusion matrix from 0/1 label sequences."""
    pred = list(pred_labels)
    true = list(true_labels)
    if len(pred) != len(true):
        raise InputError(f"length mismatch: {len(pred)} predictions vs {len(true)} labels")
    if any(v not in (0, 1) for v in pred) or any(v not in (0, 1) for v in true):
        raise InputError("labels must be 0 (benign) or 1 (malignant)")
    tp = sum(1 for p, t in zip(pred, true) if p == 1 and t == 1)
    tn = sum(1 for p, t in zip(pred, true) if p == 0 and t == 0)
    fp = sum(1 for p, t in zip(pred, true) if p == 1 and t == 0)
    fn = sum(1 for p, t in zip(pred, true) if p == 0 and t == 1)
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


def _ratio(num, den, name):
    if den == 0:
        warnings.warn(f"{name} is 0/0; defining it as 0", RuntimeWarning, stacklevel=3)
        return 0.0
    return num / den


def report(cm):
    """Accuracy, precision, recall, and F1 from confusion counts."""
    if cm.total == 0:
        raise InputError("empty confusion matrix")
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision")
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall")
    f1 = _ratio(2.0 * recall * precision, recall + precision, "f1")
    accuracy = (cm.tp + cm.tn) / cm.total
    return MetricsReport(accuracy=accuracy, precision=precision, recall=recall, f1=f1)


METRIC_ROWS = ("accuracy", "precision", "recall", "f1")


@dataclass
class ComparisonTable:
    """Metrics-by-models grid; values rendered at 5 decimal places."""

    models: list
    rows: dict  # metric name -> list of values aligned with models

    def render_csv(self):
        lines = ["metric," + ",".join(self.models)]
        for metric in METRIC_ROWS:
            lines.append(metric + "," + ",".join(f"{v:.5f}" for v in self.rows[metric]))
        return "\n".join(lines) + "\n"

    def as_json(self):
        return {
            "models": list(self.models),
            "metrics": {m: {name: round(v, 5) for name, v in zip(self.models, self.rows[m])}
                        for m in METRIC_ROWS},
        }

    def render_json(self):
        return json.dumps(self.as_json(), indent=2) + "\n"


def comparison_table(results):
    """Build the comparison grid from (model name, MetricsReport) pairs.

    Empty names default to "model-k"; duplicates get a numeric suffix with
    a warning.
    """
    if not results:
        raise InputError("comparison table needs at least one result")
    names = []
    seen = {}
    for k, (name, _) in enumerate(results, start=1):
        name = name or f"model-{k}"
        if name in seen:
            seen[name] += 1
            warnings.warn(f"duplicate model name {name!r}; renaming", RuntimeWarning,
                          stacklevel=2)
            name = f"{name}-{seen[name]}"
        seen.setdefault(name, 1)
        names.append(name)
    rows = {m: [getattr(rep, m) for _, rep in results] for m in METRIC_ROWS}
    return ComparisonTable(models=names, rows=rows)
