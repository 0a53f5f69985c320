"""Sentence-level (multi-class) and report-level (multi-label) metrics.

Hamming loss is the fraction of mismatching label positions:
sum_i popcount(y_i XOR y^_i) / (k * m) for k instances over m classes.

Macro averages run over the evaluated class set. In `observed` mode a class
is evaluated when it has at least one true positive, false positive or
false negative; in `all` mode every registry class is. Undefined precision
or recall (0/0) counts as 0. With no evaluated class at all every macro
value is 1.0.
"""

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix, multilabel_confusion_matrix

from ttpx.errors import ValidationError
from ttpx.taxonomy import TechniqueRegistry

MACRO_OVER = ("observed", "all")
DEFAULT_INTERVAL = 0.1


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "ClassMetrics":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(precision, recall, f1, tp + fn, tp, fp, fn)


@dataclass(frozen=True)
class MetricsReport:
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict[str, ClassMetrics]
    evaluated_class_count: int
    hamming_loss: float | None = None
    macro_over: str = "observed"
    micro: dict | None = field(default=None)

    def to_record(self) -> dict:
        record = {
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "hamming_loss": self.hamming_loss,
            "evaluated_class_count": self.evaluated_class_count,
            "macro_over": self.macro_over,
            "per_class": {tid: asdict(m) for tid, m in self.per_class.items()},
        }
        if self.micro is not None:
            record["micro"] = self.micro
        return record

    def f1_scores(self) -> dict[str, float]:
        return {tid: m.f1 for tid, m in self.per_class.items()}


@dataclass(frozen=True)
class BinHistogram:
    interval: float
    counts: tuple[int, ...]

    @property
    def edges(self) -> list[float]:
        return [round(i * self.interval, 10) for i in range(len(self.counts) + 1)]

    @property
    def total(self) -> int:
        return sum(self.counts)

    def to_record(self) -> dict:
        edges = self.edges
        return {
            "interval": self.interval,
            "bins": [
                {"low": edges[i], "high": edges[i + 1], "count": count}
                for i, count in enumerate(self.counts)
            ],
        }


def _as_matrix(vectors, name: str) -> np.ndarray:
    rows = [[int(bit) for bit in v] if isinstance(v, str) else list(v) for v in vectors]
    if not rows:
        raise ValidationError(f"{name} must contain at least one label vector")
    lengths = {len(row) for row in rows}
    if len(lengths) != 1:
        raise ValidationError(f"{name} label vectors have differing lengths {sorted(lengths)}")
    matrix = np.asarray(rows)
    if not np.isin(matrix, (0, 1)).all():
        raise ValidationError(f"{name} label vectors must contain only 0 and 1")
    return matrix.astype(np.int8)


def _paired(truth, predicted) -> tuple[np.ndarray, np.ndarray]:
    truth, predicted = _as_matrix(truth, "truth"), _as_matrix(predicted, "predicted")
    if truth.shape != predicted.shape:
        raise ValidationError(
            f"truth has shape {truth.shape} but predicted has shape {predicted.shape}"
        )
    return truth, predicted


def label_vectors(label_sets, registry: TechniqueRegistry) -> np.ndarray:
    """Multi-hot (k x m) matrix aligned to the registry layout."""
    matrix = np.zeros((len(label_sets), registry.class_count), dtype=np.int8)
    for row, labels in enumerate(label_sets):
        for label in labels:
            if label not in registry:
                raise ValidationError(f"unknown technique {label!r} in label set {row}", label=label)
            matrix[row, registry.position(label)] = 1
    return matrix


def hamming_loss(truth, predicted) -> float:
    truth, predicted = _paired(truth, predicted)
    k, m = truth.shape
    return int(np.sum(truth != predicted)) / (k * m)


def _label_ids(registry: TechniqueRegistry | None, m: int) -> list[str]:
    if registry is None:
        return [str(i) for i in range(m)]
    if registry.class_count != m:
        raise ValidationError(
            f"label vectors have length {m}, taxonomy has {registry.class_count} classes"
        )
    return registry.ids


def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def _report_from_counts(
    label_ids: list[str],
    tp: np.ndarray,
    fp: np.ndarray,
    fn: np.ndarray,
    macro_over: str,
    hamming: float | None = None,
    micro: bool = False,
) -> MetricsReport:
    if macro_over not in MACRO_OVER:
        raise ValidationError(f"macro_over must be one of {MACRO_OVER}, got {macro_over!r}")
    per_class = {}
    for i, tid in enumerate(label_ids):
        if macro_over == "all" or tp[i] + fp[i] + fn[i] > 0:
            per_class[tid] = ClassMetrics.from_counts(int(tp[i]), int(fp[i]), int(fn[i]))

    if per_class:
        macro = (
            _mean([m.precision for m in per_class.values()]),
            _mean([m.recall for m in per_class.values()]),
            _mean([m.f1 for m in per_class.values()]),
        )
    else:
        macro = (1.0, 1.0, 1.0)

    micro_record = None
    if micro:
        overall = ClassMetrics.from_counts(int(tp.sum()), int(fp.sum()), int(fn.sum()))
        micro_record = {"precision": overall.precision, "recall": overall.recall, "f1": overall.f1}
    return MetricsReport(
        *macro,
        per_class=per_class,
        evaluated_class_count=len(per_class),
        hamming_loss=hamming,
        macro_over=macro_over,
        micro=micro_record,
    )


def multilabel_macro_metrics(
    truth,
    predicted,
    registry: TechniqueRegistry | None = None,
    macro_over: str = "observed",
    micro: bool = False,
) -> MetricsReport:
    """Report-level metrics over multi-hot vectors. Without a registry the
    classes are named by position."""
    truth, predicted = _paired(truth, predicted)
    label_ids = _label_ids(registry, truth.shape[1])
    # One column alone would be read as binary targets; pad an empty label.
    pad = ((0, 0), (0, 1))
    counts = multilabel_confusion_matrix(np.pad(truth, pad), np.pad(predicted, pad))[:-1]
    tp, fp, fn = counts[:, 1, 1], counts[:, 0, 1], counts[:, 1, 0]
    return _report_from_counts(
        label_ids, tp, fp, fn, macro_over, hamming=hamming_loss(truth, predicted), micro=micro
    )


def multiclass_sentence_metrics(
    truth: list[str],
    predicted: list[str],
    registry: TechniqueRegistry,
    macro_over: str = "observed",
    micro: bool = False,
) -> MetricsReport:
    """Sentence-level one-vs-rest metrics from the multi-class confusion
    matrix."""
    if len(truth) != len(predicted):
        raise ValidationError(
            f"truth has {len(truth)} labels but predicted has {len(predicted)}"
        )
    if not truth:
        raise ValidationError("at least one sentence label is required")
    unknown = sorted({label for label in [*truth, *predicted] if label not in registry})
    if unknown:
        raise ValidationError(f"unknown techniques: {', '.join(unknown)}", labels=unknown)

    m = registry.class_count
    matrix = confusion_matrix(
        [registry.position(t) for t in truth],
        [registry.position(p) for p in predicted],
        labels=list(range(m)),
    )
    tp = np.diag(matrix)
    fp = matrix.sum(axis=0) - tp
    fn = matrix.sum(axis=1) - tp
    return _report_from_counts(registry.ids, tp, fp, fn, macro_over, micro=micro)


def classwise_bins(per_class_scores: dict[str, float], interval: float = DEFAULT_INTERVAL) -> BinHistogram:
    """Counts classes per score range [0, i), [i, 2i), ..., with the top bin
    closed at 1.0."""
    n_bins = round(1.0 / interval) if interval > 0 else 0
    if n_bins < 1 or not math.isclose(n_bins * interval, 1.0):
        raise ValidationError(f"interval {interval} does not divide [0, 1] evenly")
    counts = [0] * n_bins
    for tid, score in per_class_scores.items():
        if not 0.0 <= score <= 1.0:
            raise ValidationError(f"score {score} for {tid} is outside [0, 1]", technique=tid)
        # Rounding keeps boundary values such as 0.3 out of the bin below.
        index = min(int(math.floor(round(score / interval, 9))), n_bins - 1)
        counts[index] += 1
    return BinHistogram(interval, tuple(counts))


def write_per_class_csv(report: MetricsReport, path: str | Path) -> None:
    rows = [{"technique_id": tid, **asdict(m)} for tid, m in report.per_class.items()]
    columns = ["technique_id", "precision", "recall", "f1", "support", "tp", "fp", "fn"]
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)
