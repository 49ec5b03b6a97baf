"""Confusion matrices and the metric battery: per-class and aggregate
precision, recall, F1, and accuracy, plus text/CSV/SVG report rendering.

All metrics are computed from integer counts with division deferred to
the last step, so results are identical across platforms.  For
single-label multiclass data the micro averages collapse to accuracy;
that identity is part of the contract and is exercised by the tests.
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DataError, ShapeError


@dataclass(frozen=True)
class ConfusionMatrix:
    """KxK counts with rows = actual class, columns = predicted class."""

    counts: np.ndarray
    labels: tuple

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ShapeError("confusion matrix must be square, got %r" % (counts.shape,))
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(counts == np.round(counts)):
                raise ShapeError("confusion matrix entries must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise ShapeError("confusion matrix entries must be non-negative")
        object.__setattr__(self, "counts", counts)
        labels = tuple(self.labels)
        if len(labels) != counts.shape[0]:
            raise ShapeError(
                "%d labels do not match a %dx%d matrix"
                % (len(labels), counts.shape[0], counts.shape[0])
            )
        object.__setattr__(self, "labels", labels)

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())


def confusion_matrix(y_true, y_pred, num_classes, labels=None):
    """Count (actual, predicted) pairs into a ConfusionMatrix."""
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise ShapeError(
            "y_true has %d entries but y_pred has %d" % (y_true.size, y_pred.size)
        )
    if y_true.size and (
        y_true.min() < 0 or y_true.max() >= num_classes
        or y_pred.min() < 0 or y_pred.max() >= num_classes
    ):
        raise ShapeError("class indices must lie in [0, %d)" % (num_classes,))
    if labels is None:
        labels = tuple("class %d" % i for i in range(num_classes))
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts=counts, labels=tuple(labels))


@dataclass(frozen=True)
class PerClassMetrics:
    """Per-class precision/recall/F1/support arrays in label order.

    ``zero_division`` flags classes where a zero denominator forced the
    0-convention for at least one metric.
    """

    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    zero_division: np.ndarray


def _ratio(numerator, denominator):
    out = np.zeros(len(numerator), dtype=np.float64)
    nonzero = denominator > 0
    out[nonzero] = numerator[nonzero] / denominator[nonzero]
    return out


def per_class_metrics(cm):
    """precision = diag/colsum, recall = diag/rowsum, f1 = harmonic mean.

    Zero denominators yield 0 (flagged), so an absent class reports
    precision = recall = f1 = 0 with support 0.
    """
    diag = np.diag(cm.counts).astype(np.int64)
    colsum = cm.counts.sum(axis=0)
    rowsum = cm.counts.sum(axis=1)
    precision = _ratio(diag, colsum)
    recall = _ratio(diag, rowsum)
    pr = precision + recall
    f1 = np.zeros_like(precision)
    nonzero = pr > 0
    f1[nonzero] = 2.0 * precision[nonzero] * recall[nonzero] / pr[nonzero]
    flags = (colsum == 0) | (rowsum == 0) | ~nonzero
    return PerClassMetrics(precision=precision, recall=recall, f1=f1,
                           support=rowsum, zero_division=flags)


@dataclass(frozen=True)
class AggregateMetrics:
    accuracy: float
    micro_precision: float
    micro_recall: float
    micro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float


def aggregate_metrics(cm):
    """Accuracy, micro averages, and support-weighted averages.

    Micro precision, recall, and F1 are computed from pooled counts and
    therefore all equal accuracy on single-label data; weighted values
    are support-weighted means of the per-class metrics.
    """
    total = cm.total
    if total == 0:
        raise DataError("cannot aggregate an empty confusion matrix")
    accuracy = int(np.trace(cm.counts)) / total
    per = per_class_metrics(cm)
    weighted_p = float(per.support @ per.precision) / total
    # support_c * (diag_c / support_c) telescopes to trace / total; the
    # pooled form keeps the identity exact in floating point
    weighted_r = accuracy
    weighted_f = float(per.support @ per.f1) / total
    return AggregateMetrics(
        accuracy=accuracy,
        micro_precision=accuracy,
        micro_recall=accuracy,
        micro_f1=accuracy,
        weighted_precision=weighted_p,
        weighted_recall=weighted_r,
        weighted_f1=weighted_f,
    )


@dataclass(frozen=True)
class MetricsReport:
    labels: tuple
    per_class: PerClassMetrics
    aggregates: AggregateMetrics
    total: int

    @classmethod
    def from_confusion(cls, cm):
        return cls(labels=cm.labels, per_class=per_class_metrics(cm),
                   aggregates=aggregate_metrics(cm), total=cm.total)


def _render_text(report):
    width = max(len("weighted avg"), *(len(label) for label in report.labels))
    lines = []
    header = "%-*s  %9s  %9s  %9s  %9s" % (width, "class", "precision", "recall",
                                           "f1-score", "support")
    lines.append(header)
    lines.append("-" * len(header))
    per = report.per_class
    for i, label in enumerate(report.labels):
        flag = " *" if per.zero_division[i] else ""
        lines.append(
            "%-*s  %9.4f  %9.4f  %9.4f  %9d%s"
            % (width, label, per.precision[i], per.recall[i], per.f1[i],
               per.support[i], flag)
        )
    lines.append("")
    agg = report.aggregates
    lines.append(
        "%-*s  %9.4f  %9.4f  %9.4f  %9d"
        % (width, "micro avg", agg.micro_precision, agg.micro_recall, agg.micro_f1,
           report.total)
    )
    lines.append(
        "%-*s  %9.4f  %9.4f  %9.4f  %9d"
        % (width, "weighted avg", agg.weighted_precision, agg.weighted_recall,
           agg.weighted_f1, report.total)
    )
    lines.append("")
    lines.append("accuracy: %.4f" % (agg.accuracy,))
    if np.any(per.zero_division):
        lines.append("* metric forced to 0 by an empty row or column")
    return "\n".join(lines) + "\n"


def _render_csv(report):
    lines = ["class,precision,recall,f1,support"]
    per = report.per_class
    for i, label in enumerate(report.labels):
        lines.append(
            "%s,%.4f,%.4f,%.4f,%d"
            % (label.replace(",", ";"), per.precision[i], per.recall[i], per.f1[i],
               per.support[i])
        )
    agg = report.aggregates
    lines.append("micro,%.4f,%.4f,%.4f,%d"
                 % (agg.micro_precision, agg.micro_recall, agg.micro_f1, report.total))
    lines.append("weighted,%.4f,%.4f,%.4f,%d"
                 % (agg.weighted_precision, agg.weighted_recall, agg.weighted_f1,
                    report.total))
    lines.append("accuracy,%.4f" % (agg.accuracy,))
    return "\n".join(lines) + "\n"


def _heat_color(count, peak):
    """Linear white-to-blue scale; zero counts land on white."""
    if peak <= 0:
        frac = 0.0
    else:
        frac = count / peak
    r = int(round(255 + (8 - 255) * frac))
    g = int(round(255 + (48 - 255) * frac))
    b = int(round(255 + (107 - 255) * frac))
    return "#%02x%02x%02x" % (r, g, b)


def _render_svg(cm):
    k = cm.num_classes
    cell = 64
    margin = 170
    size_w = margin + k * cell + 20
    size_h = margin + k * cell + 20
    peak = int(cm.counts.max()) if cm.total else 0
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" '
        'viewBox="0 0 %d %d">' % (size_w, size_h, size_w, size_h),
        '<rect width="%d" height="%d" fill="white"/>' % (size_w, size_h),
        '<text x="%d" y="24" font-size="15" font-family="sans-serif">'
        "rows: actual, columns: predicted</text>" % (margin,),
    ]
    for j, label in enumerate(cm.labels):
        parts.append(
            '<text x="%d" y="%d" font-size="11" font-family="sans-serif" '
            'transform="rotate(-45 %d %d)">%s</text>'
            % (margin + j * cell + 8, margin - 8, margin + j * cell + 8,
               margin - 8, label)
        )
    for i, label in enumerate(cm.labels):
        parts.append(
            '<text x="8" y="%d" font-size="11" font-family="sans-serif">%s</text>'
            % (margin + i * cell + cell // 2 + 4, label)
        )
    for i in range(k):
        for j in range(k):
            count = int(cm.counts[i, j])
            x = margin + j * cell
            y = margin + i * cell
            parts.append(
                '<rect x="%d" y="%d" width="%d" height="%d" fill="%s" '
                'stroke="#999"/>' % (x, y, cell, cell, _heat_color(count, peak))
            )
            text_fill = "#ffffff" if peak and count / peak > 0.5 else "#000000"
            parts.append(
                '<text x="%d" y="%d" font-size="13" font-family="sans-serif" '
                'text-anchor="middle" fill="%s">%d</text>'
                % (x + cell // 2, y + cell // 2 + 5, text_fill, count)
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_report(report, cm, fmt="text"):
    """Render the metric battery as 'text', 'csv', or 'svg' (heatmap)."""
    if fmt == "text":
        return _render_text(report)
    if fmt == "csv":
        return _render_csv(report)
    if fmt == "svg":
        return _render_svg(cm)
    raise DataError("unknown report format %r (expected text, csv, or svg)" % (fmt,))


def write_counts_csv(cm, path):
    """Write raw confusion counts: header ``label,<predicted labels...>``,
    then one row per actual class."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("label",) + cm.labels)
        for i, label in enumerate(cm.labels):
            writer.writerow([label] + [int(c) for c in cm.counts[i]])


def read_counts_csv(path):
    """Read a confusion-counts CSV back into a ConfusionMatrix.

    The header's predicted labels must match the actual labels of the
    rows, in the same order; entries must be non-negative integers.
    """
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            rows = [row for row in csv.reader(handle) if row]
    except OSError as exc:
        raise DataError("cannot read counts file %s: %s" % (path, exc)) from exc
    if len(rows) < 2:
        raise DataError("counts file %s has no data rows" % (path,))
    header = rows[0]
    labels = tuple(header[1:])
    if len(rows) - 1 != len(labels):
        raise DataError(
            "counts file %s declares %d classes but has %d rows"
            % (path, len(labels), len(rows) - 1)
        )
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for i, row in enumerate(rows[1:]):
        if len(row) != len(labels) + 1:
            raise DataError("counts file %s row %d has %d fields, expected %d"
                            % (path, i + 2, len(row), len(labels) + 1))
        if row[0] != labels[i]:
            raise DataError(
                "counts file %s row %d is labeled %r but the header says %r"
                % (path, i + 2, row[0], labels[i])
            )
        for j, cell in enumerate(row[1:]):
            try:
                value = int(cell)
            except ValueError:
                raise DataError("counts file %s row %d has a non-integer entry %r"
                                % (path, i + 2, cell)) from None
            counts[i, j] = value
    try:
        return ConfusionMatrix(counts=counts, labels=labels)
    except ShapeError as exc:
        raise DataError("counts file %s is invalid: %s" % (path, exc)) from exc
