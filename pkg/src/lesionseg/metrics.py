"""Overlap metrics for binary masks, with per-image and grouped reports."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError

METRIC_NAMES = ("AC", "DI", "JA", "SE", "SP")


@dataclass
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred: np.ndarray, gt: np.ndarray) -> Confusion:
    """Pixel counts for one image; both masks must be binary."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(
            f"prediction {pred.shape} and ground truth {gt.shape} differ")
    for name, arr in (("prediction", pred), ("ground truth", gt)):
        vals = np.unique(arr)
        if not np.isin(vals, (0, 1)).all():
            raise ConfigError(
                f"{name} mask must be binary 0/1, found values {vals}")
    p = pred.astype(bool)
    g = gt.astype(bool)
    return Confusion(tp=int(np.sum(p & g)), fp=int(np.sum(p & ~g)),
                     fn=int(np.sum(~p & g)), tn=int(np.sum(~p & ~g)))


def _ratio(num: int, den: int) -> float:
    """A ratio whose denominator is zero counts as perfect.

    The denominator vanishes only when the quantity being tested has no
    pixels to get wrong (no lesion to find, no background to reject), and
    an absent error is treated as a success rather than poisoning means
    with NaN.
    """
    return num / den if den else 1.0


def compute_metrics(c: Confusion) -> dict:
    """Jaccard, dice, accuracy, sensitivity, specificity as fractions."""
    return {
        "AC": _ratio(c.tp + c.tn, c.total),
        "DI": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        "JA": _ratio(c.tp, c.tp + c.fp + c.fn),
        "SE": _ratio(c.tp, c.tp + c.fn),
        "SP": _ratio(c.tn, c.tn + c.fp),
    }


@dataclass
class ImageRecord:
    sample_id: str
    category: str
    conf: Confusion
    metrics: dict


def evaluate_pair(sample_id: str, category: str, pred, gt) -> ImageRecord:
    c = confusion(pred, gt)
    return ImageRecord(sample_id=sample_id, category=category, conf=c,
                       metrics=compute_metrics(c))


def _mean_metrics(records) -> dict:
    return {m: float(np.mean([r.metrics[m] for r in records]))
            for m in METRIC_NAMES}


HIST_BINS = 10


@dataclass
class MetricsReport:
    records: list
    overall: dict
    by_category: dict
    histogram: list     # (lo, hi, count) rows over the jaccard scores


def aggregate(records, bins: int = HIST_BINS) -> MetricsReport:
    """Mean of the per-image metrics, overall and per category."""
    if not records:
        raise ConfigError("no image records to aggregate")
    if bins < 1:
        raise ConfigError(f"histogram needs at least one bin, got {bins}")
    cats = sorted({r.category for r in records})
    by_cat = {cat: _mean_metrics([r for r in records if r.category == cat])
              for cat in cats}
    edges = np.linspace(0.0, 1.0, bins + 1)
    ja = [r.metrics["JA"] for r in records]
    counts, _ = np.histogram(ja, bins=edges)
    hist = [(float(edges[i]), float(edges[i + 1]), int(counts[i]))
            for i in range(bins)]
    return MetricsReport(records=list(records),
                         overall=_mean_metrics(records),
                         by_category=by_cat, histogram=hist)


def write_image_csv(path, report: MetricsReport):
    lines = ["sample_id,category,tp,fp,fn,tn,AC,DI,JA,SE,SP"]
    for r in report.records:
        vals = ",".join(repr(r.metrics[m]) for m in METRIC_NAMES)
        lines.append(f"{r.sample_id},{r.category},{r.conf.tp},{r.conf.fp},"
                     f"{r.conf.fn},{r.conf.tn},{vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary_json(path, report: MetricsReport):
    payload = {
        "count": len(report.records),
        "overall": {m: report.overall[m] for m in METRIC_NAMES},
        "by_category": {
            cat: {m: vals[m] for m in METRIC_NAMES}
            for cat, vals in report.by_category.items()},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True)
                          + "\n")


def write_histogram_csv(path, report: MetricsReport):
    lines = ["bin_lo,bin_hi,count"]
    lines.extend(f"{lo:g},{hi:g},{n}" for lo, hi, n in report.histogram)
    Path(path).write_text("\n".join(lines) + "\n")


def format_summary(report: MetricsReport) -> str:
    """Human-readable table; values become percentages only here."""

    def pct(v: float) -> str:
        return f"{v * 100.0:.1f}"

    rows = [("overall", report.overall, len(report.records))]
    rows.extend(
        (cat, vals,
         sum(1 for r in report.records if r.category == cat))
        for cat, vals in sorted(report.by_category.items()))
    head = f"{'group':<16s} {'n':>4s} " + " ".join(
        f"{m:>6s}" for m in METRIC_NAMES)
    lines = [head, "-" * len(head)]
    for name, vals, n in rows:
        lines.append(f"{name:<16s} {n:>4d} " + " ".join(
            f"{pct(vals[m]):>6s}" for m in METRIC_NAMES))
    return "\n".join(lines)
