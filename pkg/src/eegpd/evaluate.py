"""Classification metrics, normal-approximation CIs, and bootstrap test reports.

PD is the positive class throughout. Ratios with a zero denominator are
reported as an explicit undefined marker (None), surfaced as "n/a" in
reports, and skipped in aggregation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .models import TrainedModel, predict_scores

METRIC_NAMES = ("accuracy", "recall", "specificity", "precision", "f1", "auc")


@dataclass(frozen=True)
class MetricSet:
    """One value per metric; None marks an undefined ratio."""

    accuracy: float | None = None
    recall: float | None = None
    specificity: float | None = None
    precision: float | None = None
    f1: float | None = None
    auc: float | None = None

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def confusion_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> MetricSet:
    """Accuracy, recall, specificity, precision and F1 from hard labels."""
    y_true = np.asarray(y_true).astype(np.int64)
    y_pred = np.asarray(y_pred).astype(np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise DataError(f"label vectors must match, got {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise DataError("empty label vectors")
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    tn = int(np.sum((y_true == 0) & (y_pred == 0)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))

    def ratio(num, den):
        return num / den if den > 0 else None

    recall = ratio(tp, tp + fn)
    precision = ratio(tp, tp + fp)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return MetricSet(
        accuracy=(tp + tn) / y_true.size,
        recall=recall,
        specificity=ratio(tn, tn + fp),
        precision=precision,
        f1=f1,
    )


def roc_auc(y_true: np.ndarray, scores: np.ndarray) -> float:
    """Rank-based AUC: Mann-Whitney U over n_pos*n_neg, ties counted half."""
    y_true = np.asarray(y_true).astype(np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(np.sum(y_true == 1))
    n_neg = int(np.sum(y_true == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC AUC needs both classes present")
    ranks = _average_ranks(scores)
    r_pos = float(ranks[y_true == 1].sum())
    u = r_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average of ranks i+1..j+1
        i = j + 1
    return ranks


def ci95(values) -> tuple[float, float, float]:
    """(mean, lo, hi) by the normal approximation mean +/- 1.96*sd/sqrt(n).

    Bounds are not clipped to [0, 1]; degenerate n=1 gives [v, v].
    """
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise DataError("ci95 of an empty sample")
    mean = float(v.mean())
    if v.size == 1:
        return mean, mean, mean
    half = 1.96 * float(v.std(ddof=1)) / float(np.sqrt(v.size))
    return mean, mean - half, mean + half


@dataclass(frozen=True)
class EvalReport:
    """Per-metric mean and 95% CI, globally and per center."""

    global_metrics: dict
    per_center: dict
    n_bootstrap: int
    seed: int


def summarize_metric_sets(sets: list[MetricSet]) -> dict:
    """Aggregate a list of MetricSets into {metric: (mean, lo, hi) | None}."""
    out = {}
    for name in METRIC_NAMES:
        vals = [s.as_dict()[name] for s in sets if s.as_dict()[name] is not None]
        out[name] = ci95(vals) if vals else None
    return out


def bootstrap_evaluate(
    model: TrainedModel,
    x_test: np.ndarray,
    y_test: np.ndarray,
    centers: list[str],
    n_boot: int = 100,
    seed: int = 0,
    resampler=None,
) -> EvalReport:
    """Bootstrap the test set with replacement and aggregate all six metrics.

    Each resample has the original test size. Per-center metrics restrict the
    global model's predictions to that center's rows; a center absent from a
    resample contributes nothing for that iteration. resampler(rng, n) -> rows
    overrides the draw (degenerate resamplers are useful for testing).
    """
    x_test = np.asarray(x_test, dtype=np.float64)
    y_test = np.asarray(y_test).astype(np.int64)
    if x_test.shape[0] == 0:
        raise DataError("empty test set")
    if len(centers) != x_test.shape[0]:
        raise DataError("centers list does not match test rows")
    scores, labels = predict_scores(model, x_test)
    centers_arr = np.array(centers)
    center_names = list(dict.fromkeys(centers))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    n = x_test.shape[0]

    global_sets: list[MetricSet] = []
    center_sets: dict[str, list[MetricSet]] = {c: [] for c in center_names}
    for _ in range(n_boot):
        rows = rng.integers(0, n, size=n) if resampler is None else np.asarray(resampler(rng, n))
        global_sets.append(_metrics_for(y_test[rows], labels[rows], scores[rows]))
        for c in center_names:
            sub = rows[centers_arr[rows] == c]
            if sub.size == 0:
                continue
            center_sets[c].append(_metrics_for(y_test[sub], labels[sub], scores[sub]))

    return EvalReport(
        global_metrics=summarize_metric_sets(global_sets),
        per_center={c: summarize_metric_sets(center_sets[c]) for c in center_names},
        n_bootstrap=n_boot,
        seed=seed,
    )


def _metrics_for(y_true, y_pred, scores) -> MetricSet:
    base = confusion_metrics(y_true, y_pred)
    auc = None
    if np.unique(y_true).size == 2:
        auc = roc_auc(y_true, scores)
    return MetricSet(base.accuracy, base.recall, base.specificity, base.precision, base.f1, auc)


def _fmt(entry, name) -> str:
    if entry is None:
        return "n/a"
    mean, lo, hi = entry
    if name == "auc":
        return f"{mean:.2f} [{lo:.2f} {hi:.2f}]"
    return f"{100 * mean:.1f} [{100 * lo:.1f} {100 * hi:.1f}]"


def report_to_text(report: EvalReport) -> str:
    """Tabular summary: one row for the global scope, one per center."""
    header = ["scope"] + [n if n != "auc" else "auc" for n in METRIC_NAMES]
    rows = [["global"] + [_fmt(report.global_metrics[n], n) for n in METRIC_NAMES]]
    for center, metrics in report.per_center.items():
        rows.append([center] + [_fmt(metrics[n], n) for n in METRIC_NAMES])
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    lines.append("")
    lines.append(f"metrics except auc in %, mean [95% CI] over {report.n_bootstrap} bootstrap resamples")
    return "\n".join(lines) + "\n"


def report_to_csv(report: EvalReport, path: str | Path) -> None:
    path = Path(path)
    cols = ["scope"]
    for name in METRIC_NAMES:
        cols += [f"{name}_mean", f"{name}_lo", f"{name}_hi"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for scope, metrics in [("global", report.global_metrics)] + list(report.per_center.items()):
            row = [scope]
            for name in METRIC_NAMES:
                entry = metrics[name]
                if entry is None:
                    row += ["n/a", "n/a", "n/a"]
                else:
                    row += [repr(float(v)) for v in entry]
            writer.writerow(row)
