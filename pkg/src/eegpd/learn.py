"""Subject-wise stratified splitting and nested cross-validation.

The outer 5-fold loop estimates generalization; feature selection is fitted
per outer fold on that fold's training portion only, and the inner 5-fold
loop grid-searches hyperparameters by mean validation accuracy. All fold
assignments and tie-breaks are deterministic under the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .evaluate import METRIC_NAMES, MetricSet, _metrics_for, ci95, summarize_metric_sets
from .models import ModelSpec, TrainedModel, predict_scores, train_model
from .select import SelectConfig, SelectionMask, fit_selection


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint train/test subject-id sets with per-stratum counts."""

    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    strata: dict
    seed: int

    def __post_init__(self):
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise DataError(f"train/test overlap: {sorted(overlap)[:5]}")


def _half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def stratified_split(subjects, test_fraction: float = 0.3, seed: int = 0) -> SplitPlan:
    """70/30-style split stratified by (center, diagnosis).

    Within each stratum cell, subjects are shuffled by the seed and
    round(test_fraction * cell) of them (at least 1, at most cell-1) go to
    the test side. Every cell must have at least 2 subjects.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test fraction must be in (0, 1), got {test_fraction}")
    cells: dict[tuple[str, str], list[str]] = {}
    for s in subjects:
        cells.setdefault((s.center, s.diagnosis), []).append(s.subject_id)
    train: list[str] = []
    test: list[str] = []
    strata = {}
    for i, key in enumerate(sorted(cells)):
        ids = cells[key]
        if len(ids) < 2:
            raise DataError(f"stratum {key} has fewer than 2 subjects")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(i,))))
        order = rng.permutation(len(ids))
        n_test = min(len(ids) - 1, max(1, _half_up(test_fraction * len(ids))))
        shuffled = [ids[j] for j in order]
        test.extend(shuffled[:n_test])
        train.extend(shuffled[n_test:])
        strata[key] = {"train": len(ids) - n_test, "test": n_test}
    return SplitPlan(tuple(train), tuple(test), strata, seed)


def stratified_kfold(strata_labels, k: int, seed: int) -> list[np.ndarray]:
    """k folds of row indices, stratified by the given labels.

    Members of each stratum are shuffled and dealt to folds through a single
    rotating cursor, so fold sizes differ by at most one per stratum and
    small strata spread across folds.
    """
    labels = list(strata_labels)
    n = len(labels)
    if k < 2 or k > n:
        raise DataError(f"cannot make {k} folds from {n} rows")
    by_stratum: dict = {}
    for i, lab in enumerate(labels):
        by_stratum.setdefault(lab, []).append(i)
    folds: list[list[int]] = [[] for _ in range(k)]
    cursor = 0
    for s_idx, key in enumerate(sorted(by_stratum)):
        rows = by_stratum[key]
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(s_idx,))))
        for j in rng.permutation(len(rows)):
            folds[cursor % k].append(rows[j])
            cursor += 1
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


@dataclass(frozen=True)
class FoldResult:
    fold: int
    params: dict
    mask: SelectionMask
    metrics: MetricSet
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]


@dataclass(frozen=True)
class CvResult:
    """Nested-CV outcome for one model spec."""

    kind: str
    folds: tuple[FoldResult, ...]
    aggregate: dict  # metric -> (mean, lo, hi) | None

    def mean_accuracy(self) -> float:
        entry = self.aggregate.get("accuracy")
        if entry is None:
            raise DataError("no defined accuracy in CV aggregate")
        return entry[0]


def grid_search(
    x: np.ndarray,
    y: np.ndarray,
    strata,
    spec: ModelSpec,
    inner_folds: int,
    seed: int,
) -> dict:
    """Pick hyperparameters by mean inner-fold validation accuracy.

    Ties resolve to the earliest grid point in declaration order.
    """
    points = spec.grid_points()
    if not points:
        raise DataError(f"{spec.kind}: empty hyperparameter grid")
    folds = stratified_kfold(strata, inner_folds, seed)
    best_acc = -np.inf
    best_params = None
    for params in points:
        accs = []
        for val_rows in folds:
            train_rows = np.setdiff1d(np.arange(x.shape[0]), val_rows)
            model = train_model(spec.kind, params, x[train_rows], y[train_rows])
            _, labels = predict_scores(model, x[val_rows])
            accs.append(float(np.mean(labels == y[val_rows])))
        acc = float(np.mean(accs))
        if acc > best_acc:
            best_acc = acc
            best_params = params
    return best_params


def nested_cv(
    x: np.ndarray,
    y: np.ndarray,
    strata,
    subject_ids,
    specs: list[ModelSpec],
    selection: SelectConfig,
    seed: int = 0,
    outer_folds: int = 5,
    inner_folds: int = 5,
) -> dict[str, CvResult]:
    """Nested cross-validation with fold-internal feature selection.

    Per outer fold: fit selection on the outer-training rows, grid-search on
    the masked training rows via the inner folds, refit with the chosen
    hyperparameters, and score all six metrics on the held-out fold.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    subject_ids = list(subject_ids)
    strata = list(strata)
    for cls in (0, 1):
        if int(np.sum(y == cls)) < outer_folds:
            raise DataError(f"need at least {outer_folds} subjects per class")
    folds = stratified_kfold(strata, outer_folds, seed)
    results: dict[str, CvResult] = {}
    for spec in specs:
        fold_results = []
        for f, val_rows in enumerate(folds):
            train_rows = np.setdiff1d(np.arange(x.shape[0]), val_rows)
            try:
                mask = fit_selection(x[train_rows], y[train_rows], selection, fold=f)
                x_tr = x[train_rows][:, mask.keep]
                x_va = x[val_rows][:, mask.keep]
                inner_seed = int(np.random.SeedSequence(entropy=seed, spawn_key=(1, f)).generate_state(1)[0])
                params = grid_search(x_tr, y[train_rows], [strata[i] for i in train_rows], spec,
                                     inner_folds, inner_seed)
                model = train_model(spec.kind, params, x_tr, y[train_rows])
                scores, labels = predict_scores(model, x_va)
            except DataError as exc:
                raise DataError(f"outer fold {f} ({spec.kind}): {exc}") from exc
            metrics = _metrics_for(y[val_rows], labels, scores)
            fold_results.append(FoldResult(
                fold=f,
                params=params,
                mask=mask,
                metrics=metrics,
                train_ids=tuple(subject_ids[i] for i in train_rows),
                val_ids=tuple(subject_ids[i] for i in val_rows),
            ))
        aggregate = summarize_metric_sets([fr.metrics for fr in fold_results])
        results[spec.kind] = CvResult(spec.kind, tuple(fold_results), aggregate)
    return results


def specs_from_grids(grids: dict) -> list[ModelSpec]:
    """Build ModelSpecs from a {kind: {param: values}} mapping."""
    return [ModelSpec(kind, dict(params)) for kind, params in grids.items()]
