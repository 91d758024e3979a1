"""End-to-end orchestration: preprocess, extract, harmonize, select+train, evaluate.

Every stage can also run standalone through the CLI; this module wires them
together, persists the documented artifacts under <outdir>/<run-id>/, and
guarantees bitwise-identical numeric artifacts for identical config + seed,
independent of the worker thread count.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import spectral
from .config import PipelineConfig, config_hash, config_to_kv
from .errors import ConfigError, DataError, PipelineError
from .evaluate import EvalReport, bootstrap_evaluate, report_to_csv, report_to_text
from .harmonize import CovariateSpec, bootstrap_combat_fit, combat_transform
from .io import (
    EpochArray,
    FeatureMatrix,
    SubjectRecord,
    load_manifest,
    read_epochs,
    write_features_csv,
)
from .learn import CvResult, SplitPlan, grid_search, nested_cv, stratified_split
from .models import ModelSpec, model_to_dict, train_model
from .preprocess import average_rereference, fir_filter, reject_epochs, segment_epochs, truncate_common
from .select import SelectionMask, merge_masks


@dataclass(frozen=True)
class RunPaths:
    run_dir: Path
    features_csv: Path
    harmonized_csv: Path | None
    masks_json: Path
    cvresult_json: Path
    split_json: Path
    model_json: Path
    evalreport_csv: Path
    evalreport_txt: Path
    run_json: Path


def preprocess_subject(ea: EpochArray, cfg: PipelineConfig) -> EpochArray:
    """Filter, segment and reject one subject's recording.

    Each stored epoch is treated as a continuous segment: band-limited,
    then cut into epoch_seconds pieces. Rejection runs when at least three
    epochs are available (robust statistics need that many).
    """
    p = cfg.preprocess
    pieces = []
    for seg in ea.data:
        sig = average_rereference(seg) if p.average_reref else seg
        sig = fir_filter(sig, "highpass", p.highpass_hz, ea.fs)
        sig = fir_filter(sig, "lowpass", p.lowpass_hz, ea.fs)
        pieces.append(segment_epochs(sig, ea.fs, p.epoch_seconds, channels=ea.channels).data)
    stacked = EpochArray(np.concatenate(pieces, axis=0), ea.fs, ea.channels)
    if stacked.n_epochs >= 3:
        keep = reject_epochs(stacked, p.reject_z)
        if not keep.any():
            raise DataError("all epochs rejected")
        stacked = stacked.take_epochs(keep)
    return stacked


def extract_features(cfg: PipelineConfig, records: list[SubjectRecord]) -> FeatureMatrix:
    """Manifest records -> preprocessed epochs -> per-subject feature vectors."""
    if not records:
        raise DataError("empty manifest")

    def load_and_preprocess(rec: SubjectRecord) -> EpochArray:
        if rec.epoch_path is None:
            raise DataError(f"subject {rec.subject_id!r}: no epoch file")
        try:
            ea = read_epochs(rec.epoch_path).to_canonical()
            return preprocess_subject(ea, cfg)
        except DataError as exc:
            raise DataError(f"stage=preprocess subject={rec.subject_id}: {exc}") from exc

    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        cleaned = list(pool.map(load_and_preprocess, records))

    counts = {rec.subject_id: ea.n_epochs for rec, ea in zip(records, cleaned)}
    groups = {rec.subject_id: rec.center for rec in records}
    keep_counts = truncate_common(counts, groups)
    cleaned = [
        ea.take_epochs(slice(0, keep_counts[rec.subject_id]))
        for rec, ea in zip(records, cleaned)
    ]

    def featurize(item) -> np.ndarray:
        rec, ea = item
        try:
            vec, _ = spectral.subject_features(ea, cfg.spectral.nw, cfg.spectral.k)
        except PipelineError as exc:
            raise type(exc)(f"stage=extract subject={rec.subject_id}: {exc}") from exc
        return vec

    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        vectors = list(pool.map(featurize, zip(records, cleaned)))

    names = spectral.feature_names()
    values = np.stack(vectors)
    return FeatureMatrix(values, names, tuple(r.without_path() for r in records))


def harmonize_features(cfg: PipelineConfig, fm: FeatureMatrix, split: SplitPlan | None = None) -> FeatureMatrix:
    """Fit ComBat per config (on everything or on training rows) and transform all rows."""
    h = cfg.harmonize
    cov = CovariateSpec(columns=h.covariates)
    if h.fit_on == "train":
        if split is None:
            raise ConfigError("harmonize.fit_on=train requires a split")
        train_ids = set(split.train_ids)
        rows = [i for i, s in enumerate(fm.subjects) if s.subject_id in train_ids]
        fit_fm = fm.take_subjects(rows)
    else:
        fit_fm = fm
    model = bootstrap_combat_fit(
        fit_fm,
        batch_key="center",
        cov=cov,
        reference=h.reference,
        B=h.bootstrap_B,
        eb=h.eb,
        seed=cfg.stage_seed(h.seed),
    )
    return combat_transform(model, fm)


def _metrics_to_jsonable(metrics: dict) -> dict:
    out = {}
    for name, entry in metrics.items():
        out[name] = None if entry is None else {"mean": entry[0], "lo": entry[1], "hi": entry[2]}
    return out


def _mask_to_jsonable(mask: SelectionMask) -> dict:
    return {
        "fold": mask.fold,
        "method": mask.method,
        "params": mask.params,
        "n_kept": mask.n_kept,
        "kept_indices": np.flatnonzero(mask.keep).tolist(),
        "scores": [float(s) for s in mask.scores],
    }


def _cvresult_to_jsonable(result: CvResult) -> dict:
    return {
        "kind": result.kind,
        "aggregate": _metrics_to_jsonable(result.aggregate),
        "folds": [
            {
                "fold": fr.fold,
                "params": fr.params,
                "metrics": {k: v for k, v in fr.metrics.as_dict().items()},
                "n_kept": fr.mask.n_kept,
                "train_ids": list(fr.train_ids),
                "val_ids": list(fr.val_ids),
            }
            for fr in result.folds
        ],
    }


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def run_pipeline(cfg: PipelineConfig) -> RunPaths:
    """Execute all stages in order, persisting artifacts under <outdir>/<run-id>."""
    if cfg.manifest is None:
        raise ConfigError("pipeline requires a manifest path")
    run_id = config_hash(cfg)
    run_dir = Path(cfg.outdir) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)

    records = load_manifest(cfg.manifest)
    fm = extract_features(cfg, records)
    features_csv = run_dir / "features.csv"
    write_features_csv(fm, features_csv)

    split = stratified_split(fm.subjects, cfg.cv.test_fraction, cfg.stage_seed(cfg.cv.seed))
    split_json = run_dir / "split.json"
    _write_json(
        {"train_ids": list(split.train_ids), "test_ids": list(split.test_ids),
         "strata": {f"{c}|{d}": v for (c, d), v in split.strata.items()}, "seed": split.seed},
        split_json,
    )

    harmonized_csv = None
    working = fm
    if cfg.harmonize.enabled:
        working = harmonize_features(cfg, fm, split)
        harmonized_csv = run_dir / "features_harmonized.csv"
        write_features_csv(working, harmonized_csv)

    id_to_row = {s.subject_id: i for i, s in enumerate(working.subjects)}
    train_rows = [id_to_row[sid] for sid in split.train_ids]
    test_rows = [id_to_row[sid] for sid in split.test_ids]
    train_fm = working.take_subjects(train_rows)
    test_fm = working.take_subjects(test_rows)

    specs = [ModelSpec(kind, grid) for kind, grid in cfg.models.grids().items()]
    results = nested_cv(
        train_fm.values,
        train_fm.labels(),
        train_fm.strata(),
        train_fm.subject_ids(),
        specs,
        cfg.select,
        seed=cfg.stage_seed(cfg.cv.seed),
        outer_folds=cfg.cv.outer_folds,
        inner_folds=cfg.cv.inner_folds,
    )
    cvresult_json = run_dir / "cvresult.json"
    _write_json({kind: _cvresult_to_jsonable(res) for kind, res in results.items()}, cvresult_json)
    masks_json = run_dir / "masks.json"
    _write_json(
        {kind: [_mask_to_jsonable(fr.mask) for fr in res.folds] for kind, res in results.items()},
        masks_json,
    )

    # Best model by mean validation accuracy; ties resolve in enabled order.
    best_kind = None
    best_acc = -np.inf
    for kind in cfg.models.grids():
        acc = results[kind].mean_accuracy()
        if acc > best_acc:
            best_kind, best_acc = kind, acc
    merged = merge_masks([fr.mask for fr in results[best_kind].folds])

    final_seed = int(np.random.SeedSequence(entropy=cfg.stage_seed(cfg.cv.seed), spawn_key=(2,)).generate_state(1)[0])
    best_spec = next(s for s in specs if s.kind == best_kind)
    x_train = train_fm.values[:, merged.keep]
    final_params = grid_search(
        x_train, train_fm.labels(), train_fm.strata(), best_spec, cfg.cv.inner_folds, final_seed
    )
    final_model = train_model(best_kind, final_params, x_train, train_fm.labels())
    model_json = run_dir / "model.json"
    _write_json(
        {
            "model": model_to_dict(final_model),
            "kept_indices": np.flatnonzero(merged.keep).tolist(),
            "feature_names": [working.feature_names[i] for i in np.flatnonzero(merged.keep)],
            "best_kind": best_kind,
            "params": final_params,
        },
        model_json,
    )

    report = bootstrap_evaluate(
        final_model,
        test_fm.values[:, merged.keep],
        test_fm.labels(),
        test_fm.centers(),
        n_boot=cfg.eval.n_bootstrap,
        seed=cfg.stage_seed(cfg.eval.seed),
    )
    evalreport_csv = run_dir / "evalreport.csv"
    evalreport_txt = run_dir / "evalreport.txt"
    report_to_csv(report, evalreport_csv)
    evalreport_txt.write_text(report_to_text(report), encoding="utf-8")

    run_json = run_dir / "run.json"
    _write_json(
        {
            "run_id": run_id,
            "config_hash": config_hash(cfg),
            "config": config_to_kv(cfg),
            "seeds": {
                "global": cfg.seed,
                "split": cfg.stage_seed(cfg.cv.seed),
                "harmonize": cfg.stage_seed(cfg.harmonize.seed),
                "eval": cfg.stage_seed(cfg.eval.seed),
                "final_grid_search": final_seed,
            },
            "best_kind": best_kind,
            "final_params": final_params,
            "n_features_final": int(merged.n_kept),
            "fold_subjects": {
                kind: [{"train": list(fr.train_ids), "val": list(fr.val_ids)} for fr in res.folds]
                for kind, res in results.items()
            },
        },
        run_json,
    )

    return RunPaths(
        run_dir=run_dir,
        features_csv=features_csv,
        harmonized_csv=harmonized_csv,
        masks_json=masks_json,
        cvresult_json=cvresult_json,
        split_json=split_json,
        model_json=model_json,
        evalreport_csv=evalreport_csv,
        evalreport_txt=evalreport_txt,
        run_json=run_json,
    )
