"""Command-line interface: standalone stages plus the full pipeline.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import PipelineError
from .evaluate import bootstrap_evaluate, report_to_csv, report_to_text
from .harmonize import CovariateSpec, bootstrap_combat_fit, combat_transform
from .io import load_manifest, read_features_csv, write_features_csv
from .learn import grid_search, nested_cv, stratified_split
from .models import ModelSpec, model_from_dict, model_to_dict, train_model
from .pipeline import (
    _cvresult_to_jsonable,
    _mask_to_jsonable,
    _write_json,
    extract_features,
    harmonize_features,
    run_pipeline,
)
from .select import fit_selection, merge_masks
from .synth import synth_multicenter_dataset


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="key = value config file")
    parser.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config entry (repeatable)")
    parser.add_argument("--seed", type=int, default=None, help="override the global seed")
    parser.add_argument("--threads", type=int, default=None, help="worker thread cap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eegpd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-center dataset")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True, help="output dataset directory")

    p = sub.add_parser("extract", help="manifest -> feature CSV")
    _add_common(p)
    p.add_argument("--manifest", type=Path, default=None, help="override config manifest")
    p.add_argument("--out", type=Path, required=True, help="output feature CSV")

    p = sub.add_parser("harmonize", help="feature CSV -> harmonized feature CSV")
    _add_common(p)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("select", help="fit feature selection on a feature CSV")
    _add_common(p)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output mask JSON")

    p = sub.add_parser("train", help="split, nested CV and final model on a feature CSV")
    _add_common(p)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--outdir", type=Path, required=True)

    p = sub.add_parser("evaluate", help="bootstrap-evaluate a trained model on the test split")
    _add_common(p)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True, help="model.json from train")
    p.add_argument("--split", type=Path, required=True, help="split.json from train")
    p.add_argument("--out", type=Path, required=True, help="report path stem (.csv/.txt appended)")

    p = sub.add_parser("pipeline", help="run every stage end to end")
    _add_common(p)

    return parser


def _cmd_synth(cfg, args) -> None:
    manifest = synth_multicenter_dataset(cfg.synth, args.out)
    print(manifest)


def _cmd_extract(cfg, args) -> None:
    manifest = args.manifest if args.manifest is not None else cfg.manifest
    if manifest is None:
        raise_config("extract needs a manifest (config key `manifest` or --manifest)")
    records = load_manifest(manifest)
    fm = extract_features(cfg, records)
    write_features_csv(fm, args.out)
    print(args.out)


def raise_config(msg: str):
    from .errors import ConfigError

    raise ConfigError(msg)


def _cmd_harmonize(cfg, args) -> None:
    fm = read_features_csv(args.features)
    out = harmonize_features(cfg, fm, split=None)
    write_features_csv(out, args.out)
    print(args.out)


def _cmd_select(cfg, args) -> None:
    fm = read_features_csv(args.features)
    mask = fit_selection(fm.values, fm.labels(), cfg.select)
    _write_json(_mask_to_jsonable(mask), args.out)
    print(args.out)


def _cmd_train(cfg, args) -> None:
    fm = read_features_csv(args.features)
    outdir = args.outdir
    outdir.mkdir(parents=True, exist_ok=True)
    split = stratified_split(fm.subjects, cfg.cv.test_fraction, cfg.stage_seed(cfg.cv.seed))
    _write_json(
        {"train_ids": list(split.train_ids), "test_ids": list(split.test_ids),
         "strata": {f"{c}|{d}": v for (c, d), v in split.strata.items()}, "seed": split.seed},
        outdir / "split.json",
    )
    id_to_row = {s.subject_id: i for i, s in enumerate(fm.subjects)}
    train_fm = fm.take_subjects([id_to_row[sid] for sid in split.train_ids])
    specs = [ModelSpec(kind, grid) for kind, grid in cfg.models.grids().items()]
    results = nested_cv(
        train_fm.values, train_fm.labels(), train_fm.strata(), train_fm.subject_ids(),
        specs, cfg.select, seed=cfg.stage_seed(cfg.cv.seed),
        outer_folds=cfg.cv.outer_folds, inner_folds=cfg.cv.inner_folds,
    )
    _write_json({k: _cvresult_to_jsonable(r) for k, r in results.items()}, outdir / "cvresult.json")
    _write_json({k: [_mask_to_jsonable(fr.mask) for fr in r.folds] for k, r in results.items()},
                outdir / "masks.json")
    best_kind = max(cfg.models.grids(), key=lambda k: (results[k].mean_accuracy(), -list(cfg.models.grids()).index(k)))
    merged = merge_masks([fr.mask for fr in results[best_kind].folds])
    final_seed = int(np.random.SeedSequence(entropy=cfg.stage_seed(cfg.cv.seed), spawn_key=(2,)).generate_state(1)[0])
    spec = next(s for s in specs if s.kind == best_kind)
    x_train = train_fm.values[:, merged.keep]
    params = grid_search(x_train, train_fm.labels(), train_fm.strata(), spec, cfg.cv.inner_folds, final_seed)
    model = train_model(best_kind, params, x_train, train_fm.labels())
    _write_json(
        {"model": model_to_dict(model), "kept_indices": np.flatnonzero(merged.keep).tolist(),
         "feature_names": [fm.feature_names[i] for i in np.flatnonzero(merged.keep)],
         "best_kind": best_kind, "params": params},
        outdir / "model.json",
    )
    print(outdir)


def _cmd_evaluate(cfg, args) -> None:
    fm = read_features_csv(args.features)
    payload = json.loads(Path(args.model).read_text(encoding="utf-8"))
    model = model_from_dict(payload["model"])
    kept = np.array(payload["kept_indices"], dtype=np.int64)
    split = json.loads(Path(args.split).read_text(encoding="utf-8"))
    id_to_row = {s.subject_id: i for i, s in enumerate(fm.subjects)}
    test_fm = fm.take_subjects([id_to_row[sid] for sid in split["test_ids"]])
    report = bootstrap_evaluate(
        model, test_fm.values[:, kept], test_fm.labels(), test_fm.centers(),
        n_boot=cfg.eval.n_bootstrap, seed=cfg.stage_seed(cfg.eval.seed),
    )
    out = Path(args.out)
    csv_path = out.with_suffix(".csv")
    txt_path = out.with_suffix(".txt")
    report_to_csv(report, csv_path)
    txt_path.write_text(report_to_text(report), encoding="utf-8")
    print(csv_path)
    print(txt_path)


def _cmd_pipeline(cfg, args) -> None:
    paths = run_pipeline(cfg)
    print(paths.run_dir)


_COMMANDS = {
    "synth": _cmd_synth,
    "extract": _cmd_extract,
    "harmonize": _cmd_harmonize,
    "select": _cmd_select,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "pipeline": _cmd_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.sets, args.seed, args.threads)
        _COMMANDS[args.command](cfg, args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
