"""Pipeline configuration: dotted key=value files, overrides, and hashing.

One structured text file configures every stage. Keys use dotted section
prefixes (preprocess.highpass_hz = 1.0); `--set key=value` overrides single
entries and `--seed` overrides the global seed. Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .select import SelectConfig
from .synth import SynthConfig


@dataclass(frozen=True)
class PreprocessConfig:
    highpass_hz: float = 1.0
    lowpass_hz: float = 30.0
    epoch_seconds: float = 5.0
    reject_z: float = 3.0
    average_reref: bool = False


@dataclass(frozen=True)
class SpectralConfig:
    nw: float = 4.0
    k: int = 7


@dataclass(frozen=True)
class HarmonizeConfig:
    enabled: bool = True
    reference: str | None = None  # default: largest batch
    bootstrap_B: int = 1000
    eb: bool = True
    seed: int | None = None       # default: global seed
    fit_on: str = "all"           # all | train
    covariates: tuple[str, ...] = ("age", "sex", "diagnosis")

    def __post_init__(self):
        if self.fit_on not in ("all", "train"):
            raise ConfigError(f"harmonize.fit_on must be all or train, got {self.fit_on!r}")


@dataclass(frozen=True)
class CvConfig:
    outer_folds: int = 5
    inner_folds: int = 5
    test_fraction: float = 0.3
    seed: int | None = None


@dataclass(frozen=True)
class EvalConfig:
    n_bootstrap: int = 100
    seed: int | None = None


@dataclass(frozen=True)
class ModelsConfig:
    enabled: tuple[str, ...] = ("logreg", "svm", "knn", "dtree")
    logreg_C: tuple = (0.01, 0.1, 1.0, 10.0, 100.0)
    svm_C: tuple = (0.01, 0.1, 1.0, 10.0, 100.0)
    svm_kernel: tuple = ("linear", "rbf")
    svm_gamma: tuple = ("scale", 0.01, 0.1)
    knn_k: tuple = (3, 5, 7, 9)
    dtree_max_depth: tuple = (2, 3, 4, 5)
    dtree_min_leaf: tuple = (2, 5)

    def grids(self) -> dict:
        all_grids = {
            "logreg": {"C": self.logreg_C},
            "svm": {"C": self.svm_C, "kernel": self.svm_kernel, "gamma": self.svm_gamma},
            "knn": {"k": self.knn_k},
            "dtree": {"max_depth": self.dtree_max_depth, "min_leaf": self.dtree_min_leaf},
        }
        unknown = [k for k in self.enabled if k not in all_grids]
        if unknown:
            raise ConfigError(f"unknown model kinds enabled: {unknown}")
        return {k: all_grids[k] for k in self.enabled}


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    threads: int = 1
    outdir: Path = Path("runs")
    manifest: Path | None = None
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    harmonize: HarmonizeConfig = field(default_factory=HarmonizeConfig)
    select: SelectConfig = field(default_factory=lambda: SelectConfig(method="anova_f"))
    cv: CvConfig = field(default_factory=CvConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    models: ModelsConfig = field(default_factory=ModelsConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def stage_seed(self, value: int | None) -> int:
        return self.seed if value is None else value


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_list(s: str, item):
    return tuple(item(part.strip()) for part in s.split(",") if part.strip())


def _gamma_item(s: str):
    return "scale" if s == "scale" else float(s)


def _opt_int(s: str):
    return None if s.strip().lower() in ("", "none") else int(s)


def _opt_str(s: str):
    return None if s.strip().lower() in ("", "none") else s.strip()


def _opt_path(s: str):
    return None if s.strip().lower() in ("", "none") else Path(s)


# key -> ((section, field) or (field,), parser)
_KEYS: dict = {
    "seed": (("seed",), int),
    "threads": (("threads",), int),
    "outdir": (("outdir",), lambda s: Path(s)),
    "manifest": (("manifest",), _opt_path),
    "preprocess.highpass_hz": (("preprocess", "highpass_hz"), float),
    "preprocess.lowpass_hz": (("preprocess", "lowpass_hz"), float),
    "preprocess.epoch_seconds": (("preprocess", "epoch_seconds"), float),
    "preprocess.reject_z": (("preprocess", "reject_z"), float),
    "preprocess.average_reref": (("preprocess", "average_reref"), _parse_bool),
    "spectral.nw": (("spectral", "nw"), float),
    "spectral.k": (("spectral", "k"), int),
    "harmonize.enabled": (("harmonize", "enabled"), _parse_bool),
    "harmonize.reference": (("harmonize", "reference"), _opt_str),
    "harmonize.bootstrap_B": (("harmonize", "bootstrap_B"), int),
    "harmonize.eb": (("harmonize", "eb"), _parse_bool),
    "harmonize.seed": (("harmonize", "seed"), _opt_int),
    "harmonize.fit_on": (("harmonize", "fit_on"), str),
    "harmonize.covariates": (("harmonize", "covariates"), lambda s: _parse_list(s, str)),
    "select.method": (("select", "method"), str),
    "select.m": (("select", "m"), int),
    "select.tau": (("select", "tau"), float),
    "select.rent_K": (("select", "rent_K"), int),
    "select.rent_subsample": (("select", "rent_subsample"), float),
    "select.lambda": (("select", "lambda_"), float),
    "select.l1_ratio": (("select", "l1_ratio"), float),
    "select.seed": (("select", "seed"), int),
    "cv.outer_folds": (("cv", "outer_folds"), int),
    "cv.inner_folds": (("cv", "inner_folds"), int),
    "cv.test_fraction": (("cv", "test_fraction"), float),
    "cv.seed": (("cv", "seed"), _opt_int),
    "eval.n_bootstrap": (("eval", "n_bootstrap"), int),
    "eval.seed": (("eval", "seed"), _opt_int),
    "models.enabled": (("models", "enabled"), lambda s: _parse_list(s, str)),
    "models.logreg.C": (("models", "logreg_C"), lambda s: _parse_list(s, float)),
    "models.svm.C": (("models", "svm_C"), lambda s: _parse_list(s, float)),
    "models.svm.kernel": (("models", "svm_kernel"), lambda s: _parse_list(s, str)),
    "models.svm.gamma": (("models", "svm_gamma"), lambda s: _parse_list(s, _gamma_item)),
    "models.knn.k": (("models", "knn_k"), lambda s: _parse_list(s, int)),
    "models.dtree.max_depth": (("models", "dtree_max_depth"), lambda s: _parse_list(s, int)),
    "models.dtree.min_leaf": (("models", "dtree_min_leaf"), lambda s: _parse_list(s, int)),
    "synth.n_centers": (("synth", "n_centers"), int),
    "synth.subjects_per_center_per_class": (("synth", "subjects_per_center_per_class"), int),
    "synth.fs": (("synth", "fs"), float),
    "synth.epoch_seconds": (("synth", "epoch_seconds"), float),
    "synth.epochs_per_subject": (("synth", "epochs_per_subject"), int),
    "synth.class_effect": (("synth", "class_effect"), float),
    "synth.shift_scale": (("synth", "shift_scale"), float),
    "synth.gain_spread": (("synth", "gain_spread"), float),
    "synth.noise_sd": (("synth", "noise_sd"), float),
    "synth.seed": (("synth", "seed"), int),
}


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read key = value lines; '#' starts a comment, blank lines skipped."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    kv: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        kv[key] = value
    return kv


def apply_overrides(kv: dict[str, str], sets: list[str]) -> dict[str, str]:
    out = dict(kv)
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        out[key] = value
    return out


def build_config(kv: dict[str, str]) -> PipelineConfig:
    """Typed PipelineConfig from raw strings, rejecting unknown keys."""
    unknown = [k for k in kv if k not in _KEYS]
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    sections: dict[str, dict] = {}
    top: dict = {}
    for key, raw in kv.items():
        fieldpath, parser = _KEYS[key]
        try:
            value = parser(raw)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        if len(fieldpath) == 1:
            top[fieldpath[0]] = value
        else:
            sections.setdefault(fieldpath[0], {})[fieldpath[1]] = value
    makers = {
        "preprocess": PreprocessConfig,
        "spectral": SpectralConfig,
        "harmonize": HarmonizeConfig,
        "select": SelectConfig,
        "cv": CvConfig,
        "eval": EvalConfig,
        "models": ModelsConfig,
        "synth": SynthConfig,
    }
    kwargs = dict(top)
    for name, maker in makers.items():
        if name in sections:
            try:
                kwargs[name] = maker(**sections[name])
            except ConfigError:
                raise
            except Exception as exc:
                raise ConfigError(f"bad {name} configuration: {exc}") from None
    try:
        return PipelineConfig(**kwargs)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"bad configuration: {exc}") from None


def load_config(path: str | Path | None, sets: list[str] | None = None, seed: int | None = None,
                threads: int | None = None) -> PipelineConfig:
    kv = parse_config_file(path) if path is not None else {}
    kv = apply_overrides(kv, sets or [])
    cfg = build_config(kv)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if threads is not None:
        cfg = replace(cfg, threads=threads)
    return cfg


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    return str(v)


def config_to_kv(cfg: PipelineConfig) -> dict[str, str]:
    """Canonical flat key=value view of the full configuration."""
    out: dict[str, str] = {}
    for key, (fieldpath, _) in _KEYS.items():
        obj = cfg
        for part in fieldpath[:-1]:
            obj = getattr(obj, part)
        out[key] = _fmt_value(getattr(obj, fieldpath[-1]))
    return out


def config_hash(cfg: PipelineConfig) -> str:
    """Hash of everything that affects numeric outputs (not outdir/threads)."""
    kv = config_to_kv(cfg)
    lines = [f"{k} = {kv[k]}" for k in sorted(kv) if k not in ("outdir", "threads")]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:16]
