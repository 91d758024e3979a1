"""Synthetic multi-center EEG generator with planted class and center effects.

Each channel is a sum of four band-limited noise processes (delta, theta,
alpha, beta) plus white sensor noise. The class effect raises delta/theta
power and lowers alpha/beta power for PD subjects; center effects enter as
per-band log-power offsets (what harmonization models) and an optional
global gain (which relative band powers cancel - a built-in negative
control).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .io import CANONICAL_CHANNELS, EpochArray, SubjectRecord, write_epochs, write_manifest

# Baseline band variances before class/center modulation (eyes-closed-like,
# alpha dominant). Order: delta, theta, alpha, beta.
BASE_BAND_POWER = (1.2, 1.0, 1.5, 0.8)
GEN_BANDS = (("delta", 1.0, 4.0), ("theta", 4.0, 8.0), ("alpha", 8.0, 13.0), ("beta", 13.0, 30.0))

# Per-center band-shift signatures, scaled by shift_scale and cycled when
# there are more centers than patterns. Center 0 is the clean reference.
_SHIFT_PATTERNS = (
    (0.0, 0.0, 0.0, 0.0),
    (1.0, -1.0, 1.0, -1.0),
    (-1.0, 1.0, 1.0, -1.0),
    (1.0, 1.0, -1.0, -1.0),
    (-1.0, -1.0, 1.0, 1.0),
    (1.0, -1.0, -1.0, 1.0),
)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the generative model; all draws derive from seed."""

    n_centers: int = 4
    subjects_per_center_per_class: int = 10
    fs: float = 128.0
    epoch_seconds: float = 5.0
    epochs_per_subject: int = 8
    class_effect: float = 0.3
    center_location_shift: tuple | None = None  # per-center 4-tuples of log-power offsets
    center_scale: tuple | None = None           # per-center amplitude gains
    shift_scale: float = 0.8
    gain_spread: float = 0.0
    noise_sd: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.n_centers < 1 or self.subjects_per_center_per_class < 1 or self.epochs_per_subject < 1:
            raise ConfigError("synth counts must all be >= 1")
        if not 0.0 <= self.class_effect < 1.0:
            raise ConfigError(f"class_effect must be in [0, 1), got {self.class_effect}")
        if self.fs <= 60.0:
            raise ConfigError(f"synth fs must exceed 60 Hz to cover the 30 Hz band, got {self.fs}")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be nonnegative")

    def band_shifts(self) -> np.ndarray:
        """Per-center per-band additive log-power offsets, [n_centers, 4]."""
        if self.center_location_shift is not None:
            arr = np.asarray(self.center_location_shift, dtype=np.float64)
            if arr.shape != (self.n_centers, 4):
                raise ConfigError(f"center_location_shift must be [{self.n_centers}, 4], got {arr.shape}")
            return arr
        rows = [_SHIFT_PATTERNS[i % len(_SHIFT_PATTERNS)] for i in range(self.n_centers)]
        return self.shift_scale * np.asarray(rows)

    def gains(self) -> np.ndarray:
        if self.center_scale is not None:
            arr = np.asarray(self.center_scale, dtype=np.float64)
            if arr.shape != (self.n_centers,):
                raise ConfigError(f"center_scale must have {self.n_centers} entries, got {arr.shape}")
            if np.any(arr <= 0):
                raise ConfigError("center gains must be positive")
            return arr
        if self.n_centers == 1:
            return np.ones(1)
        lin = np.linspace(-1.0, 1.0, self.n_centers)
        return np.exp(self.gain_spread * lin)

    def center_names(self) -> list[str]:
        return [f"center{i:02d}" for i in range(self.n_centers)]

    def epoch_len(self) -> int:
        return int(round(self.fs * self.epoch_seconds))


def _band_noise(rng: np.random.Generator, n: int, fs: float, lo: float, hi: float) -> np.ndarray:
    """Unit-variance Gaussian noise exactly band-limited to [lo, hi)."""
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    mask = (freqs >= lo) & (freqs < hi)
    if not mask.any():
        raise DataError(f"no FFT bins inside [{lo}, {hi}) Hz for n={n}, fs={fs}")
    spec = np.zeros(freqs.size, dtype=np.complex128)
    m = int(mask.sum())
    spec[mask] = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    x = np.fft.irfft(spec, n=n)
    sd = x.std()
    return x / sd if sd > 0 else x


def _subject_rng(cfg: SynthConfig, center_idx: int, class_idx: int, subject_idx: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(center_idx, class_idx, subject_idx))
    return np.random.Generator(np.random.PCG64(ss))


def _continuous_signal(cfg: SynthConfig, rng: np.random.Generator, center_idx: int, diagnosis: str) -> np.ndarray:
    n = cfg.epochs_per_subject * cfg.epoch_len()
    shifts = cfg.band_shifts()[center_idx]
    gain = cfg.gains()[center_idx]
    e = cfg.class_effect
    class_mod = (1.0 + e, 1.0 + e, 1.0 - e, 1.0 - e) if diagnosis == "PD" else (1.0, 1.0, 1.0, 1.0)
    data = np.zeros((len(CANONICAL_CHANNELS), n))
    for c in range(len(CANONICAL_CHANNELS)):
        acc = np.zeros(n)
        for b, (_, lo, hi) in enumerate(GEN_BANDS):
            var = BASE_BAND_POWER[b] * class_mod[b] * np.exp(shifts[b])
            acc += np.sqrt(var) * _band_noise(rng, n, cfg.fs, lo, hi)
        if cfg.noise_sd > 0:
            acc += cfg.noise_sd * rng.standard_normal(n)
        data[c] = gain * acc
    return data


def synth_subject_epochs(
    cfg: SynthConfig,
    center: str,
    diagnosis: str,
    subject_seed: tuple[int, int, int],
    subject_id: str | None = None,
) -> tuple[EpochArray, SubjectRecord]:
    """Generate one subject: segmented epochs plus a metadata record.

    subject_seed is the (center_idx, class_idx, subject_idx) triple from
    which the subject's random stream derives; metadata (age, sex) is drawn
    independently of diagnosis.
    """
    center_idx, class_idx, subject_idx = subject_seed
    rng = _subject_rng(cfg, center_idx, class_idx, subject_idx)
    age = float(rng.uniform(45.0, 85.0))
    sex = "female" if rng.random() < 0.5 else "male"
    signal = _continuous_signal(cfg, rng, center_idx, diagnosis)
    epoch_len = cfg.epoch_len()
    data = signal.reshape(len(CANONICAL_CHANNELS), cfg.epochs_per_subject, epoch_len).transpose(1, 0, 2)
    ea = EpochArray(np.ascontiguousarray(data), cfg.fs, CANONICAL_CHANNELS)
    sid = subject_id or f"{center}_{diagnosis}_{subject_idx:03d}"
    rec = SubjectRecord(sid, center, age, sex, diagnosis)
    return ea, rec


def synth_dataset_arrays(cfg: SynthConfig) -> tuple[list[EpochArray], list[SubjectRecord]]:
    """All subjects of the balanced design, in deterministic order."""
    arrays = []
    records = []
    for ci, center in enumerate(cfg.center_names()):
        for cls_idx, dx in enumerate(("PD", "nonPD")):
            for j in range(cfg.subjects_per_center_per_class):
                ea, rec = synth_subject_epochs(cfg, center, dx, (ci, cls_idx, j))
                arrays.append(ea)
                records.append(rec)
    return arrays, records


def synth_multicenter_dataset(cfg: SynthConfig, outdir: str | Path) -> Path:
    """Write the balanced design to disk: epoch files plus a manifest.

    Recordings are stored continuously (one long epoch per file) so the
    preprocessing stage segments them itself. Returns the manifest path.
    """
    outdir = Path(outdir)
    epoch_dir = outdir / "epochs"
    epoch_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for ci, center in enumerate(cfg.center_names()):
        for cls_idx, dx in enumerate(("PD", "nonPD")):
            for j in range(cfg.subjects_per_center_per_class):
                ea, rec = synth_subject_epochs(cfg, center, dx, (ci, cls_idx, j))
                continuous = ea.data.transpose(1, 0, 2).reshape(1, len(ea.channels), -1)
                path = epoch_dir / f"{rec.subject_id}.eege"
                write_epochs(EpochArray(continuous, cfg.fs, ea.channels), path)
                records.append(SubjectRecord(
                    rec.subject_id, rec.center, rec.age, rec.sex, rec.diagnosis, path
                ))
    manifest = outdir / "manifest.csv"
    write_manifest(records, manifest, relative_to=outdir)
    return manifest
