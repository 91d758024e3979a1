"""Subject/epoch/feature data model and the on-disk formats.

Three artifacts live on disk: the subject manifest (CSV), per-subject epoch
stacks (EEGE v1 binary), and feature tables (CSV with metadata columns in
front). Readers are pure and validate everything up front; values are
immutable after construction.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

# The 29 channels shared by all centers, in canonical order. Feature names
# and feature-matrix columns are always aligned to this ordering.
CANONICAL_CHANNELS = (
    "AF3", "AF4", "C3", "C4", "CP1", "CP2", "CP5", "CP6", "Cz",
    "F3", "F4", "F7", "F8", "FC1", "FC2", "FC5", "FC6", "Fp1", "Fp2",
    "Fz", "O1", "O2", "Oz", "P3", "P4", "P7", "P8", "T7", "T8",
)

SEXES = ("male", "female")
SEX_FROM_CODE = {"M": "male", "F": "female"}
SEX_TO_CODE = {"male": "M", "female": "F"}
DIAGNOSES = ("PD", "nonPD")

MANIFEST_HEADER = ("subject_id", "center", "age", "sex", "diagnosis", "epoch_path")
METADATA_COLUMNS = ("subject_id", "center", "age", "sex", "diagnosis")

EEGE_MAGIC = b"EEGE"
EEGE_VERSION = 1
_EEGE_HEADER = struct.Struct("<4sHHIId")


@dataclass(frozen=True)
class SubjectRecord:
    """One manifest row: subject identity plus the metadata used downstream."""

    subject_id: str
    center: str
    age: float
    sex: str
    diagnosis: str
    epoch_path: Path | None = None

    def __post_init__(self):
        if not self.subject_id:
            raise DataError("subject_id must be nonempty")
        if not self.center:
            raise DataError(f"subject {self.subject_id!r}: center must be nonempty")
        if not math.isfinite(self.age) or self.age < 0:
            raise DataError(f"subject {self.subject_id!r}: age must be finite and >= 0, got {self.age}")
        if self.sex not in SEXES:
            raise DataError(f"subject {self.subject_id!r}: unknown sex {self.sex!r}")
        if self.diagnosis not in DIAGNOSES:
            raise DataError(f"subject {self.subject_id!r}: unknown diagnosis {self.diagnosis!r}")

    def without_path(self) -> "SubjectRecord":
        return replace(self, epoch_path=None)


@dataclass(frozen=True)
class EpochArray:
    """Stack of fixed-length multi-channel epochs for one subject.

    data has shape [n_epochs, n_channels, n_samples] in microvolts and is
    held as float64 in memory regardless of the on-disk sample type.
    """

    data: np.ndarray
    fs: float
    channels: tuple[str, ...]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channels", tuple(self.channels))
        if data.ndim != 3:
            raise DataError(f"epoch data must be 3-d [epochs, channels, samples], got shape {data.shape}")
        if not self.fs > 0:
            raise DataError(f"sampling rate must be positive, got {self.fs}")
        if data.shape[1] != len(self.channels):
            raise DataError(
                f"channel count mismatch: data has {data.shape[1]}, names list {len(self.channels)}"
            )
        if len(set(self.channels)) != len(self.channels):
            raise DataError("channel names must be unique")
        if data.size and not np.isfinite(data).all():
            raise DataError("epoch data contains non-finite samples")

    @property
    def n_epochs(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]

    def take_epochs(self, index) -> "EpochArray":
        return EpochArray(self.data[index], self.fs, self.channels)

    def to_canonical(self) -> "EpochArray":
        """Reorder channels to canonical order, dropping extras.

        Rejects arrays missing any canonical channel so that feature columns
        line up across subjects and centers.
        """
        missing = [ch for ch in CANONICAL_CHANNELS if ch not in self.channels]
        if missing:
            raise DataError(f"missing canonical channels: {', '.join(missing)}")
        if self.channels == CANONICAL_CHANNELS:
            return self
        idx = [self.channels.index(ch) for ch in CANONICAL_CHANNELS]
        return EpochArray(self.data[:, idx, :], self.fs, CANONICAL_CHANNELS)


@dataclass(frozen=True)
class FeatureMatrix:
    """Subjects x named features, with per-subject metadata carried along."""

    values: np.ndarray
    feature_names: tuple[str, ...]
    subjects: tuple[SubjectRecord, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "subjects", tuple(self.subjects))
        if values.ndim != 2:
            raise DataError(f"feature values must be 2-d, got shape {values.shape}")
        if values.shape != (len(self.subjects), len(self.feature_names)):
            raise DataError(
                f"shape mismatch: values {values.shape}, "
                f"{len(self.subjects)} subjects x {len(self.feature_names)} features"
            )
        if len(set(self.feature_names)) != len(self.feature_names):
            raise DataError("feature names must be unique")
        if values.size and not np.isfinite(values).all():
            raise DataError("feature values contain non-finite entries")

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def labels(self) -> np.ndarray:
        """Binary diagnosis vector with PD encoded as 1."""
        return np.array([1 if s.diagnosis == "PD" else 0 for s in self.subjects], dtype=np.int64)

    def centers(self) -> list[str]:
        return [s.center for s in self.subjects]

    def strata(self) -> list[tuple[str, str]]:
        return [(s.center, s.diagnosis) for s in self.subjects]

    def subject_ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]

    def take_subjects(self, rows: Sequence[int]) -> "FeatureMatrix":
        rows = list(rows)
        return FeatureMatrix(self.values[rows], self.feature_names, tuple(self.subjects[i] for i in rows))

    def take_features(self, keep: np.ndarray) -> "FeatureMatrix":
        keep = np.asarray(keep)
        if keep.dtype == bool:
            idx = np.flatnonzero(keep)
        else:
            idx = keep
        names = tuple(self.feature_names[i] for i in idx)
        return FeatureMatrix(self.values[:, idx], names, self.subjects)


def load_manifest(path: str | Path) -> list[SubjectRecord]:
    """Parse a subject manifest CSV, validating every row.

    Either returns a fully valid record list or raises DataError with the
    offending line number; never a partially valid list.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    records: list[SubjectRecord] = []
    seen: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty manifest") from None
        if tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise DataError(f"{path}: bad header {header!r}, expected {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise DataError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
            sid, center, age_s, sex_code, dx, epoch_path = (c.strip() for c in row)
            if sid in seen:
                raise DataError(f"{path}:{lineno}: duplicate subject_id {sid!r}")
            try:
                age = float(age_s)
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed age {age_s!r}") from None
            if sex_code not in SEX_FROM_CODE:
                raise DataError(f"{path}:{lineno}: unknown sex code {sex_code!r} (expected M or F)")
            if dx not in DIAGNOSES:
                raise DataError(f"{path}:{lineno}: unknown diagnosis {dx!r} (expected PD or nonPD)")
            try:
                rec = SubjectRecord(
                    subject_id=sid,
                    center=center,
                    age=age,
                    sex=SEX_FROM_CODE[sex_code],
                    diagnosis=dx,
                    epoch_path=path.parent / epoch_path if epoch_path else None,
                )
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            seen.add(sid)
            records.append(rec)
    return records


def write_manifest(records: Iterable[SubjectRecord], path: str | Path, relative_to: Path | None = None) -> None:
    path = Path(path)
    base = relative_to if relative_to is not None else path.parent
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for rec in records:
            ep = ""
            if rec.epoch_path is not None:
                try:
                    ep = str(Path(rec.epoch_path).relative_to(base))
                except ValueError:
                    ep = str(rec.epoch_path)
            writer.writerow(
                [rec.subject_id, rec.center, repr(float(rec.age)), SEX_TO_CODE[rec.sex], rec.diagnosis, ep]
            )


def write_epochs(ea: EpochArray, path: str | Path) -> None:
    """Write an epoch stack in EEGE v1 (little-endian, f32 samples)."""
    path = Path(path)
    n_epochs, n_channels, n_samples = ea.data.shape
    with path.open("wb") as fh:
        fh.write(_EEGE_HEADER.pack(EEGE_MAGIC, EEGE_VERSION, n_channels, n_epochs, n_samples, float(ea.fs)))
        for name in ea.channels:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(ea.data, dtype="<f4").tobytes())


def read_epochs(path: str | Path) -> EpochArray:
    """Read an EEGE v1 file; lossless inverse of write_epochs."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"epoch file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < _EEGE_HEADER.size:
        raise DataError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, n_channels, n_epochs, n_samples, fs = _EEGE_HEADER.unpack_from(blob, 0)
    if magic != EEGE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != EEGE_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    off = _EEGE_HEADER.size
    channels = []
    for i in range(n_channels):
        if off + 2 > len(blob):
            raise DataError(f"{path}: truncated channel table")
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        if off + nlen > len(blob):
            raise DataError(f"{path}: truncated channel name {i}")
        channels.append(blob[off : off + nlen].decode("utf-8"))
        off += nlen
    expected = n_epochs * n_channels * n_samples * 4
    payload = blob[off:]
    if len(payload) != expected:
        raise DataError(
            f"{path}: payload size mismatch: header implies {expected} bytes, found {len(payload)}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    data = flat.reshape(n_epochs, n_channels, n_samples).astype(np.float64)
    if data.size and not np.isfinite(data).all():
        raise DataError(f"{path}: non-finite sample in payload")
    return EpochArray(data, fs, tuple(channels))


def write_features_csv(fm: FeatureMatrix, path: str | Path) -> None:
    """Write the feature table; metadata columns precede feature columns."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(METADATA_COLUMNS) + list(fm.feature_names))
        for rec, row in zip(fm.subjects, fm.values):
            meta = [rec.subject_id, rec.center, repr(float(rec.age)), SEX_TO_CODE[rec.sex], rec.diagnosis]
            writer.writerow(meta + [repr(float(v)) for v in row])


def read_features_csv(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"feature CSV not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        n_meta = len(METADATA_COLUMNS)
        if tuple(header[:n_meta]) != METADATA_COLUMNS:
            raise DataError(f"{path}: bad metadata columns {header[:n_meta]!r}")
        feature_names = tuple(header[n_meta:])
        subjects: list[SubjectRecord] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            sid, center, age_s, sex_code, dx = row[:n_meta]
            if sex_code not in SEX_FROM_CODE:
                raise DataError(f"{path}:{lineno}: unknown sex code {sex_code!r}")
            try:
                rec = SubjectRecord(sid, center, float(age_s), SEX_FROM_CODE[sex_code], dx)
            except (ValueError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            vals = []
            for col, cell in enumerate(row[n_meta:], start=n_meta):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: non-numeric cell at column {col} ({header[col]!r}): {cell!r}"
                    ) from None
            subjects.append(rec)
            rows.append(vals)
    values = np.array(rows, dtype=np.float64) if rows else np.empty((0, len(feature_names)))
    return FeatureMatrix(values, feature_names, tuple(subjects))
