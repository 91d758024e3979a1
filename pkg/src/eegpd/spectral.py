"""Multitaper spectral estimation and log relative-band-power features.

Per epoch and channel, power spectral density is estimated with discrete
prolate spheroidal (Slepian) tapers; band powers relative to total 1-30 Hz
power are integrated on the FFT grid, averaged over epochs per subject, and
log-transformed into the 7-per-channel feature vector.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import DataError, NumericalError
from .io import CANONICAL_CHANNELS, EpochArray

TOTAL_RANGE = (1.0, 30.0)


@dataclass(frozen=True)
class BandDef:
    """Half-open frequency band [lo, hi)."""

    name: str
    lo: float
    hi: float

    def __post_init__(self):
        if not (1.0 <= self.lo < self.hi <= 30.0):
            raise NumericalError(f"band {self.name}: need 1 <= lo < hi <= 30, got [{self.lo}, {self.hi})")


BANDS = (
    BandDef("delta", 1.0, 4.0),
    BandDef("theta", 4.0, 8.0),
    BandDef("slowtheta", 4.0, 5.5),
    BandDef("prealpha", 5.5, 8.0),
    BandDef("alpha", 8.0, 13.0),
    BandDef("beta", 13.0, 30.0),
)

# Output order of the per-channel feature block.
FEATURE_BANDS = ("delta", "theta", "slowtheta", "prealpha", "alpha", "beta", "alphatheta_ratio")


@dataclass(frozen=True)
class TaperSet:
    """Orthonormal DPSS tapers with their spectral concentrations."""

    tapers: np.ndarray
    eigenvalues: np.ndarray
    nw: float

    def __post_init__(self):
        tapers = np.asarray(self.tapers, dtype=np.float64)
        eig = np.asarray(self.eigenvalues, dtype=np.float64)
        object.__setattr__(self, "tapers", tapers)
        object.__setattr__(self, "eigenvalues", eig)
        gram = tapers @ tapers.T
        if np.max(np.abs(gram - np.eye(tapers.shape[0]))) > 1e-8:
            raise NumericalError("taper set is not orthonormal")
        if np.any(np.diff(eig) >= 0):
            raise NumericalError("taper concentrations must be strictly decreasing")

    @property
    def k(self) -> int:
        return self.tapers.shape[0]

    @property
    def n(self) -> int:
        return self.tapers.shape[1]


def _slepian_tridiagonal(n: int, w: float):
    i = np.arange(n)
    diag = ((n - 1) / 2.0 - i) ** 2 * np.cos(2.0 * np.pi * w)
    off = np.arange(1, n) * (n - np.arange(1, n)) / 2.0
    return diag, off


def _concentrations(tapers: np.ndarray, w: float) -> np.ndarray:
    # lambda_i = v_i^T A v_i with A the sinc concentration kernel.
    n = tapers.shape[1]
    lags = np.arange(1, n)
    row = np.concatenate(([2.0 * w], np.sin(2.0 * np.pi * w * lags) / (np.pi * lags)))
    idx = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    a = row[idx]
    return np.einsum("kn,nm,km->k", tapers, a, tapers)


@functools.lru_cache(maxsize=32)
def dpss_tapers(n: int, nw: float, k: int) -> TaperSet:
    """Discrete prolate spheroidal sequences via the tridiagonal eigenproblem.

    Returns k tapers ordered by decreasing concentration. Sign convention:
    even-indexed tapers have positive mean, odd-indexed ones a positive
    leading lobe.
    """
    if k < 1 or k > int(np.floor(2 * nw)) - 1:
        raise NumericalError(f"taper count k={k} outside [1, floor(2*nw)-1] for nw={nw}")
    if n < 2 * k:
        raise NumericalError(f"need n >= 2k, got n={n}, k={k}")
    w = nw / n
    diag, off = _slepian_tridiagonal(n, w)
    _, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(n - k, n - 1))
    tapers = vecs.T[::-1].copy()  # descending concentration
    for j, taper in enumerate(tapers):
        if j % 2 == 0:
            if taper.sum() < 0:
                tapers[j] = -taper
        else:
            lead = np.flatnonzero(np.abs(taper) > 1e-7 * np.max(np.abs(taper)))[0]
            if taper[lead] < 0:
                tapers[j] = -taper
    eig = _concentrations(tapers, w)
    return TaperSet(tapers, eig, nw)


@dataclass(frozen=True)
class Psd:
    """One-sided power spectral density on a uniform frequency grid."""

    freqs: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=np.float64)
        power = np.asarray(self.power, dtype=np.float64)
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "power", power)
        if freqs.shape != power.shape or freqs.ndim != 1:
            raise NumericalError("freqs and power must be matching 1-d arrays")
        if np.any(np.diff(freqs) <= 0):
            raise NumericalError("frequency grid must be strictly increasing")
        if freqs[0] > TOTAL_RANGE[0] or freqs[-1] < TOTAL_RANGE[1]:
            raise NumericalError(
                f"PSD grid [{freqs[0]}, {freqs[-1]}] does not span [{TOTAL_RANGE[0]}, {TOTAL_RANGE[1]}] Hz"
            )
        if np.any(power < 0):
            raise NumericalError("PSD values must be nonnegative")


def _psd_matrix(x: np.ndarray, fs: float, ts: TaperSet) -> np.ndarray:
    """One-sided multitaper PSD for each row of x [..., n_samples]."""
    n = x.shape[-1]
    if n != ts.n:
        raise DataError(f"signal length {n} does not match taper length {ts.n}")
    tapered = x[..., None, :] * ts.tapers  # [..., k, n]
    spec = np.abs(np.fft.rfft(tapered, axis=-1)) ** 2
    psd = spec.mean(axis=-2) / fs  # unweighted taper average, two-sided density
    psd[..., 1:] *= 2.0
    if n % 2 == 0:
        psd[..., -1] /= 2.0
    return psd


def multitaper_psd(x: np.ndarray, fs: float, ts: TaperSet) -> Psd:
    """Unweighted-average multitaper PSD; integral over [0, fs/2] matches variance."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError(f"expected a 1-d signal, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise DataError("signal contains non-finite samples")
    freqs = np.fft.rfftfreq(x.shape[0], 1.0 / fs)
    return Psd(freqs, _psd_matrix(x, fs, ts))


def _band_masks(freqs: np.ndarray):
    total = (freqs >= TOTAL_RANGE[0]) & (freqs < TOTAL_RANGE[1])
    masks = {b.name: (freqs >= b.lo) & (freqs < b.hi) for b in BANDS}
    return total, masks


def band_features(psd: Psd) -> np.ndarray:
    """Relative band powers plus the alpha/theta ratio, in FEATURE_BANDS order."""
    return _band_features_matrix(psd.freqs, psd.power[None, :])[0]


def _band_features_matrix(freqs: np.ndarray, power: np.ndarray) -> np.ndarray:
    """Vectorized band features for power rows [n, n_freqs]."""
    df = freqs[1] - freqs[0]
    total_mask, masks = _band_masks(freqs)
    total = power[:, total_mask].sum(axis=1) * df
    if np.any(total <= 0):
        raise NumericalError("zero total power in the 1-30 Hz range")
    band_int = {name: power[:, m].sum(axis=1) * df for name, m in masks.items()}
    theta = band_int["theta"]
    if np.any(theta <= 0):
        raise NumericalError("zero theta power: alpha/theta ratio undefined")
    cols = [band_int[b.name] / total for b in BANDS]
    cols.append(band_int["alpha"] / theta)
    return np.stack(cols, axis=1)


def log_mean_features(per_epoch: np.ndarray, names=None) -> np.ndarray:
    """Average per-epoch feature values, then take the natural log.

    per_epoch has shape [n_epochs, ...]; raises if any averaged value is
    not strictly positive, naming the offending feature when names given.
    """
    mean = np.asarray(per_epoch, dtype=np.float64).mean(axis=0)
    if np.any(mean <= 0):
        flat = mean.reshape(-1)
        bad = int(np.flatnonzero(flat <= 0)[0])
        label = names[bad] if names is not None else f"index {bad}"
        raise NumericalError(f"non-positive averaged feature value for {label}; log undefined")
    return np.log(mean)


def feature_names(channels=CANONICAL_CHANNELS) -> tuple[str, ...]:
    """Band-major feature naming: <band>_<channel>."""
    return tuple(f"{band}_{ch}" for band in FEATURE_BANDS for ch in channels)


def subject_features(ea: EpochArray, nw: float = 4.0, k: int = 7) -> tuple[np.ndarray, tuple[str, ...]]:
    """The per-subject feature vector: 7 log mean relative band powers per channel.

    Per epoch and channel a multitaper PSD is reduced to the 6 relative band
    powers and the alpha/theta ratio; values are averaged over epochs and
    log-transformed. Output is band-major over the canonical channels.
    """
    ea = ea.to_canonical()
    if ea.n_epochs < 1:
        raise DataError("need at least one epoch")
    ts = dpss_tapers(ea.n_samples, float(nw), int(k))
    freqs = np.fft.rfftfreq(ea.n_samples, 1.0 / ea.fs)
    n_ch = len(ea.channels)
    per_epoch = np.empty((ea.n_epochs, n_ch, len(FEATURE_BANDS)))
    for e in range(ea.n_epochs):
        power = _psd_matrix(ea.data[e], ea.fs, ts)
        per_epoch[e] = _band_features_matrix(freqs, power)
    names = feature_names(ea.channels)
    # [epochs, channels, bands] -> band-major [epochs, bands*channels]
    stacked = per_epoch.transpose(0, 2, 1).reshape(ea.n_epochs, -1)
    return log_mean_features(stacked, names), names
