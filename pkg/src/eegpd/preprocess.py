"""Band-limiting, epoch segmentation, statistical epoch rejection, truncation.

Continuous multi-channel signals are high-passed at 1 Hz and low-passed at
30 Hz with linear-phase windowed-sinc FIR filters, cut into 5-second epochs,
screened for artifact-like epochs by robust z-scores of per-epoch statistics,
and finally truncated to a common epoch count within each dataset.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.signal import fftconvolve

from .errors import DataError, NumericalError
from .io import EpochArray

# Hamming-window design: default transition bandwidths in Hz.
HIGHPASS_TRANSITION_HZ = 1.0
LOWPASS_TRANSITION_HZ = 7.5
_PASSBAND_RIPPLE = 0.01
_STOPBAND_LEVEL = 0.01
_HAMMING_TRANSITION_FACTOR = 3.3


@dataclass(frozen=True)
class FirFilter:
    """Linear-phase FIR filter: symmetric taps plus its design parameters."""

    taps: np.ndarray
    kind: str
    cutoff: float
    fs: float

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        object.__setattr__(self, "taps", taps)
        if taps.ndim != 1 or taps.size % 2 == 0:
            raise NumericalError(f"FIR taps must be a 1-d odd-length vector, got shape {taps.shape}")
        if not np.allclose(taps, taps[::-1], rtol=0.0, atol=1e-12):
            raise NumericalError("FIR taps are not symmetric (linear phase violated)")

    @property
    def group_delay(self) -> int:
        return (len(self.taps) - 1) // 2

    def response_at(self, freq_hz: float) -> float:
        """Amplitude response |H(f)| evaluated directly from the taps."""
        n = np.arange(len(self.taps))
        return float(np.abs(np.sum(self.taps * np.exp(-2j * np.pi * freq_hz * n / self.fs))))


def _windowed_sinc(length: int, cutoff: float, fs: float) -> np.ndarray:
    # Hamming-windowed sinc lowpass prototype, normalized to exact unit DC gain.
    m = (length - 1) / 2.0
    n = np.arange(length) - m
    h = np.sinc(2.0 * cutoff / fs * n) * np.hamming(length)
    return h / h.sum()


def _meets_spec(taps: np.ndarray, kind: str, cutoff: float, transition: float, fs: float) -> bool:
    n_fft = max(8192, 4 * len(taps))
    resp = np.abs(np.fft.rfft(taps, n_fft))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / fs)
    if kind == "highpass":
        pass_mask = freqs >= cutoff + transition / 2
        stop_mask = freqs <= cutoff - transition / 2
    else:
        pass_mask = freqs <= cutoff - transition / 2
        stop_mask = freqs >= cutoff + transition / 2
    if not pass_mask.any() or not stop_mask.any():
        return False
    pass_ok = np.max(np.abs(resp[pass_mask] - 1.0)) < _PASSBAND_RIPPLE
    stop_ok = np.max(resp[stop_mask]) < _STOPBAND_LEVEL
    return pass_ok and stop_ok


@functools.lru_cache(maxsize=64)
def design_fir(kind: str, cutoff: float, fs: float, transition: float | None = None) -> FirFilter:
    """Design a Hamming-windowed-sinc FIR filter.

    Length starts at the classic 3.3*fs/transition estimate and is adjusted
    to the smallest odd length whose measured response meets the passband
    ripple and stopband specs.
    """
    if kind not in ("highpass", "lowpass"):
        raise NumericalError(f"unknown filter kind {kind!r}")
    if not fs > 2 * cutoff:
        raise NumericalError(f"need fs > 2*cutoff, got fs={fs}, cutoff={cutoff}")
    if transition is None:
        transition = HIGHPASS_TRANSITION_HZ if kind == "highpass" else LOWPASS_TRANSITION_HZ

    def make(length: int) -> np.ndarray:
        lp = _windowed_sinc(length, cutoff, fs)
        if kind == "lowpass":
            return lp
        hp = -lp
        hp[(length - 1) // 2] += 1.0  # spectral inversion; DC gain exactly 0
        return hp

    length = int(np.ceil(_HAMMING_TRANSITION_FACTOR * fs / transition))
    length += 1 - length % 2
    length = max(length, 3)
    while not _meets_spec(make(length), kind, cutoff, transition, fs):
        length += 2
        if length > 100 * fs:
            raise NumericalError(f"unable to meet FIR spec for {kind} at {cutoff} Hz, fs={fs}")
    while length > 3 and _meets_spec(make(length - 2), kind, cutoff, transition, fs):
        length -= 2
    return FirFilter(make(length), kind, cutoff, fs)


def fir_filter(
    signal: np.ndarray, kind: str, cutoff: float, fs: float, transition: float | None = None
) -> np.ndarray:
    """Apply a zero-lag FIR filter to [n_channels, n_samples] (or 1-d) data.

    Group delay is compensated by reflect-padding both ends and taking the
    valid part of the convolution, so output aligns sample-for-sample with
    the input.
    """
    x = np.asarray(signal, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2:
        raise DataError(f"signal must be 1-d or 2-d, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise DataError("signal contains non-finite samples")
    filt = design_fir(kind, float(cutoff), float(fs), transition)
    pad = filt.group_delay
    if x.shape[1] <= len(filt.taps):
        raise DataError(
            f"signal length {x.shape[1]} is not longer than the {len(filt.taps)}-tap filter"
        )
    padded = np.pad(x, ((0, 0), (pad, pad)), mode="reflect")
    out = fftconvolve(padded, filt.taps[None, :], mode="valid", axes=1)
    return out[0] if squeeze else out


def average_rereference(signal: np.ndarray) -> np.ndarray:
    """Subtract the instantaneous mean across channels (plain average reref)."""
    x = np.asarray(signal, dtype=np.float64)
    return x - x.mean(axis=0, keepdims=True)


def segment_epochs(
    signal: np.ndarray, fs: float, epoch_seconds: float = 5.0, channels=None
) -> EpochArray:
    """Cut a continuous [n_channels, n_samples] signal into consecutive epochs.

    The trailing remainder shorter than one epoch is discarded.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"signal must be 2-d [channels, samples], got shape {x.shape}")
    raw_len = fs * epoch_seconds
    epoch_len = int(round(raw_len))
    if abs(raw_len - epoch_len) > 0.5:
        raise DataError(f"fs*epoch_seconds = {raw_len} is not within 0.5 samples of an integer")
    if epoch_len < 1:
        raise DataError("epoch length must be at least one sample")
    n_epochs = x.shape[1] // epoch_len
    if n_epochs < 1:
        raise DataError(f"signal of {x.shape[1]} samples is shorter than one {epoch_len}-sample epoch")
    if channels is None:
        channels = tuple(f"ch{i:02d}" for i in range(x.shape[0]))
    used = x[:, : n_epochs * epoch_len]
    data = used.reshape(x.shape[0], n_epochs, epoch_len).transpose(1, 0, 2)
    return EpochArray(np.ascontiguousarray(data), fs, tuple(channels))


@dataclass(frozen=True)
class EpochStats:
    """Per-epoch summary statistics used by the rejection rule."""

    ptp_amplitude: float
    total_power: float
    trend_slope: float
    kurtosis: float
    joint_prob: float


def _channel_histograms(ea: EpochArray, bins: int = 20):
    # Per-channel empirical density over the whole recording.
    flat = ea.data.transpose(1, 0, 2).reshape(ea.data.shape[1], -1)
    hists = []
    for ch in flat:
        lo, hi = ch.min(), ch.max()
        if hi <= lo:
            hists.append(None)  # constant channel: probability mass 1
            continue
        counts, edges = np.histogram(ch, bins=bins, range=(lo, hi))
        density = counts / (ch.size * (edges[1] - edges[0]))
        hists.append((density, edges))
    return hists


def epoch_stats(ea: EpochArray) -> list[EpochStats]:
    """Compute the five rejection statistics for each epoch.

    Peak-to-peak, power, |trend slope| and kurtosis are aggregated as the
    max over channels; joint probability as the mean over channels.
    """
    n_epochs, n_channels, n_samples = ea.data.shape
    t = np.arange(n_samples, dtype=np.float64)
    t_c = t - t.mean()
    denom = float(np.sum(t_c**2))
    hists = _channel_histograms(ea)

    out = []
    for e in range(n_epochs):
        x = ea.data[e]
        ptp = float(np.max(x.max(axis=1) - x.min(axis=1)))
        power = float(np.max(np.mean(x**2, axis=1)))
        slopes = (x - x.mean(axis=1, keepdims=True)) @ t_c / denom
        slope = float(np.max(np.abs(slopes)))
        xc = x - x.mean(axis=1, keepdims=True)
        m2 = np.mean(xc**2, axis=1)
        m4 = np.mean(xc**4, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            kurt_ch = np.where(m2 > 0, m4 / np.maximum(m2, 1e-300) ** 2 - 3.0, 0.0)
        kurt = float(np.max(kurt_ch))
        nlp = np.zeros(n_channels)
        for c, hist in enumerate(hists):
            if hist is None:
                continue
            density, edges = hist
            idx = np.clip(np.searchsorted(edges, x[c], side="right") - 1, 0, len(density) - 1)
            nlp[c] = float(np.mean(-np.log(np.maximum(density[idx], 1e-300))))
        out.append(EpochStats(ptp, power, slope, kurt, float(np.mean(nlp))))
    return out


def robust_z(values: np.ndarray) -> np.ndarray | None:
    """Median/MAD z-scores; None when MAD is zero (criterion skipped)."""
    v = np.asarray(values, dtype=np.float64)
    med = np.median(v)
    mad = np.median(np.abs(v - med))
    if mad == 0:
        return None
    return (v - med) / (1.4826 * mad)


def reject_epochs(ea: EpochArray, z_threshold: float = 3.0) -> np.ndarray:
    """Keep-mask over epochs: reject if any statistic's |robust z| exceeds z_threshold.

    Statistics whose MAD is zero are skipped, so fully homogeneous epoch sets
    are kept in full.
    """
    if ea.n_epochs < 3:
        raise DataError(f"epoch rejection needs at least 3 epochs, got {ea.n_epochs}")
    stats = epoch_stats(ea)
    keep = np.ones(ea.n_epochs, dtype=bool)
    for name in ("ptp_amplitude", "total_power", "trend_slope", "kurtosis", "joint_prob"):
        z = robust_z(np.array([getattr(s, name) for s in stats]))
        if z is None:
            continue
        keep &= np.abs(z) <= z_threshold
    return keep


def truncate_common(
    subject_epoch_counts: Mapping[str, int], per_dataset: Mapping[str, str]
) -> dict[str, int]:
    """Per-dataset common epoch count: every subject keeps its group's minimum."""
    groups: dict[str, list[str]] = {}
    for subject, count in subject_epoch_counts.items():
        if count < 1:
            raise DataError(f"subject {subject!r} has no epochs")
        if subject not in per_dataset:
            raise DataError(f"subject {subject!r} missing from dataset grouping")
        groups.setdefault(per_dataset[subject], []).append(subject)
    out: dict[str, int] = {}
    for dataset, members in groups.items():
        if not members:
            raise DataError(f"dataset {dataset!r} has no subjects")
        n_keep = min(subject_epoch_counts[s] for s in members)
        for s in members:
            out[s] = n_keep
    return out
