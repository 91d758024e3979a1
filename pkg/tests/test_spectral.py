import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eegpd.errors import DataError, NumericalError
from eegpd.io import CANONICAL_CHANNELS, EpochArray
from eegpd.spectral import (
    BANDS,
    FEATURE_BANDS,
    Psd,
    band_features,
    dpss_tapers,
    feature_names,
    log_mean_features,
    multitaper_psd,
    subject_features,
)


def dense_slepian_eigh(n, nw):
    # Independent oracle: dense eigen-decomposition of the tridiagonal matrix.
    w = nw / n
    i = np.arange(n)
    a = np.zeros((n, n))
    a[i, i] = ((n - 1) / 2.0 - i) ** 2 * np.cos(2 * np.pi * w)
    off = np.arange(1, n) * (n - np.arange(1, n)) / 2.0
    a[np.arange(n - 1), np.arange(1, n)] = off
    a[np.arange(1, n), np.arange(n - 1)] = off
    vals, vecs = np.linalg.eigh(a)
    return vals, vecs


class TestDpss:
    def test_orthonormal_and_concentrated(self):
        ts = dpss_tapers(1250, 4.0, 7)
        gram = ts.tapers @ ts.tapers.T
        assert np.max(np.abs(gram - np.eye(7))) < 1e-8
        assert ts.eigenvalues[0] > 0.9999
        assert np.all(np.diff(ts.eigenvalues) < 0)
        assert np.all(ts.eigenvalues > 0) and np.all(ts.eigenvalues < 1)

    def test_matches_dense_eigh_oracle(self):
        n, nw, k = 256, 4.0, 7
        ts = dpss_tapers(n, nw, k)
        _, vecs = dense_slepian_eigh(n, nw)
        for j in range(k):
            oracle = vecs[:, n - 1 - j]
            dot = abs(float(oracle @ ts.tapers[j]))
            assert dot > 1 - 1e-10  # same sequence up to sign

    def test_sign_changes(self):
        ts = dpss_tapers(1250, 4.0, 7)
        for j, taper in enumerate(ts.tapers):
            v = taper[np.abs(taper) > 1e-8 * np.abs(taper).max()]
            changes = int(np.sum(np.sign(v[:-1]) * np.sign(v[1:]) < 0))
            assert changes == j

    def test_sign_convention(self):
        ts = dpss_tapers(500, 3.0, 5)
        for j, taper in enumerate(ts.tapers):
            if j % 2 == 0:
                assert taper.sum() > 0
            else:
                lead = np.flatnonzero(np.abs(taper) > 1e-7 * np.abs(taper).max())[0]
                assert taper[lead] > 0

    def test_k_out_of_range(self):
        with pytest.raises(NumericalError, match="outside"):
            dpss_tapers(100, 4.0, 8)
        with pytest.raises(NumericalError, match="outside"):
            dpss_tapers(100, 4.0, 0)

    @settings(max_examples=8, deadline=None)
    @given(n=st.sampled_from([128, 200, 500]), nw=st.sampled_from([2.5, 3.0, 4.0]))
    def test_orthonormality_grid(self, n, nw):
        k = int(2 * nw) - 1
        ts = dpss_tapers(n, nw, k)
        gram = ts.tapers @ ts.tapers.T
        assert np.max(np.abs(gram - np.eye(k))) < 1e-8
        assert np.all(np.diff(ts.eigenvalues) < 0)


class TestMultitaperPsd:
    def test_zero_signal(self):
        ts = dpss_tapers(1250, 4.0, 7)
        psd = multitaper_psd(np.zeros(1250), 250.0, ts)
        assert np.all(psd.power == 0)

    def test_white_noise_level(self):
        # flat-spectrum analytic oracle: one-sided density sigma^2 * 2/fs
        ts = dpss_tapers(1250, 4.0, 7)
        rng = np.random.default_rng(7)
        levels = []
        for _ in range(100):
            x = rng.standard_normal(1250)
            psd = multitaper_psd(x, 250.0, ts)
            band = (psd.freqs >= 1.0) & (psd.freqs <= 30.0)
            levels.append(psd.power[band].mean())
        assert abs(np.mean(levels) - 1.0 / 125.0) / (1.0 / 125.0) < 0.10

    def test_parseval_integral(self):
        ts = dpss_tapers(1250, 4.0, 7)
        rng = np.random.default_rng(3)
        ratios = []
        for _ in range(50):
            x = rng.standard_normal(1250)
            psd = multitaper_psd(x, 250.0, ts)
            integral = psd.power.sum() * (psd.freqs[1] - psd.freqs[0])
            ratios.append(integral / x.var())
        assert abs(np.mean(ratios) - 1.0) < 0.02

    def test_sinusoid_peak_location(self):
        ts = dpss_tapers(1250, 4.0, 7)
        t = np.arange(1250) / 250.0
        psd = multitaper_psd(np.sin(2 * np.pi * 10.0 * t), 250.0, ts)
        peak = psd.freqs[np.argmax(psd.power)]
        bandwidth = 4.0 / 5.0  # nw / T
        assert abs(peak - 10.0) <= bandwidth

    def test_length_mismatch(self):
        ts = dpss_tapers(100, 2.0, 3)
        with pytest.raises(DataError, match="does not match"):
            multitaper_psd(np.zeros(101), 100.0, ts)


def flat_psd(df=0.2, level=1.0, top=40.0):
    freqs = np.arange(0.0, top + df / 2, df)
    return Psd(freqs, np.full(freqs.size, level))


class TestBandFeatures:
    def test_flat_spectrum_values(self):
        bf = band_features(flat_psd())
        names = FEATURE_BANDS
        vals = dict(zip(names, bf))
        assert abs(vals["delta"] - 3.0 / 29.0) < 1e-12
        assert abs(vals["alpha"] - 5.0 / 29.0) < 1e-12
        assert abs(vals["beta"] - 17.0 / 29.0) < 1e-12
        assert abs(vals["alphatheta_ratio"] - 5.0 / 4.0) < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), df=st.sampled_from([0.1, 0.2, 0.25, 0.5]))
    def test_partitions(self, seed, df):
        rng = np.random.default_rng(seed)
        freqs = np.arange(0.0, 40.0, df)
        psd = Psd(freqs, rng.uniform(0.01, 2.0, freqs.size))
        bf = dict(zip(FEATURE_BANDS, band_features(psd)))
        assert abs(bf["delta"] + bf["theta"] + bf["alpha"] + bf["beta"] - 1.0) < 1e-9
        assert abs(bf["slowtheta"] + bf["prealpha"] - bf["theta"]) < 1e-9

    def test_zero_total_power(self):
        freqs = np.arange(0.0, 40.0, 0.2)
        power = np.zeros(freqs.size)
        power[0] = 1.0  # DC only, outside [1, 30)
        with pytest.raises(NumericalError, match="zero total power"):
            band_features(Psd(freqs, power))

    def test_band_definitions(self):
        spans = {b.name: (b.lo, b.hi) for b in BANDS}
        assert spans == {
            "delta": (1.0, 4.0), "theta": (4.0, 8.0), "slowtheta": (4.0, 5.5),
            "prealpha": (5.5, 8.0), "alpha": (8.0, 13.0), "beta": (13.0, 30.0),
        }


def epochs_with(signal_fn, n_epochs=2, fs=250.0, n=1250):
    t = np.arange(n) / fs
    data = np.stack([
        np.stack([signal_fn(e, c, t) for c in range(29)]) for e in range(n_epochs)
    ])
    return EpochArray(data, fs, CANONICAL_CHANNELS)


class TestSubjectFeatures:
    def test_203_named_outputs(self):
        rng = np.random.default_rng(0)
        ea = epochs_with(lambda e, c, t: rng.standard_normal(t.size))
        vec, names = subject_features(ea)
        assert vec.shape == (203,)
        assert len(names) == 203
        assert names == feature_names()
        # band-major ordering: first 29 are delta features in channel order
        assert all(n.startswith("delta_") for n in names[:29])
        assert names[:3] == ("delta_AF3", "delta_AF4", "delta_C3")
        assert all(n.startswith("alphatheta_ratio_") for n in names[-29:])

    def test_amplitude_scale_invariance_exact_for_pow2(self):
        # powers of two rescale every float exactly, so ratios are bit-identical
        rng = np.random.default_rng(1)
        base = rng.standard_normal((2, 29, 1250))
        v1, _ = subject_features(EpochArray(base, 250.0, CANONICAL_CHANNELS))
        v2, _ = subject_features(EpochArray(base * 32.0, 250.0, CANONICAL_CHANNELS))
        assert np.array_equal(v1, v2)

    def test_amplitude_scale_invariance_general(self):
        rng = np.random.default_rng(4)
        base = rng.standard_normal((2, 29, 1250))
        v1, _ = subject_features(EpochArray(base, 250.0, CANONICAL_CHANNELS))
        v2, _ = subject_features(EpochArray(base * 37.5, 250.0, CANONICAL_CHANNELS))
        assert np.max(np.abs(v1 - v2)) < 1e-12

    def test_mean_then_log(self):
        # two epochs with per-epoch values 0.2 and 0.4 average to ln(0.3)
        per_epoch = np.array([[0.2], [0.4]])
        out = log_mean_features(per_epoch, names=("alpha_C3",))
        assert np.allclose(out, np.log(0.3), rtol=0, atol=1e-15)

    def test_single_epoch_is_log_identity(self):
        per_epoch = np.array([[0.7, 0.1]])
        out = log_mean_features(per_epoch)
        assert np.allclose(out, np.log(per_epoch[0]))

    def test_nonpositive_mean_reports_name(self):
        with pytest.raises(NumericalError, match="alpha_C3"):
            log_mean_features(np.array([[0.0]]), names=("alpha_C3",))

    def test_channel_reorder(self):
        rng = np.random.default_rng(2)
        base = rng.standard_normal((1, 29, 1250))
        ea = EpochArray(base, 250.0, CANONICAL_CHANNELS)
        perm = rng.permutation(29)
        ea_shuffled = EpochArray(base[:, perm, :], 250.0, tuple(CANONICAL_CHANNELS[i] for i in perm))
        v1, _ = subject_features(ea)
        v2, _ = subject_features(ea_shuffled)
        assert np.array_equal(v1, v2)
