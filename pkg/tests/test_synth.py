import numpy as np
import pytest

from eegpd.errors import ConfigError
from eegpd.evaluate import roc_auc
from eegpd.io import CANONICAL_CHANNELS, load_manifest, read_epochs
from eegpd.select import anova_f_scores
from eegpd.spectral import FEATURE_BANDS, feature_names, subject_features
from eegpd.synth import SynthConfig, synth_dataset_arrays, synth_multicenter_dataset, synth_subject_epochs

SMALL = dict(n_centers=2, subjects_per_center_per_class=3, fs=128.0, epochs_per_subject=4)


class TestConfigValidation:
    def test_zero_subjects_rejected(self):
        with pytest.raises(ConfigError, match=">= 1"):
            SynthConfig(subjects_per_center_per_class=0)

    def test_class_effect_range(self):
        with pytest.raises(ConfigError, match="class_effect"):
            SynthConfig(class_effect=1.0)

    def test_low_fs_rejected(self):
        with pytest.raises(ConfigError, match="60"):
            SynthConfig(fs=50.0)

    def test_explicit_shift_shape_checked(self):
        cfg = SynthConfig(n_centers=2, center_location_shift=((0.0,) * 4, (1.0,) * 4))
        assert cfg.band_shifts().shape == (2, 4)
        with pytest.raises(ConfigError, match="center_location_shift"):
            SynthConfig(n_centers=3, center_location_shift=((0.0,) * 4,)).band_shifts()

    def test_gains_positive(self):
        with pytest.raises(ConfigError, match="positive"):
            SynthConfig(n_centers=2, center_scale=(1.0, -1.0)).gains()


class TestSubjectGeneration:
    def test_shapes_and_channels(self):
        cfg = SynthConfig(**SMALL)
        ea, rec = synth_subject_epochs(cfg, "center00", "PD", (0, 0, 0))
        assert ea.data.shape == (4, 29, 640)
        assert ea.channels == CANONICAL_CHANNELS
        assert rec.diagnosis == "PD" and rec.center == "center00"

    def test_deterministic(self):
        cfg = SynthConfig(**SMALL, seed=9)
        ea1, rec1 = synth_subject_epochs(cfg, "center00", "PD", (0, 0, 1))
        ea2, rec2 = synth_subject_epochs(cfg, "center00", "PD", (0, 0, 1))
        assert np.array_equal(ea1.data, ea2.data)
        assert rec1 == rec2

    def test_metadata_independent_of_class(self):
        cfg = SynthConfig(**SMALL, seed=2)
        _, rec_pd = synth_subject_epochs(cfg, "center00", "PD", (0, 0, 0))
        _, rec_non = synth_subject_epochs(cfg, "center00", "nonPD", (0, 0, 0))
        assert rec_pd.age == rec_non.age and rec_pd.sex == rec_non.sex

    def test_gain_cancels_in_relative_features(self):
        base = SynthConfig(**SMALL, seed=4, class_effect=0.0, shift_scale=0.0, gain_spread=0.0)
        gained = SynthConfig(**SMALL, seed=4, class_effect=0.0, shift_scale=0.0,
                             center_scale=(1.0, 3.7))
        ea1, _ = synth_subject_epochs(base, "center01", "PD", (1, 0, 0))
        ea2, _ = synth_subject_epochs(gained, "center01", "PD", (1, 0, 0))
        v1, _ = subject_features(ea1)
        v2, _ = subject_features(ea2)
        assert np.max(np.abs(v1 - v2)) < 1e-9

    def test_class_effect_direction_on_alpha(self):
        cfg = SynthConfig(n_centers=1, subjects_per_center_per_class=8, fs=128.0,
                          epochs_per_subject=4, class_effect=0.5, shift_scale=0.0, seed=5)
        arrays, records = synth_dataset_arrays(cfg)
        names = feature_names()
        alpha_cols = [i for i, n in enumerate(names) if n.startswith("alpha_")]
        vals = np.stack([subject_features(ea)[0] for ea in arrays])
        y = np.array([1 if r.diagnosis == "PD" else 0 for r in records])
        alpha_pd = vals[y == 1][:, alpha_cols].mean()
        alpha_non = vals[y == 0][:, alpha_cols].mean()
        assert alpha_pd < alpha_non

    def test_zero_effect_exchangeable(self):
        cfg = SynthConfig(n_centers=1, subjects_per_center_per_class=50, fs=128.0,
                          epochs_per_subject=3, class_effect=0.0, shift_scale=0.0, seed=1)
        arrays, records = synth_dataset_arrays(cfg)
        names = feature_names()
        col = names.index("alpha_Cz")
        vals = np.array([subject_features(ea)[0][col] for ea in arrays])
        y = np.array([1 if r.diagnosis == "PD" else 0 for r in records])
        assert 0.4 <= roc_auc(y, vals) <= 0.6

    def test_class_effect_ranks_involved_features(self):
        # Monte Carlo: with a planted effect, alpha features must outrank noise
        hits = 0
        for seed in range(5):
            cfg = SynthConfig(n_centers=1, subjects_per_center_per_class=12, fs=128.0,
                              epochs_per_subject=4, class_effect=0.5, shift_scale=0.0, seed=100 + seed)
            arrays, records = synth_dataset_arrays(cfg)
            vals = np.stack([subject_features(ea)[0] for ea in arrays])
            y = np.array([1 if r.diagnosis == "PD" else 0 for r in records])
            scores = anova_f_scores(vals, y)
            names = feature_names()
            alpha_cols = [i for i, n in enumerate(names) if n.startswith("alpha_")]
            ratio_cols = [i for i, n in enumerate(names) if n.startswith("alphatheta_")]
            involved = np.median(scores[alpha_cols + ratio_cols])
            uninvolved = np.median(scores)
            if involved > uninvolved:
                hits += 1
        assert hits >= 4


class TestDatasetOnDisk:
    def test_manifest_and_file_counts(self, tmp_path):
        cfg = SynthConfig(n_centers=4, subjects_per_center_per_class=2, fs=128.0,
                          epochs_per_subject=2, seed=1)
        manifest = synth_multicenter_dataset(cfg, tmp_path)
        records = load_manifest(manifest)
        assert len(records) == 16
        files = sorted((tmp_path / "epochs").glob("*.eege"))
        assert len(files) == 16
        by_dx = {}
        for r in records:
            by_dx.setdefault((r.center, r.diagnosis), 0)
            by_dx[(r.center, r.diagnosis)] += 1
        assert set(by_dx.values()) == {2}

    def test_bitwise_deterministic_files(self, tmp_path):
        cfg = SynthConfig(**SMALL, seed=3)
        m1 = synth_multicenter_dataset(cfg, tmp_path / "a")
        m2 = synth_multicenter_dataset(cfg, tmp_path / "b")
        assert m1.read_text() == m2.read_text()
        for f1 in sorted((tmp_path / "a" / "epochs").glob("*.eege")):
            f2 = tmp_path / "b" / "epochs" / f1.name
            assert f1.read_bytes() == f2.read_bytes()

    def test_stored_continuously(self, tmp_path):
        cfg = SynthConfig(**SMALL, seed=5)
        manifest = synth_multicenter_dataset(cfg, tmp_path)
        rec = load_manifest(manifest)[0]
        ea = read_epochs(rec.epoch_path)
        assert ea.n_epochs == 1
        assert ea.n_samples == 4 * 640
