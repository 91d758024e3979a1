import pytest

from eegpd.config import (
    PipelineConfig,
    apply_overrides,
    build_config,
    config_hash,
    config_to_kv,
    load_config,
    parse_config_file,
)
from eegpd.errors import ConfigError


def write_cfg(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


class TestParsing:
    def test_basic_file(self, tmp_path):
        path = write_cfg(tmp_path, """
            # comment line
            seed = 42
            preprocess.highpass_hz = 2.0   # trailing comment
            harmonize.enabled = false
            models.enabled = logreg, knn
            models.knn.k = 3, 5
        """)
        cfg = load_config(path)
        assert cfg.seed == 42
        assert cfg.preprocess.highpass_hz == 2.0
        assert cfg.harmonize.enabled is False
        assert cfg.models.enabled == ("logreg", "knn")
        assert cfg.models.knn_k == (3, 5)

    def test_unknown_key_rejected(self, tmp_path):
        path = write_cfg(tmp_path, "spectral.window = hann\n")
        with pytest.raises(ConfigError, match="unknown config keys: spectral.window"):
            load_config(path)

    def test_bad_value_reported(self, tmp_path):
        path = write_cfg(tmp_path, "spectral.k = seven\n")
        with pytest.raises(ConfigError, match="bad value for spectral.k"):
            load_config(path)

    def test_bad_bool(self, tmp_path):
        path = write_cfg(tmp_path, "harmonize.eb = maybe\n")
        with pytest.raises(ConfigError, match="boolean"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config_file(tmp_path / "nope.cfg")

    def test_line_without_equals(self, tmp_path):
        path = write_cfg(tmp_path, "seed 42\n")
        with pytest.raises(ConfigError, match="key = value"):
            load_config(path)

    def test_defaults_without_file(self):
        cfg = load_config(None)
        assert isinstance(cfg, PipelineConfig)
        assert cfg.cv.outer_folds == 5
        assert cfg.preprocess.lowpass_hz == 30.0
        assert cfg.select.method == "anova_f"

    def test_lambda_key_maps(self, tmp_path):
        path = write_cfg(tmp_path, "select.lambda = 0.25\n")
        cfg = load_config(path)
        assert cfg.select.lambda_ == 0.25


class TestOverrides:
    def test_set_overrides_file(self, tmp_path):
        path = write_cfg(tmp_path, "seed = 1\nspectral.k = 7\n")
        cfg = load_config(path, sets=["spectral.k=5", "cv.outer_folds=3"])
        assert cfg.spectral.k == 5
        assert cfg.cv.outer_folds == 3

    def test_seed_flag_wins(self, tmp_path):
        path = write_cfg(tmp_path, "seed = 1\n")
        cfg = load_config(path, seed=99)
        assert cfg.seed == 99

    def test_bad_set_syntax(self):
        with pytest.raises(ConfigError, match="--set expects"):
            apply_overrides({}, ["seed"])

    def test_fit_on_validated(self):
        with pytest.raises(ConfigError, match="fit_on"):
            build_config({"harmonize.fit_on": "test"})


class TestHashing:
    def test_hash_ignores_outdir_and_threads(self):
        c1 = build_config({"seed": "7", "outdir": "a", "threads": "1"})
        c2 = build_config({"seed": "7", "outdir": "b", "threads": "8"})
        assert config_hash(c1) == config_hash(c2)

    def test_hash_sees_numeric_keys(self):
        c1 = build_config({"seed": "7"})
        c2 = build_config({"seed": "8"})
        assert config_hash(c1) != config_hash(c2)

    def test_kv_covers_every_key(self):
        cfg = load_config(None)
        kv = config_to_kv(cfg)
        assert "select.lambda" in kv
        assert kv["preprocess.epoch_seconds"] == "5.0"
        rebuilt = build_config(kv)
        assert config_hash(rebuilt) == config_hash(cfg)
