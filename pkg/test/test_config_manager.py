"""Test suite for ConfigManager and RunConfig."""

import json

import pytest

from src.attribution import IGConfig
from src.config_manager import DEFAULT_CONFIG, ConfigManager, parse_flat_config
from src.exceptions import ConfigError
from src.utils import derive_seed


class TestDefaults:
    """Test default resolution."""

    def test_defaults_match_module_defaults(self):
        """Test an empty config resolves to the library defaults."""
        cfg = ConfigManager().run_config()
        assert cfg.ig == IGConfig()
        assert cfg.explain.k_explain == 25
        assert cfg.retrieval.k_retrieve == 100
        assert cfg.retrieval.k_eval == 10
        assert cfg.backend.kind == "reference"
        assert cfg.seed == 42

    def test_seed_fan_out(self):
        """Test encoder and title seeds derive from the global seed."""
        cfg = ConfigManager(overrides=["run.seed=5"]).run_config()
        assert cfg.encoder_seed == derive_seed(5, "encoder")
        assert cfg.title_seed == derive_seed(5, "title-sampling")

    def test_explicit_backend_seed_wins(self):
        """Test backend.seed overrides the derived encoder seed."""
        cfg = ConfigManager(overrides=["backend.seed=9"]).run_config()
        assert cfg.encoder_seed == 9

    def test_defaults_not_mutated(self):
        """Test overrides never touch DEFAULT_CONFIG."""
        ConfigManager(overrides=["ig.steps=8"])
        assert DEFAULT_CONFIG["ig"]["steps"] == 128


class TestFileFormats:
    """Test flat and JSON config files."""

    def test_flat_file(self, tmp_path):
        """Test section.key = value lines with comments and coercion."""
        path = tmp_path / "run.conf"
        path.write_text("# comment\n\nig.steps = 64\nig.rule = gauss-legendre\n"
                        "explain.separate_signs = yes\nbackend.params_path = none\n", encoding="utf-8")
        cfg = ConfigManager(path).run_config()
        assert cfg.ig.steps == 64
        assert cfg.ig.rule == "gauss-legendre"
        assert cfg.explain.separate_signs is True
        assert cfg.backend.params_path is None

    def test_json_file(self, tmp_path):
        """Test nested JSON layout."""
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"retrieval": {"k_eval": 5}, "run": {"threads": 2}}), encoding="utf-8")
        cfg = ConfigManager(path).run_config()
        assert cfg.retrieval.k_eval == 5
        assert cfg.threads == 2

    def test_unknown_key(self, tmp_path):
        """Test unknown keys raise ConfigError."""
        path = tmp_path / "run.conf"
        path.write_text("ig.stepz = 3\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="Unknown config key"):
            ConfigManager(path)

    def test_line_without_equals(self):
        """Test a malformed line names its position."""
        with pytest.raises(ConfigError, match="run.conf:2"):
            parse_flat_config("ig.steps = 3\nnonsense\n", "run.conf")

    def test_missing_file(self, tmp_path):
        """Test a missing config path raises."""
        with pytest.raises(ConfigError, match="not found"):
            ConfigManager(tmp_path / "absent.conf")

    def test_save_round_trip(self, tmp_path):
        """Test save_config output loads back to the same values."""
        mgr = ConfigManager(overrides=["ig.steps=16", "explain.separate_signs=true", "data.corpus=/x/c.jsonl"])
        path = tmp_path / "saved.conf"
        mgr.save_config(path)
        assert ConfigManager(path).config == mgr.config


class TestOverrides:
    """Test --set style overrides."""

    def test_last_writer_wins(self):
        """Test repeated keys keep the last value."""
        mgr = ConfigManager(overrides=["ig.steps=16", "ig.steps=32"])
        assert mgr.get("ig.steps") == 32

    def test_override_beats_file(self, tmp_path):
        """Test overrides apply after the file."""
        path = tmp_path / "run.conf"
        path.write_text("ig.steps = 64\n", encoding="utf-8")
        assert ConfigManager(path, ["ig.steps=8"]).run_config().ig.steps == 8

    @pytest.mark.parametrize("override", ["ig.steps", "ig.steps=abc", "nosection=1", "run.threads=1.5"])
    def test_bad_override(self, override):
        """Test malformed or mistyped overrides raise ConfigError."""
        with pytest.raises(ConfigError):
            ConfigManager(overrides=[override])

    @pytest.mark.parametrize("override", ["ig.rule=simpson", "ig.steps=0", "explain.k_explain=0",
                                          "backend.kind=remote", "backend.max_seq_len=2"])
    def test_invalid_values_rejected_at_resolution(self, override):
        """Test out-of-range values fail when resolving RunConfig."""
        with pytest.raises(ConfigError):
            ConfigManager(overrides=[override]).run_config()

    def test_as_dict_echo(self):
        """Test the echoed config is JSON-serializable and reflects overrides."""
        echo = ConfigManager(overrides=["ig.steps=16"]).run_config().as_dict()
        assert json.loads(json.dumps(echo))["ig"]["steps"] == 16
