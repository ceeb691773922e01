"""Tests for environment settings and run config loading."""

from pathlib import Path

import pytest
from pydantic import ValidationError

from src.rararl.errors import ConfigError
from src.rararl.trainer import Variant
from src.utils.config import (
    RunConfig,
    Settings,
    apply_overrides,
    config_digest,
    load_run_config,
    parse_run_config,
)

DEFAULT_CONFIG = Path(__file__).parent.parent / "config" / "speedway.toml"


def diagnostics_for(text: str):
    with pytest.raises(ConfigError) as excinfo:
        parse_run_config(text, "exp.toml")
    return excinfo.value.diagnostics


class TestRunConfig:
    def test_shipped_config_loads(self):
        cfg = load_run_config(DEFAULT_CONFIG)
        assert cfg.train.variant is Variant.BSDQN_ADV_RISKAVERSE
        assert cfg.train.schedule.xi == 55_000
        assert cfg.track.r_cat == -2.5
        assert cfg.track.track_length == pytest.approx(2 * 150.0 + 2 * 3.141592653589793 * 40.0)

    def test_empty_file_is_all_defaults(self):
        cfg = parse_run_config("")
        assert cfg == RunConfig()

    def test_sections_map_onto_training(self):
        cfg = parse_run_config("[run]\nseed = 9\n[schedule]\nxi = 5\nm = 3\n[risk]\nlambda_p = 0.2\n")
        train = cfg.training()
        assert train.seed == 9
        assert (train.schedule.xi, train.schedule.m) == (5, 3)
        assert train.risk.lambda_p == 0.2

    def test_error_points_at_the_key_line(self):
        text = "[run]\nseed = 1\n\n[train]\nbatch_size = 0\n"
        assert diagnostics_for(text) == [
            "exp.toml:5: train.batch_size: Input should be greater than or equal to 1"
        ]

    def test_every_bad_field_reported_once(self):
        text = "[train]\ngamma = 1.5\nlr = -1\n[schedule]\nm = 0\n"
        lines = diagnostics_for(text)
        assert len(lines) == 3
        assert lines[0].startswith("exp.toml:2: train.gamma:")
        assert lines[1].startswith("exp.toml:3: train.lr:")
        assert lines[2].startswith("exp.toml:5: schedule.m:")

    def test_unknown_key(self):
        (line,) = diagnostics_for("[track]\nw = 10.0\nwidth = 3\n")
        assert line.startswith("exp.toml:3: track.width:")

    def test_unknown_section(self):
        (line,) = diagnostics_for("[run]\nseed = 1\n[extras]\nfoo = 1\n")
        assert line.startswith("exp.toml:3: extras:")

    def test_zero_sum_conflict_points_at_section(self):
        (line,) = diagnostics_for("[train]\nlr = 0.001\n[risk]\nlambda_p = 0.1\nlambda_a = 0.3\nzero_sum = true\n")
        assert line.startswith("exp.toml:3: risk:")
        assert "zero_sum" in line

    def test_dqn_with_ensemble_heads(self):
        (line,) = diagnostics_for('[train]\nvariant = "dqn"\nnum_heads = 10\n')
        assert line.startswith("exp.toml:3: train.num_heads:")

    def test_syntax_error_has_line(self):
        (line,) = diagnostics_for("[train]\nbatch_size = 4\nlr = = 3\n")
        assert line.startswith("exp.toml:3:")

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_run_config(tmp_path / "missing.toml")


class TestOverrides:
    def test_seed_variant_and_steps(self):
        cfg = apply_overrides(RunConfig(), seed=4, variant="bsdqn", total_steps=2000)
        assert cfg.run.seed == 4
        assert cfg.train.variant is Variant.BSDQN
        assert cfg.train.total_steps == 2000

    def test_unknown_variant_names_the_flag(self):
        with pytest.raises(ConfigError) as excinfo:
            apply_overrides(RunConfig(), variant="ppo")
        assert excinfo.value.diagnostics[0].startswith("--variant:")

    def test_dqn_override_conflicts_with_heads(self):
        cfg = parse_run_config("[train]\nnum_heads = 10\n")
        with pytest.raises(ConfigError, match="dqn"):
            apply_overrides(cfg, variant="dqn")

    def test_negative_steps(self):
        with pytest.raises(ConfigError) as excinfo:
            apply_overrides(RunConfig(), total_steps=-1)
        assert excinfo.value.diagnostics[0].startswith("--steps:")


class TestDigest:
    def test_stable_and_sensitive(self):
        a = parse_run_config("[train]\nlr = 0.001\n")
        b = parse_run_config("[train]\nlr = 0.001\n")
        c = parse_run_config("[train]\nlr = 0.002\n")
        assert config_digest(a) == config_digest(b)
        assert config_digest(a) != config_digest(c)
        assert len(config_digest(a)) == 64


class TestSettings:
    def test_seed_from_environment(self, monkeypatch):
        monkeypatch.setenv("RARARL_SEED", "7")
        assert Settings().seed == 7

    def test_defaults(self, monkeypatch):
        monkeypatch.delenv("RARARL_SEED", raising=False)
        monkeypatch.delenv("RARARL_LOG_LEVEL", raising=False)
        settings = Settings(_env_file=None)
        assert settings.seed is None
        assert settings.log_level == "INFO"
        assert settings.output_dir is None
        assert settings.run_config == "config/speedway.toml"

    def test_log_level_normalised(self, monkeypatch):
        monkeypatch.setenv("RARARL_LOG_LEVEL", "debug")
        assert Settings().log_level == "DEBUG"
        monkeypatch.setenv("RARARL_LOG_LEVEL", "loud")
        with pytest.raises(ValidationError):
            Settings()
