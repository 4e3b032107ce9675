"""Tests for core/config.py: parsing, defaults and cross-field validation."""

from pathlib import Path

import pytest

from core.config import BackboneSpec, Config, high_group_size, load_config, parse_config_text
from core.errors import ValidationError


# ---------------------------------------------------------------------------
# parse_config_text
# ---------------------------------------------------------------------------

class TestParseConfigText:
    def test_reads_keys_and_comments(self):
        text = "# desk preset\nk = 8\ndelta=0.7  # threshold\n\nbackbone=tiny:64\n"
        settings = parse_config_text(text)
        assert settings['k'] == 8
        assert settings['delta'] == pytest.approx(0.7)
        assert settings['backbone'] == BackboneSpec('tiny', 64)

    def test_unknown_key_names_line(self):
        with pytest.raises(ValidationError, match=':2: unknown key'):
            parse_config_text("k=8\nalpha=1\n")

    def test_duplicate_key(self):
        with pytest.raises(ValidationError, match='duplicate'):
            parse_config_text("k=8\nk=4\n")

    def test_missing_equals(self):
        with pytest.raises(ValidationError, match='expected key=value'):
            parse_config_text("k 8\n")

    def test_unparsable_value(self):
        with pytest.raises(ValidationError, match="cannot parse k"):
            parse_config_text("k=eight\n")

    def test_non_finite_float(self):
        with pytest.raises(ValidationError):
            parse_config_text("delta=nan\n")


# ---------------------------------------------------------------------------
# BackboneSpec
# ---------------------------------------------------------------------------

class TestBackboneSpec:
    def test_default_dims(self):
        assert BackboneSpec.parse('tiny') == BackboneSpec('tiny', 128)
        assert BackboneSpec.parse('resnet18') == BackboneSpec('resnet18', 512)

    def test_round_trip_text(self):
        assert str(BackboneSpec.parse('tiny:32')) == 'tiny:32'

    def test_unknown_backbone(self):
        with pytest.raises(ValidationError):
            BackboneSpec.parse('vgg16')

    def test_resnet_dim_fixed(self):
        with pytest.raises(ValidationError):
            BackboneSpec.parse('resnet18:256')


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

class TestConfig:
    def test_defaults_are_valid(self):
        config = Config()
        assert config.k == 8
        assert config.k_high == 1

    def test_high_group_size(self):
        assert high_group_size(8, 0.1) == 1
        assert high_group_size(8, 0.25) == 2
        assert high_group_size(10, 0.3) == 3

    def test_k_below_two(self):
        with pytest.raises(ValidationError, match='k must be'):
            Config(k=1)

    def test_gamma_leaving_low_group_empty(self):
        with pytest.raises(ValidationError, match='low-score group empty'):
            Config(k=4, gamma=1.0)

    def test_delta_range(self):
        with pytest.raises(ValidationError):
            Config(delta=0.0)
        with pytest.raises(ValidationError):
            Config(delta=1.5)
        assert Config(delta=1.0).delta == 1.0

    def test_negative_lambda(self):
        with pytest.raises(ValidationError):
            Config(lambda_=-0.1)

    def test_replace_validates(self):
        config = Config()
        assert config.replace(lambda_=0.0).lambda_ == 0.0
        with pytest.raises(ValidationError):
            config.replace(epochs=0)

    def test_snapshot_uses_file_keys(self):
        snap = Config(backbone_spec='tiny:16').snapshot()
        assert snap['lambda'] == 1.0
        assert snap['backbone'] == 'tiny:16'
        assert 'lambda_' not in snap

    def test_text_round_trip(self):
        config = Config(k=6, gamma=0.2, backbone_spec='tiny:32', flow_scale=2.0)
        assert Config.from_settings(parse_config_text(config.to_text())) == config

    def test_from_settings_rejects_unknown(self):
        with pytest.raises(ValidationError):
            Config.from_settings({'alpha': 1})


# ---------------------------------------------------------------------------
# load_config
# ---------------------------------------------------------------------------

class TestLoadConfig:
    def test_no_path_gives_defaults(self):
        assert load_config() == Config()

    def test_overrides_win_over_file(self, tmp_path):
        path = tmp_path / 'run.cfg'
        path.write_text("k=8\nseed=3\n", encoding='utf-8')
        config = load_config(path, k=6, seed=None)
        assert config.k == 6
        assert config.seed == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError, match='cannot read config'):
            load_config(tmp_path / 'absent.cfg')

    def test_invalid_combination_names_file(self, tmp_path):
        path = tmp_path / 'bad.cfg'
        path.write_text("k=2\ngamma=0.9\n", encoding='utf-8')
        with pytest.raises(ValidationError, match='bad.cfg'):
            load_config(path)

    def test_desk_preset_loads(self):
        preset = Path(__file__).resolve().parent.parent / 'configs' / 'desk.cfg'
        config = load_config(preset)
        assert config.k == 8
        assert config.image_size == 32
