import os
from pathlib import Path

import pytest
from unittest.mock import patch

from phonovoc.utils.config import CodecConfig, TrainingSettings
from phonovoc.utils.errors import ConfigError

REPO_CONFIG = Path(__file__).resolve().parent.parent / "config" / "phonovoc.toml"


class TestCodecConfig:
    """Test suite for the CodecConfig class."""

    def setup_method(self):
        """Clean up environment variables before each test."""
        env_vars = [
            'PHONOVOC_CONFIG', 'PHONOVOC_PROFILE', 'PHONOVOC_MODEL_DIR',
            'PHONOVOC_LOG_LEVEL', 'PHONOVOC_JOBS', 'PHONOVOC_SEED',
        ]
        for var in env_vars:
            if var in os.environ:
                del os.environ[var]

    @patch('phonovoc.utils.config.load_dotenv')
    def test_default_profile_is_gp16(self, mock_load_dotenv):
        """Test that the built-in default profile is GP with 16 ms frames."""
        mock_load_dotenv.return_value = None

        config = CodecConfig()

        assert config.profile == 'gp16'
        assert config.scheme == 'GP'
        assert config.frame_shift_ms == 16
        assert config.k == 12
        mock_load_dotenv.assert_called_once()

    @patch('phonovoc.utils.config.load_dotenv')
    def test_default_values_for_optional_vars(self, mock_load_dotenv):
        """Test that default values are used for optional settings."""
        config = CodecConfig()

        assert config.sample_rate == 16000
        assert config.analysis_context == 9
        assert config.synthesis_context == 11
        assert config.lpc_order == 24
        assert config.synthesis_inputs == 'continuous'
        assert config.network_latency_ms == 130.0
        assert config.log_level == 'INFO'
        assert config.jobs == 1
        assert config.seed == 0

    @patch('phonovoc.utils.config.load_dotenv')
    def test_repository_config_profiles(self, mock_load_dotenv):
        """Test that every profile of the bundled TOML file loads."""
        expected = {'gp16': ('GP', 16), 'gp10': ('GP', 10), 'gp20': ('GP', 20),
                    'spe16': ('SPE', 16), 'espe16': ('eSPE', 16), 'phone16': ('phone', 16)}
        for profile, (scheme, shift) in expected.items():
            config = CodecConfig(str(REPO_CONFIG), profile)
            assert (config.scheme, config.frame_shift_ms) == (scheme, shift)

    @patch('phonovoc.utils.config.load_dotenv')
    def test_scheme_sizes(self, mock_load_dotenv):
        """Test that class counts follow the scheme."""
        assert CodecConfig(profile='spe16').k == 15
        assert CodecConfig(profile='espe16').k == 21

    @patch('phonovoc.utils.config.load_dotenv')
    def test_environment_overrides(self, mock_load_dotenv, tmp_path):
        """Test that PHONOVOC_* variables override the defaults."""
        os.environ['PHONOVOC_PROFILE'] = 'gp20'
        os.environ['PHONOVOC_MODEL_DIR'] = str(tmp_path)
        os.environ['PHONOVOC_LOG_LEVEL'] = 'DEBUG'
        os.environ['PHONOVOC_JOBS'] = '3'
        os.environ['PHONOVOC_SEED'] = '7'

        config = CodecConfig()

        assert config.profile == 'gp20'
        assert config.frame_shift_ms == 20
        assert config.model_dir == tmp_path
        assert config.artifact_dir == tmp_path / 'gp20'
        assert config.log_level == 'DEBUG'
        assert config.jobs == 3
        assert config.seed == 7

    @patch('phonovoc.utils.config.load_dotenv')
    def test_explicit_overrides_win(self, mock_load_dotenv, tmp_path):
        """Test that the overrides dict wins over environment values."""
        os.environ['PHONOVOC_SEED'] = '7'

        config = CodecConfig(overrides={'seed': 11, 'model_dir': str(tmp_path), 'training': {'epochs': 2}})

        assert config.seed == 11
        assert config.model_dir == tmp_path
        assert config.training.epochs == 2

    @patch('phonovoc.utils.config.load_dotenv')
    def test_unknown_profile_raises_error(self, mock_load_dotenv):
        """Test that an unknown profile raises ConfigError."""
        with pytest.raises(ConfigError, match="Unknown profile: nope"):
            CodecConfig(profile='nope')

    @patch('phonovoc.utils.config.load_dotenv')
    def test_missing_config_file_raises_error(self, mock_load_dotenv, tmp_path):
        """Test that a missing config file raises ConfigError naming the path."""
        with pytest.raises(ConfigError, match="Config file not found"):
            CodecConfig(str(tmp_path / 'missing.toml'))

    @patch('phonovoc.utils.config.load_dotenv')
    def test_invalid_frame_shift_raises_error(self, mock_load_dotenv, tmp_path):
        """Test that a frame shift outside 10/16/20 ms raises ConfigError."""
        path = tmp_path / 'bad.toml'
        path.write_text('[profiles.odd]\nscheme = "GP"\nframe_shift_ms = 12\n')

        with pytest.raises(ConfigError, match="frame_shift_ms must be one of"):
            CodecConfig(str(path), 'odd')

    @patch('phonovoc.utils.config.load_dotenv')
    def test_class_count_must_match_scheme(self, mock_load_dotenv):
        """Test that a class list of the wrong length raises ConfigError."""
        with pytest.raises(ConfigError, match="expects 12 classes"):
            CodecConfig(overrides={'class_names': ['a', 'b']})

    @patch('phonovoc.utils.config.load_dotenv')
    def test_unknown_class_name_raises_error(self, mock_load_dotenv):
        """Test that a class name outside the scheme raises ConfigError instead of training on zeros."""
        names = ['A', 'a', 'E', 'H', 'h', 'I', 'i', 'N', 'S', 'u', 'U', 'pause']

        with pytest.raises(ConfigError, match="pause"):
            CodecConfig(overrides={'class_names': names})

    @patch('phonovoc.utils.config.load_dotenv')
    def test_permuted_class_names_reorder_the_scheme(self, mock_load_dotenv):
        """Test that a permuted class list becomes the class order used for targets."""
        names = ['silence', 'U', 'u', 'S', 'N', 'i', 'I', 'h', 'H', 'E', 'a', 'A']
        config = CodecConfig(overrides={'class_names': names})

        assert config.phonological_scheme.class_names == tuple(names)
        assert config.phonological_scheme.phone_bits('sil')[0] == 1

    @patch('phonovoc.utils.config.load_dotenv')
    def test_phonetic_profile(self, mock_load_dotenv):
        """Test that the phone profiles use one class per toy phone."""
        config = CodecConfig(profile='phone16')

        assert config.scheme == 'phone'
        assert config.k == 11
        assert 'sil' in config.class_names

    @pytest.mark.parametrize('overrides,match', [
        ({'analysis_context': 8}, 'analysis_context'),
        ({'synthesis_context': 0}, 'synthesis_context'),
        ({'lpc_order': 23}, 'lpc_order'),
        ({'f0_min_hz': 400.0, 'f0_max_hz': 100.0}, 'F0 range'),
    ])
    @patch('phonovoc.utils.config.load_dotenv')
    def test_invalid_analysis_settings_raise_error(self, mock_load_dotenv, overrides, match):
        """Test that unusable frontend and vocoder settings raise ConfigError."""
        with pytest.raises(ConfigError, match=match):
            CodecConfig(overrides=overrides)

    @patch('phonovoc.utils.config.load_dotenv')
    def test_invalid_synthesis_inputs_raises_error(self, mock_load_dotenv):
        """Test that synthesis_inputs accepts only continuous or binary."""
        with pytest.raises(ConfigError, match="synthesis_inputs"):
            CodecConfig(overrides={'synthesis_inputs': 'soft'})

    @patch('phonovoc.utils.config.load_dotenv')
    def test_invalid_log_level_raises_error(self, mock_load_dotenv):
        """Test that an unknown log level raises ConfigError."""
        with pytest.raises(ConfigError, match="log_level"):
            CodecConfig(overrides={'log_level': 'LOUD'})

    @patch('phonovoc.utils.config.load_dotenv')
    def test_unknown_training_setting_raises_error(self, mock_load_dotenv):
        """Test that a misspelled training key raises ConfigError."""
        with pytest.raises(ConfigError, match="Unknown training setting"):
            CodecConfig(overrides={'training': {'epoch': 3}})

    @patch('phonovoc.utils.config.load_dotenv')
    def test_model_paths(self, mock_load_dotenv, tmp_path):
        """Test that artifact paths live under the profile directory."""
        config = CodecConfig(overrides={'model_dir': str(tmp_path)})

        assert len(config.analyzer_paths) == 12
        assert config.analyzer_paths[0] == tmp_path / 'gp16' / 'analyzer_00.pvw'
        assert config.synthesis_path.name == 'synthesis.pvw'
        assert len(config.model_files()) == 16

    @patch('phonovoc.utils.config.load_dotenv')
    def test_require_model_files_names_missing_path(self, mock_load_dotenv, tmp_path):
        """Test that a missing artifact raises ConfigError with its path."""
        config = CodecConfig(overrides={'model_dir': str(tmp_path)})

        with pytest.raises(ConfigError, match="analyzer_00.pvw"):
            config.require_model_files()


class TestTrainingSettings:
    """Test suite for training hyper-parameters."""

    def test_defaults(self):
        """Test that default settings are desk-scale."""
        settings = TrainingSettings()

        assert settings.analyzer_hidden == [64]
        assert settings.synthesis_hidden == [64, 64]
        assert settings.snn_budget == 40

    def test_from_mapping(self):
        """Test that known keys are applied."""
        settings = TrainingSettings.from_mapping({'epochs': 5, 'batch_size': 8})

        assert settings.epochs == 5
        assert settings.batch_size == 8
