"""Phonological very-low-bit-rate speech codec."""

from phonovoc.utils.config import CodecConfig

__version__ = "1.0.0"


def create_codec(config_override=None):
    """
    Codec factory.

    Args:
        config_override: Optional configuration override for testing

    Returns:
        CodecService: Encoder/decoder with every model of the profile loaded

    Raises:
        ConfigError: If the configuration is invalid or a model file is missing
    """
    from phonovoc.services.codec_service import CodecService

    config = config_override if config_override is not None else CodecConfig()
    return CodecService.from_config(config)
