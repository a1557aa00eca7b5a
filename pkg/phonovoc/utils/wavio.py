import logging
from math import gcd
from pathlib import Path
from typing import Union

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from phonovoc.utils.errors import ConfigError, InputSignalError

logger = logging.getLogger(__name__)

CANONICAL_RATE = 16000


def resample(samples: np.ndarray, source_rate: int, target_rate: int) -> np.ndarray:
    """Polyphase resampling between integer sample rates."""
    if source_rate == target_rate:
        return np.asarray(samples, dtype=np.float64)
    divisor = gcd(int(source_rate), int(target_rate))
    up = int(target_rate) // divisor
    down = int(source_rate) // divisor
    return resample_poly(np.asarray(samples, dtype=np.float64), up, down)


def read_wav(path: Union[str, Path], target_rate: int = CANONICAL_RATE):
    """
    Read a mono PCM WAV file as an AudioClip at the canonical rate.

    Args:
        path: WAV file path
        target_rate: Output sample rate in Hz

    Returns:
        AudioClip: Normalized samples in [-1, 1]

    Raises:
        ConfigError: If the file does not exist
        InputSignalError: If the file is multi-channel or not PCM
    """
    from phonovoc.services.frontend_service import AudioClip

    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Audio file not found: {path}")

    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise InputSignalError(f"Only mono audio is supported, got {data.shape[1]} channels: {path}")

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise InputSignalError(f"Unsupported WAV sample format {data.dtype}: {path}")

    if rate != target_rate:
        logger.debug("Resampling %s from %d Hz to %d Hz", path, rate, target_rate)
        samples = resample(samples, rate, target_rate)

    return AudioClip(np.clip(samples, -1.0, 1.0), target_rate)


def write_wav(path: Union[str, Path], clip) -> Path:
    """Write an AudioClip as 16-bit mono PCM."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.round(np.clip(clip.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    wavfile.write(str(path), int(clip.sample_rate), pcm)
    return path
