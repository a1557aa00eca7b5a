import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from phonovoc.services.bitstream_service import BitRateReport
from phonovoc.services.frontend_service import AudioClip, FrameGrid, frame_signal, mel_cepstrum
from phonovoc.services.prosody_service import SyllableCode
from phonovoc.utils.errors import InputSignalError, NoSyllables, TooShort
from phonovoc.utils.wavio import resample

logger = logging.getLogger(__name__)

MCD_CONSTANT = 10.0 / np.log(10.0) * np.sqrt(2.0)
MCD_GRID = FrameGrid(shift_ms=10, window_ms=25)
MCD_ORDER = 13

# Intelligibility measure constants
STOI_RATE = 10000
STOI_FRAME = 256
STOI_FFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA = -15.0
STOI_DYNAMIC_RANGE = 40.0
EPS = np.finfo(np.float64).eps

BYTES_PER_PARAMETER = 4
ANALYZER_DIMS = (351, 1024, 1024, 1024, 2)


def _check_rates(reference: AudioClip, test: AudioClip):
    if reference.sample_rate != test.sample_rate:
        raise InputSignalError(
            f"Sample rates differ: {reference.sample_rate} Hz vs {test.sample_rate} Hz"
        )


def log_amplitude_cepstra(clip: AudioClip, grid: FrameGrid = MCD_GRID) -> np.ndarray:
    """c0..c13 mel cepstra of the log amplitude spectrum on a 10 ms grid."""
    return 0.5 * mel_cepstrum(frame_signal(clip, grid), clip.sample_rate, MCD_ORDER + 1)


def mcd_from_cepstra(reference: np.ndarray, test: np.ndarray) -> float:
    """
    Frame-aligned distortion between two cepstral sequences.

    Columns 1..13 are compared (c0 excluded); sequences are trimmed to the
    shorter length.

    Raises:
        TooShort: If either sequence has no frame
    """
    n_frames = min(len(reference), len(test))
    if n_frames < 1:
        raise TooShort("Mel cepstral distortion needs at least one frame per signal")
    difference = reference[:n_frames, 1:MCD_ORDER + 1] - test[:n_frames, 1:MCD_ORDER + 1]
    return float(MCD_CONSTANT * np.mean(np.sqrt(np.sum(difference ** 2, axis=1))))


def mcd(reference: AudioClip, test: AudioClip) -> float:
    """Mel cepstral distortion in dB between two time-aligned clips."""
    _check_rates(reference, test)
    return mcd_from_cepstra(log_amplitude_cepstra(reference), log_amplitude_cepstra(test))


def third_octave_bands(sample_rate: int, n_fft: int, n_bands: int, min_freq: float) -> np.ndarray:
    """Binary (n_bands, n_fft/2 + 1) matrix grouping FFT bins into one-third octave bands."""
    frequencies = np.linspace(0, sample_rate, n_fft + 1)[: n_fft // 2 + 1]
    k = np.arange(n_bands, dtype=np.float64)
    low = min_freq * 2.0 ** ((2 * k - 1) / 6.0)
    high = min_freq * 2.0 ** ((2 * k + 1) / 6.0)
    bands = np.zeros((n_bands, len(frequencies)))
    for band in range(n_bands):
        first = int(np.argmin((frequencies - low[band]) ** 2))
        last = int(np.argmin((frequencies - high[band]) ** 2))
        bands[band, first:last] = 1.0
    return bands


def _framed(signal: np.ndarray, frame_length: int, hop: int, inclusive: bool) -> np.ndarray:
    window = np.hanning(frame_length + 2)[1:-1]
    stop = len(signal) - frame_length + (1 if inclusive else 0)
    return np.array([window * signal[i:i + frame_length] for i in range(0, max(stop, 0), hop)])


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    n_frames, frame_length = frames.shape
    signal = np.zeros((n_frames - 1) * hop + frame_length)
    for index in range(n_frames):
        signal[index * hop:index * hop + frame_length] += frames[index]
    return signal


def remove_silent_frames(reference: np.ndarray, test: np.ndarray):
    """Drop frames more than 40 dB below the loudest reference frame, in both signals."""
    hop = STOI_FRAME // 2
    ref_frames = _framed(reference, STOI_FRAME, hop, inclusive=True)
    test_frames = _framed(test, STOI_FRAME, hop, inclusive=True)
    if len(ref_frames) == 0:
        return reference[:0], test[:0]
    energies = 20.0 * np.log10(np.linalg.norm(ref_frames, axis=1) + EPS)
    keep = (np.max(energies) + STOI_DYNAMIC_RANGE - energies) > 0
    return _overlap_add(ref_frames[keep], hop), _overlap_add(test_frames[keep], hop)


def _band_envelopes(signal: np.ndarray, bands: np.ndarray) -> np.ndarray:
    frames = _framed(signal, STOI_FRAME, STOI_FRAME // 2, inclusive=False)
    if len(frames) == 0:
        return np.zeros((bands.shape[0], 0))
    spectrum = np.abs(np.fft.rfft(frames, n=STOI_FFT, axis=1)).T ** 2
    return np.sqrt(bands @ spectrum)


def stoi(reference: AudioClip, test: AudioClip) -> float:
    """
    Short-time objective intelligibility of `test` against `reference`.

    Both clips are resampled to 10 kHz and silent frames are removed. Band
    envelopes in 15 one-third octave bands are compared over sliding 30-frame
    (384 ms) segments by a normalized, clipped correlation, then averaged.

    Raises:
        TooShort: If less than one 384 ms segment of speech remains
    """
    _check_rates(reference, test)
    n_samples = min(len(reference.samples), len(test.samples))
    ref = resample(reference.samples[:n_samples], reference.sample_rate, STOI_RATE)
    deg = resample(test.samples[:n_samples], test.sample_rate, STOI_RATE)
    ref, deg = remove_silent_frames(ref, deg)

    bands = third_octave_bands(STOI_RATE, STOI_FFT, STOI_BANDS, STOI_MIN_FREQ)
    ref_env = _band_envelopes(ref, bands)
    deg_env = _band_envelopes(deg, bands)
    n_frames = ref_env.shape[1]
    if n_frames < STOI_SEGMENT:
        raise TooShort(f"Intelligibility needs {STOI_SEGMENT} speech frames (384 ms), got {n_frames}")

    clip_factor = 1.0 + 10.0 ** (-STOI_BETA / 20.0)
    scores = []
    for end in range(STOI_SEGMENT, n_frames + 1):
        x = ref_env[:, end - STOI_SEGMENT:end]
        y = deg_env[:, end - STOI_SEGMENT:end]
        scale = np.linalg.norm(x, axis=1, keepdims=True) / (np.linalg.norm(y, axis=1, keepdims=True) + EPS)
        y = np.minimum(y * scale, x * clip_factor)
        x = x - x.mean(axis=1, keepdims=True)
        y = y - y.mean(axis=1, keepdims=True)
        x = x / (np.linalg.norm(x, axis=1, keepdims=True) + EPS)
        y = y / (np.linalg.norm(y, axis=1, keepdims=True) + EPS)
        scores.append(np.sum(x * y) / STOI_BANDS)
    return float(np.clip(np.mean(scores), 0.0, 1.0))


def count_parameters(dims: Sequence[int]) -> int:
    """Weights plus biases of a fully connected network."""
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ValueError("A network needs at least two layer sizes")
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def memory_mb(n_parameters: int, bytes_per_parameter: int = BYTES_PER_PARAMETER) -> float:
    return n_parameters * bytes_per_parameter / 1e6


def synthesis_dims(k: int, context: int = 11, hidden: Sequence[int] = (1024, 1024, 1024, 1024)) -> List[int]:
    return [k * context, *hidden, 84]


@dataclass
class ComplexityReport:
    """Parameter counts and single-precision memory of the analyzer bank and synthesis network."""

    k: int
    analyzer_parameters: int
    synthesis_parameters: int

    @property
    def bank_parameters(self) -> int:
        return self.k * self.analyzer_parameters

    @property
    def total_parameters(self) -> int:
        return self.bank_parameters + self.synthesis_parameters

    def to_dict(self) -> Dict[str, float]:
        return {
            "k": self.k,
            "analyzer_parameters": self.analyzer_parameters,
            "analyzer_mb": memory_mb(self.analyzer_parameters),
            "synthesis_parameters": self.synthesis_parameters,
            "synthesis_mb": memory_mb(self.synthesis_parameters),
            "total_parameters": self.total_parameters,
            "total_mb": memory_mb(self.total_parameters),
        }


def complexity_report(
    k: int = 12,
    analyzer_dims: Sequence[int] = ANALYZER_DIMS,
    synthesis_network_dims: Optional[Sequence[int]] = None,
) -> ComplexityReport:
    """Complexity of K analyzers plus one synthesis network (full-size networks by default)."""
    dims = synthesis_network_dims or synthesis_dims(k)
    return ComplexityReport(k, count_parameters(analyzer_dims), count_parameters(dims))


def latency_report(codes: Sequence[SyllableCode]) -> float:
    """
    Mean syllable duration in ms, the algorithmic latency of the prosodic stream.

    Raises:
        NoSyllables: If there are no codes
    """
    if not codes:
        raise NoSyllables("Latency needs at least one syllable")
    return float(np.mean([code.duration_ms for code in codes]))


def total_latency(codes: Sequence[SyllableCode], network_latency_ms: float = 130.0) -> float:
    return latency_report(codes) + network_latency_ms


@dataclass
class QualityReport:
    """Objective scores of one decoded utterance."""

    mcd_db: Optional[float] = None
    stoi: Optional[float] = None
    bitrate: Optional[BitRateReport] = None
    mean_syllable_ms: Optional[float] = None
    total_latency_ms: Optional[float] = None
    extras: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.stoi is not None and not 0.0 <= self.stoi <= 1.0:
            raise ValueError(f"STOI must be in [0, 1], got {self.stoi}")
        if self.mcd_db is not None and self.mcd_db < 0:
            raise ValueError(f"MCD must be non-negative, got {self.mcd_db}")

    def to_dict(self) -> Dict[str, object]:
        document: Dict[str, object] = {
            "mcd_db": self.mcd_db,
            "stoi": self.stoi,
            "mean_syllable_ms": self.mean_syllable_ms,
            "total_latency_ms": self.total_latency_ms,
        }
        if self.bitrate is not None:
            document["bitrate"] = self.bitrate.to_dict()
        document.update(self.extras)
        return document

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format_table(self) -> str:
        def show(value, unit=""):
            return "n/a" if value is None else f"{value:.3f}{unit}"

        lines = [
            f"{'MCD':<24}{show(self.mcd_db, ' dB'):>16}",
            f"{'STOI':<24}{show(self.stoi):>16}",
            f"{'Mean syllable':<24}{show(self.mean_syllable_ms, ' ms'):>16}",
            f"{'Total latency':<24}{show(self.total_latency_ms, ' ms'):>16}",
        ]
        for name, value in self.extras.items():
            lines.append(f"{name:<24}{show(value):>16}")
        if self.bitrate is not None:
            lines.extend(["", self.bitrate.format_table()])
        return "\n".join(lines)
