import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.fftpack import dct

from phonovoc.utils.errors import NoVoicedSpeech

logger = logging.getLogger(__name__)

N_MEL_BANDS = 26
N_STATIC_CEPSTRA = 13
DELTA_WINDOW = 2
LOG_ENERGY_FLOOR = 1e-10


@dataclass(frozen=True)
class AudioClip:
    """Mono audio with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioClip samples must be one-dimensional")
        if self.sample_rate <= 0:
            raise ValueError(f"Sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_ms(self) -> float:
        return 1000.0 * len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameGrid:
    """Fixed analysis grid: window length and frame shift in milliseconds."""

    shift_ms: int = 16
    window_ms: int = 25

    def __post_init__(self):
        if self.shift_ms not in (10, 16, 20):
            raise ValueError(f"Frame shift must be one of 10, 16, 20 ms, got {self.shift_ms}")
        if self.window_ms <= 0:
            raise ValueError(f"Window length must be positive, got {self.window_ms}")

    def window_length(self, sample_rate: int) -> int:
        return int(round(sample_rate * self.window_ms / 1000.0))

    def hop_length(self, sample_rate: int) -> int:
        return int(round(sample_rate * self.shift_ms / 1000.0))

    def n_frames(self, n_samples: int, sample_rate: int) -> int:
        """Number of whole windows that fit: floor((len - window) / shift) + 1, or 0."""
        window = self.window_length(sample_rate)
        if n_samples < window:
            return 0
        return (n_samples - window) // self.hop_length(sample_rate) + 1

    def output_length(self, n_frames: int, sample_rate: int) -> int:
        """Samples covered by n_frames windows laid out on this grid."""
        if n_frames <= 0:
            return 0
        hop = self.hop_length(sample_rate)
        return n_frames * hop + self.window_length(sample_rate) - hop

    def frame_centers_ms(self, n_frames: int) -> np.ndarray:
        return np.arange(n_frames) * float(self.shift_ms) + self.window_ms / 2.0


@dataclass
class AcousticFeatures:
    """Per-frame MFCCs: 13 statics followed by deltas and delta-deltas."""

    mfcc: np.ndarray

    @property
    def statics(self) -> np.ndarray:
        return self.mfcc[:, :N_STATIC_CEPSTRA]

    @property
    def n_frames(self) -> int:
        return self.mfcc.shape[0]


@dataclass
class F0Track:
    """Continuous per-frame log-F0 (natural log of Hz)."""

    log_f0: np.ndarray
    frame_shift_ms: int = 16
    voicing_mask: Optional[np.ndarray] = field(default=None)

    @property
    def n_frames(self) -> int:
        return len(self.log_f0)

    @property
    def hz(self) -> np.ndarray:
        return np.exp(self.log_f0)


def raw_frames(clip: AudioClip, grid: FrameGrid) -> np.ndarray:
    """Unwindowed (n_frames, window_length) view of a clip on the grid."""
    window = grid.window_length(clip.sample_rate)
    hop = grid.hop_length(clip.sample_rate)
    n_frames = grid.n_frames(len(clip.samples), clip.sample_rate)
    if n_frames == 0:
        return np.zeros((0, window))
    return np.lib.stride_tricks.sliding_window_view(clip.samples, window)[::hop][:n_frames]


def frame_signal(clip: AudioClip, grid: FrameGrid) -> np.ndarray:
    """
    Cut a clip into Hamming-windowed frames.

    Args:
        clip: Input audio
        grid: Frame grid

    Returns:
        np.ndarray: (n_frames, window_length) array; empty when the clip is
        shorter than one window
    """
    frames = raw_frames(clip, grid)
    return frames * np.hamming(frames.shape[1])


def mel_filterbank(sample_rate: int, n_fft: int, n_bands: int = N_MEL_BANDS) -> np.ndarray:
    """Triangular filters evenly spaced on the mel scale from 0 Hz to Nyquist."""
    high_mel = 2595.0 * np.log10(1.0 + (sample_rate / 2.0) / 700.0)
    mel_points = np.linspace(0.0, high_mel, n_bands + 2)
    hz_points = 700.0 * (10.0 ** (mel_points / 2595.0) - 1.0)
    bins = np.floor((n_fft + 1) * hz_points / sample_rate).astype(int)

    bank = np.zeros((n_bands, n_fft // 2 + 1))
    for band in range(n_bands):
        left, center, right = bins[band], bins[band + 1], bins[band + 2]
        for i in range(left, center):
            bank[band, i] = (i - left) / max(center - left, 1)
        for i in range(center, right):
            bank[band, i] = (right - i) / max(right - center, 1)
    return bank


def _fft_size(window: int) -> int:
    n_fft = 1
    while n_fft < window:
        n_fft *= 2
    return n_fft


def mel_cepstrum(frames: np.ndarray, sample_rate: int, n_ceps: int = N_STATIC_CEPSTRA) -> np.ndarray:
    """
    Mel cepstra of windowed frames: 26-band log mel energies followed by an
    orthonormal DCT-II. Coefficient 0 is the scaled mean log energy.
    """
    frames = np.atleast_2d(frames)
    if frames.shape[0] == 0:
        return np.zeros((0, n_ceps))
    n_fft = _fft_size(frames.shape[1])
    power = np.abs(np.fft.rfft(frames, n_fft)) ** 2 / n_fft
    energies = power @ mel_filterbank(sample_rate, n_fft).T
    log_energies = np.log(np.maximum(energies, LOG_ENERGY_FLOOR))
    return dct(log_energies, type=2, axis=1, norm="ortho")[:, :n_ceps]


def deltas(features: np.ndarray, width: int = DELTA_WINDOW) -> np.ndarray:
    """Regression deltas over +/- width frames with edge replication."""
    if features.shape[0] == 0:
        return np.zeros_like(features)
    n_frames = features.shape[0]
    padded = np.pad(features, ((width, width), (0, 0)), mode="edge")
    denominator = 2.0 * sum(n * n for n in range(1, width + 1))
    result = np.zeros_like(features, dtype=np.float64)
    for n in range(1, width + 1):
        result += n * (padded[width + n:width + n + n_frames] - padded[width - n:width - n + n_frames])
    return result / denominator


def compute_mfcc(frames: np.ndarray, sample_rate: int = 16000, normalize: bool = True) -> AcousticFeatures:
    """
    Compute 39-dimensional MFCC vectors (13 statics, deltas, delta-deltas).

    Args:
        frames: Windowed frames from frame_signal
        sample_rate: Sample rate of the frames
        normalize: Subtract the per-utterance mean of the statics

    Returns:
        AcousticFeatures: One 39-dim row per frame
    """
    statics = mel_cepstrum(frames, sample_rate, N_STATIC_CEPSTRA)
    if normalize and statics.shape[0] > 0:
        statics = statics - statics.mean(axis=0)
    first = deltas(statics)
    second = deltas(first)
    return AcousticFeatures(np.hstack([statics, first, second]))


def stack_context(features: np.ndarray, context: int) -> np.ndarray:
    """
    Concatenate each frame with its (context - 1) / 2 neighbours on either side.

    Args:
        features: (n_frames, dim) array
        context: Odd number of frames per stacked vector

    Returns:
        np.ndarray: (n_frames, dim * context) array; boundary frames are
        replicated at the edges

    Raises:
        ValueError: If context is not a positive odd number
    """
    if context < 1 or context % 2 == 0:
        raise ValueError(f"Context must be a positive odd number, got {context}")
    features = np.asarray(features, dtype=np.float64)
    n_frames, dim = features.shape
    if n_frames == 0:
        return np.zeros((0, dim * context))
    half = (context - 1) // 2
    padded = np.pad(features, ((half, half), (0, 0)), mode="edge")
    return np.hstack([padded[offset:offset + n_frames] for offset in range(context)])


def _normalized_cross_correlation(segment: np.ndarray, window: int, max_lag: int) -> np.ndarray:
    """Normalized cross-correlation of the first `window` samples against lags 0..max_lag."""
    head = segment[:window]
    cross = np.correlate(segment[:window + max_lag], head, mode="valid")
    energies = np.convolve(segment[:window + max_lag] ** 2, np.ones(window), mode="valid")
    denominator = np.sqrt(energies[0] * energies)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denominator > 0, cross / np.maximum(denominator, 1e-300), 0.0)


def _pick_period(nccf: np.ndarray, min_lag: int, max_lag: int) -> tuple:
    """Smallest-lag peak within 85% of the best peak, refined by parabolic interpolation."""
    search = nccf[min_lag:max_lag + 1]
    best = float(search.max())
    lag = min_lag + int(np.argmax(search >= 0.85 * best))
    while lag < max_lag and nccf[lag + 1] > nccf[lag]:
        lag += 1

    offset = 0.0
    if min_lag < lag < max_lag:
        left, centre, right = nccf[lag - 1], nccf[lag], nccf[lag + 1]
        curvature = left - 2.0 * centre + right
        if curvature < 0:
            offset = 0.5 * (left - right) / curvature
    return lag + offset, float(nccf[lag])


def extract_continuous_f0(
    clip: AudioClip,
    grid: FrameGrid,
    f0_min_hz: float = 50.0,
    f0_max_hz: float = 500.0,
    voicing_threshold: float = 0.3,
) -> F0Track:
    """
    Estimate a continuous log-F0 track.

    Voiced frames are found by a normalized cross-correlation peak search
    between f0_min_hz and f0_max_hz; unvoiced frames are filled by linear
    interpolation of log-F0 between voiced neighbours and held flat before
    the first and after the last voiced frame.

    Args:
        clip: Input audio
        grid: Frame grid
        f0_min_hz: Lowest admissible F0
        f0_max_hz: Highest admissible F0
        voicing_threshold: Minimum correlation peak for a voiced frame

    Returns:
        F0Track: One finite log-F0 value per frame

    Raises:
        NoVoicedSpeech: If no frame passes the voicing decision
    """
    sample_rate = clip.sample_rate
    window = grid.window_length(sample_rate)
    hop = grid.hop_length(sample_rate)
    n_frames = grid.n_frames(len(clip.samples), sample_rate)

    min_lag = max(1, int(np.floor(sample_rate / f0_max_hz)))
    max_lag = int(np.ceil(sample_rate / f0_min_hz))
    padded = np.concatenate([clip.samples, np.zeros(max_lag + 1)])
    energy_floor = window * 1e-8

    log_f0 = np.zeros(n_frames)
    voiced = np.zeros(n_frames, dtype=bool)
    for index in range(n_frames):
        start = index * hop
        segment = padded[start:start + window + max_lag]
        if np.dot(segment[:window], segment[:window]) <= energy_floor:
            continue
        nccf = _normalized_cross_correlation(segment, window, max_lag)
        period, peak = _pick_period(nccf, min_lag, max_lag)
        if peak >= voicing_threshold:
            voiced[index] = True
            log_f0[index] = np.log(sample_rate / period)

    if not voiced.any():
        raise NoVoicedSpeech(f"No voiced frame found in {n_frames} frames")

    positions = np.arange(n_frames)
    filled = np.interp(positions, positions[voiced], log_f0[voiced])
    filled = np.clip(filled, np.log(f0_min_hz), np.log(f0_max_hz))
    logger.debug("F0 track: %d/%d voiced frames", int(voiced.sum()), n_frames)
    return F0Track(filled, grid.shift_ms, voiced)


class FrontendService:
    """Framing, MFCC analysis and pitch extraction on one configured grid."""

    def __init__(
        self,
        frame_shift_ms: int = 16,
        window_ms: int = 25,
        sample_rate: int = 16000,
        f0_min_hz: float = 50.0,
        f0_max_hz: float = 500.0,
        voicing_threshold: float = 0.3,
    ):
        """
        Initialize the frontend.

        Raises:
            ValueError: If the pitch range or rates are invalid
        """
        if not 0 < f0_min_hz < f0_max_hz:
            raise ValueError(f"Invalid F0 range: {f0_min_hz}-{f0_max_hz} Hz")
        if sample_rate <= 0:
            raise ValueError(f"Sample rate must be positive, got {sample_rate}")

        self.grid = FrameGrid(frame_shift_ms, window_ms)
        self.sample_rate = sample_rate
        self.f0_min_hz = f0_min_hz
        self.f0_max_hz = f0_max_hz
        self.voicing_threshold = voicing_threshold

    @classmethod
    def from_config(cls, config) -> "FrontendService":
        return cls(
            frame_shift_ms=config.frame_shift_ms,
            window_ms=config.window_ms,
            sample_rate=config.sample_rate,
            f0_min_hz=config.f0_min_hz,
            f0_max_hz=config.f0_max_hz,
            voicing_threshold=config.voicing_threshold,
        )

    def frames(self, clip: AudioClip) -> np.ndarray:
        return frame_signal(clip, self.grid)

    def analysis_features(self, clip: AudioClip, context: int = 9) -> np.ndarray:
        """Context-stacked 39-dim MFCCs (351 dims at the default context of 9)."""
        mfcc = compute_mfcc(self.frames(clip), clip.sample_rate)
        return stack_context(mfcc.mfcc, context)

    def snn_cepstra(self, clip: AudioClip) -> np.ndarray:
        """Raw 13-dim mel cepstra driving the syllable detector."""
        return mel_cepstrum(self.frames(clip), clip.sample_rate, N_STATIC_CEPSTRA)

    def f0(self, clip: AudioClip) -> F0Track:
        return extract_continuous_f0(
            clip, self.grid, self.f0_min_hz, self.f0_max_hz, self.voicing_threshold
        )
