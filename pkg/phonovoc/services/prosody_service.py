import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from phonovoc.services.frontend_service import F0Track
from phonovoc.utils.errors import ConfigError, CorruptStream, DegenerateCorpus, SegmentTooShort

logger = logging.getLogger(__name__)

N_LEVELS = 8
DURATION_STEP_MS = 16
MAX_DURATION_STEPS = 16
MIN_SEGMENT_FRAMES = 2
SLOPE_UNITS = "log-Hz per second"


@dataclass(frozen=True)
class DlopCoeffs:
    """Order-0/1 discrete Legendre coefficients reported as line mean and slope."""

    mean: float
    slope: float
    span_ms: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.slope)):
            raise ValueError("DLOP coefficients must be finite")
        if self.span_ms <= 0:
            raise ValueError(f"span_ms must be positive, got {self.span_ms}")


@dataclass(frozen=True)
class SyllableCode:
    """
    Quantized prosody of one syllable; dur_steps counts 16 ms steps.

    Level indices are range-checked where they are used (packing and decoding).
    """

    mean_idx: int
    slope_idx: int
    dur_steps: int

    def __post_init__(self):
        if not 1 <= self.dur_steps <= MAX_DURATION_STEPS:
            raise ValueError(f"dur_steps must be in [1, {MAX_DURATION_STEPS}], got {self.dur_steps}")

    @property
    def duration_ms(self) -> int:
        return self.dur_steps * DURATION_STEP_MS


@dataclass(frozen=True)
class ProsodicCodebook:
    """Linear 3-bit quantizers for the F0 mean and slope."""

    mean_mu: float
    mean_sigma: float
    slope_mu: float
    slope_sigma: float

    def __post_init__(self):
        if not (self.mean_sigma > 0 and self.slope_sigma > 0):
            raise DegenerateCorpus("Prosodic codebook needs a positive spread for every parameter")

    @property
    def mean_levels(self) -> np.ndarray:
        return codebook_levels(self.mean_mu, self.mean_sigma)

    @property
    def slope_levels(self) -> np.ndarray:
        return codebook_levels(self.slope_mu, self.slope_sigma)

    @property
    def short_hash(self) -> bytes:
        """First 8 bytes of the SHA-256 of the canonical JSON form."""
        canonical = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(canonical).digest()[:8]

    def to_dict(self) -> Dict[str, object]:
        return {
            "mean": {"mu": self.mean_mu, "sigma": self.mean_sigma, "levels": self.mean_levels.tolist()},
            "slope": {"mu": self.slope_mu, "sigma": self.slope_sigma, "levels": self.slope_levels.tolist()},
            "slope_units": SLOPE_UNITS,
            "log_base": "e",
        }


def codebook_levels(mu: float, sigma: float) -> np.ndarray:
    """8 equally spaced levels on [mu - 3 sigma, mu + 3 sigma]."""
    return np.linspace(mu - 3.0 * sigma, mu + 3.0 * sigma, N_LEVELS)


def _sample_times_ms(n_samples: int, span_ms: float) -> np.ndarray:
    return (np.arange(n_samples) + 0.5) * span_ms / n_samples


def legendre_basis(n_samples: int) -> np.ndarray:
    """
    Orthonormal discrete Legendre vectors of orders 0 and 1 over n equispaced points.

    Returns:
        np.ndarray: (n_samples, 2) matrix with orthonormal columns
    """
    positions = np.arange(n_samples, dtype=np.float64)
    raw = np.stack([np.ones(n_samples), positions - positions.mean()], axis=1)
    q, r = np.linalg.qr(raw)
    return q * np.sign(np.diag(r))


def fit_dlop(segment: np.ndarray, span_ms: float) -> DlopCoeffs:
    """
    Project a log-F0 segment onto the order-0 and order-1 Legendre vectors.

    The projection is the least-squares line through the samples, placed at
    times (i + 0.5) * span_ms / n. It is reported as its value at the
    segment centre (mean) and its slope in log-Hz per second.

    Args:
        segment: Per-frame log-F0 values
        span_ms: Duration the segment covers

    Returns:
        DlopCoeffs: Mean, slope and span

    Raises:
        SegmentTooShort: If the segment has fewer than 2 samples
    """
    segment = np.asarray(segment, dtype=np.float64)
    n_samples = len(segment)
    if n_samples < MIN_SEGMENT_FRAMES:
        raise SegmentTooShort(f"A DLOP fit needs at least {MIN_SEGMENT_FRAMES} samples, got {n_samples}")

    basis = legendre_basis(n_samples)
    c0, c1 = basis.T @ segment
    positions = np.arange(n_samples) - (n_samples - 1) / 2.0
    step_s = span_ms / n_samples / 1000.0
    mean = c0 / np.sqrt(n_samples)
    slope = c1 / np.sqrt(np.sum(positions ** 2)) / step_s
    return DlopCoeffs(float(mean), float(slope), float(span_ms))


def reconstruct_dlop(coeffs: DlopCoeffs, n_samples: int) -> np.ndarray:
    """Sample mean + slope * (t - t_center) at the segment's sample times."""
    times_s = _sample_times_ms(n_samples, coeffs.span_ms) / 1000.0
    return coeffs.mean + coeffs.slope * (times_s - coeffs.span_ms / 2000.0)


def build_prosodic_codebooks(coeffs: Sequence[DlopCoeffs]) -> ProsodicCodebook:
    """
    Build the mean and slope quantizers from training syllables.

    Raises:
        DegenerateCorpus: With fewer than 2 syllables or zero spread in a parameter
    """
    if len(coeffs) < 2:
        raise DegenerateCorpus(f"Need at least 2 syllables to build prosodic codebooks, got {len(coeffs)}")
    means = np.array([c.mean for c in coeffs])
    slopes = np.array([c.slope for c in coeffs])
    mean_sigma, slope_sigma = float(means.std()), float(slopes.std())
    if mean_sigma == 0.0 or slope_sigma == 0.0:
        raise DegenerateCorpus("F0 mean or slope has zero variance across the corpus")
    codebook = ProsodicCodebook(float(means.mean()), mean_sigma, float(slopes.mean()), slope_sigma)
    logger.info(
        "Prosodic codebooks from %d syllables: mean %.3f+/-%.3f, slope %.3f+/-%.3f",
        len(coeffs), codebook.mean_mu, mean_sigma, codebook.slope_mu, slope_sigma,
    )
    return codebook


def quantize_param(value: float, levels: np.ndarray) -> int:
    """Nearest level index; ties go to the lower index and out-of-range values clamp."""
    levels = np.asarray(levels, dtype=np.float64)
    distances = np.abs(levels - value)
    tolerance = 1e-9 * (levels[-1] - levels[0])
    return int(np.flatnonzero(distances <= distances.min() + tolerance)[0])


def dequantize(code: SyllableCode, codebook: ProsodicCodebook) -> Tuple[float, float]:
    """
    Raises:
        CorruptStream: If an index is outside the 8 levels
    """
    if not (0 <= code.mean_idx < N_LEVELS and 0 <= code.slope_idx < N_LEVELS):
        raise CorruptStream(f"Prosodic index out of range: {code}")
    return float(codebook.mean_levels[code.mean_idx]), float(codebook.slope_levels[code.slope_idx])


def _boundaries_to_steps(boundaries_ms: Sequence[float], total_steps: int) -> List[int]:
    steps = sorted({int(round(b / DURATION_STEP_MS)) for b in boundaries_ms})
    return [s for s in steps if 0 < s < total_steps]


def segment_syllables(boundaries_ms: Sequence[float], n_frames: int, frame_shift_ms: int) -> List[Tuple[int, int]]:
    """
    Cut an utterance into syllable segments on the 16 ms duration grid.

    Boundaries snap to the nearest step. Segments shorter than 2 frames merge
    into the previous segment (the next one for a leading sliver); segments
    over 16 steps are split evenly.

    Returns:
        List of (start_step, n_steps) pairs covering the utterance
    """
    total_steps = int(round(n_frames * frame_shift_ms / DURATION_STEP_MS))
    if total_steps < 1:
        return []
    edges = [0, *_boundaries_to_steps(boundaries_ms, total_steps), total_steps]
    segments = [[start, end] for start, end in zip(edges[:-1], edges[1:])]

    def frames_in(segment):
        return (segment[1] - segment[0]) * DURATION_STEP_MS / frame_shift_ms

    merged: List[List[int]] = []
    for segment in segments:
        if merged and frames_in(segment) < MIN_SEGMENT_FRAMES:
            merged[-1][1] = segment[1]
        else:
            merged.append(segment)
    if len(merged) > 1 and frames_in(merged[0]) < MIN_SEGMENT_FRAMES:
        merged[1][0] = merged[0][0]
        merged.pop(0)

    result: List[Tuple[int, int]] = []
    for start, end in merged:
        length = end - start
        pieces = -(-length // MAX_DURATION_STEPS)
        cuts = [start + (length * i) // pieces for i in range(pieces + 1)]
        result.extend((a, b - a) for a, b in zip(cuts[:-1], cuts[1:]))
    return result


def _segment_frames(f0: F0Track, start_step: int, n_steps: int) -> np.ndarray:
    start = int(round(start_step * DURATION_STEP_MS / f0.frame_shift_ms))
    end = int(round((start_step + n_steps) * DURATION_STEP_MS / f0.frame_shift_ms))
    end = min(max(end, start + MIN_SEGMENT_FRAMES), f0.n_frames)
    start = min(start, max(end - MIN_SEGMENT_FRAMES, 0))
    return f0.log_f0[start:end]


def fit_syllables(f0: F0Track, boundaries_ms: Sequence[float]) -> List[Tuple[DlopCoeffs, int]]:
    """DLOP coefficients and step durations for every syllable of an utterance."""
    fitted = []
    for start_step, n_steps in segment_syllables(boundaries_ms, f0.n_frames, f0.frame_shift_ms):
        segment = _segment_frames(f0, start_step, n_steps)
        fitted.append((fit_dlop(segment, n_steps * DURATION_STEP_MS), n_steps))
    return fitted


def encode_prosody(f0: F0Track, boundaries_ms: Sequence[float], codebook: ProsodicCodebook) -> List[SyllableCode]:
    """
    Quantize the per-syllable F0 stylization of an utterance.

    Args:
        f0: Continuous log-F0 track
        boundaries_ms: Syllable boundaries in milliseconds
        codebook: Trained prosodic codebook

    Returns:
        List[SyllableCode]: One code per syllable segment

    Raises:
        SegmentTooShort: If the whole track is shorter than 2 frames
    """
    codes = []
    for coeffs, n_steps in fit_syllables(f0, boundaries_ms):
        codes.append(SyllableCode(
            quantize_param(coeffs.mean, codebook.mean_levels),
            quantize_param(coeffs.slope, codebook.slope_levels),
            n_steps,
        ))
    return codes


def render_lines(lines: Sequence[Tuple[float, float, int]], frame_shift_ms: int) -> F0Track:
    """
    Sample abutted per-syllable lines on the frame grid.

    Args:
        lines: (mean, slope, dur_steps) per syllable
        frame_shift_ms: Output frame shift

    Returns:
        F0Track: Piecewise-linear log-F0, one value every frame_shift_ms
    """
    total_ms = sum(steps for _, _, steps in lines) * DURATION_STEP_MS
    n_frames = int(round(total_ms / frame_shift_ms))
    times_ms = (np.arange(n_frames) + 0.5) * frame_shift_ms
    log_f0 = np.zeros(n_frames)

    start_ms = 0.0
    for index, (mean, slope, steps) in enumerate(lines):
        end_ms = start_ms + steps * DURATION_STEP_MS
        last = index == len(lines) - 1
        inside = (times_ms >= start_ms) & ((times_ms < end_ms) | last)
        centre_ms = (start_ms + end_ms) / 2.0
        log_f0[inside] = mean + slope * (times_ms[inside] - centre_ms) / 1000.0
        start_ms = end_ms
    return F0Track(log_f0, frame_shift_ms)


def decode_prosody(codes: Sequence[SyllableCode], codebook: ProsodicCodebook, frame_shift_ms: int = 16) -> F0Track:
    """
    Rebuild a piecewise-linear log-F0 track from syllable codes.

    Raises:
        CorruptStream: If a code references a level outside the codebook
    """
    lines = [(*dequantize(code, codebook), code.dur_steps) for code in codes]
    return render_lines(lines, frame_shift_ms)


def decode_unquantized(fitted: Sequence[Tuple[DlopCoeffs, int]], frame_shift_ms: int = 16) -> F0Track:
    """Render fitted coefficients without quantization, for measuring quantizer loss."""
    return render_lines([(c.mean, c.slope, steps) for c, steps in fitted], frame_shift_ms)


def save_prosodic_codebook(codebook: ProsodicCodebook, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(codebook.to_dict(), indent=2))
    return path


def load_prosodic_codebook(path: Union[str, Path]) -> ProsodicCodebook:
    """
    Raises:
        ConfigError: If the file is missing or malformed
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Missing model file: {path}")
    try:
        document = json.loads(path.read_text())
        return ProsodicCodebook(
            float(document["mean"]["mu"]),
            float(document["mean"]["sigma"]),
            float(document["slope"]["mu"]),
            float(document["slope"]["sigma"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Invalid prosodic codebook {path}: {e}")
