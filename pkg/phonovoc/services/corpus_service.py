"""Synthetic CV-syllable corpus with known phone labels, syllable boundaries and F0.

Each utterance is a string of consonant-vowel syllables at about four syllables
per second between stretches of silence. Plosive syllables open with a silent
closure and a short noise burst, nasal syllables with a low-level murmur.
Reference syllable boundaries sit at the centre of every closure or murmur
after the first syllable.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import butter, lfilter

from phonovoc.services.frontend_service import AudioClip, FrameGrid
from phonovoc.services.snn_service import BoundarySet, read_boundaries, write_boundaries
from phonovoc.utils.errors import ConfigError, EmptyCorpus
from phonovoc.utils.schemes import TOY_CONSONANTS, TOY_VOWELS, PhonologicalScheme
from phonovoc.utils.wavio import read_wav, write_wav

logger = logging.getLogger(__name__)

SYLLABLE_MS = 250.0
NOISE_FLOOR = 1e-3
VOWEL_PEAK = 0.5
BURST_LEVEL = 0.05
MURMUR_PEAK = 0.05
RAMP_MS = 10.0

FORMANTS = {
    "a": (730.0, 1090.0, 2440.0),
    "e": (530.0, 1840.0, 2480.0),
    "i": (270.0, 2290.0, 3010.0),
    "o": (570.0, 840.0, 2410.0),
    "u": (300.0, 870.0, 2240.0),
}
FORMANT_BANDWIDTHS = (80.0, 100.0, 120.0)
BURST_BANDS = {"p": (400.0, 1500.0), "t": (3000.0, 6000.0), "k": (1500.0, 3000.0)}
MURMUR_FORMANTS = ((250.0, 100.0), (2200.0, 300.0))


@dataclass
class Label:
    start_ms: float
    end_ms: float
    phone: str


@dataclass
class Utterance:
    """One corpus utterance with its ground truth."""

    clip: AudioClip
    labels: List[Label]
    boundaries: BoundarySet
    f0_hz: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass(frozen=True)
class CorpusEntry:
    """Paths of one manifest line."""

    wav_path: Path
    labels_path: Path
    boundaries_path: Path


def _resonator(frequency: float, bandwidth: float, sample_rate: int) -> Tuple[np.ndarray, np.ndarray]:
    """Second-order resonator with unit gain at DC."""
    radius = np.exp(-np.pi * bandwidth / sample_rate)
    theta = 2.0 * np.pi * frequency / sample_rate
    a = np.array([1.0, -2.0 * radius * np.cos(theta), radius * radius])
    return np.array([a.sum()]), a


def _ramp(n_samples: int, sample_rate: int) -> np.ndarray:
    envelope = np.ones(n_samples)
    ramp = min(int(RAMP_MS * sample_rate / 1000.0), n_samples // 2)
    if ramp > 0:
        rise = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        envelope[:ramp] = rise
        envelope[n_samples - ramp:] = rise[::-1]
    return envelope


class _PulseSource:
    """Glottal pulse train whose phase runs on across voiced stretches."""

    def __init__(self, sample_rate: int):
        self.sample_rate = sample_rate
        self.phase = 0.0

    def pulses(self, f0_hz: np.ndarray) -> np.ndarray:
        phase = self.phase + np.cumsum(f0_hz) / self.sample_rate
        previous = np.concatenate([[self.phase], phase[:-1]])
        train = (np.floor(phase) > np.floor(previous)).astype(np.float64)
        self.phase = float(phase[-1]) if len(phase) else self.phase
        # Spectral tilt of the glottal source
        return lfilter([1.0], [1.0, -0.9], train)


def _vowel(source: _PulseSource, vowel: str, f0_hz: np.ndarray, level: float) -> np.ndarray:
    signal = source.pulses(f0_hz)
    for frequency, bandwidth in zip(FORMANTS[vowel], FORMANT_BANDWIDTHS):
        b, a = _resonator(frequency, bandwidth, source.sample_rate)
        signal = lfilter(b, a, signal)
    signal = signal * _ramp(len(signal), source.sample_rate)
    peak = np.max(np.abs(signal))
    return signal * (level / peak) if peak > 0 else signal


def _murmur(source: _PulseSource, f0_hz: np.ndarray) -> np.ndarray:
    signal = source.pulses(f0_hz)
    for frequency, bandwidth in MURMUR_FORMANTS:
        b, a = _resonator(frequency, bandwidth, source.sample_rate)
        signal = lfilter(b, a, signal)
    signal = signal * _ramp(len(signal), source.sample_rate)
    peak = np.max(np.abs(signal))
    return signal * (MURMUR_PEAK / peak) if peak > 0 else signal


def _burst(rng: np.random.Generator, consonant: str, n_samples: int, sample_rate: int) -> np.ndarray:
    low, high = BURST_BANDS[consonant]
    b, a = butter(2, [low, min(high, 0.45 * sample_rate)], btype="band", fs=sample_rate)
    noise = lfilter(b, a, rng.normal(size=n_samples))
    decay = np.exp(-np.arange(n_samples) / (0.004 * sample_rate))
    noise = noise * decay
    rms = np.sqrt(np.mean(noise ** 2))
    return noise * (BURST_LEVEL / rms) if rms > 0 else noise


def generate_utterance(
    rng: np.random.Generator,
    n_syllables: int,
    sample_rate: int = 16000,
    consonants: Sequence[str] = TOY_CONSONANTS,
    vowels: Sequence[str] = TOY_VOWELS,
) -> Utterance:
    """
    Synthesize one CV-syllable utterance.

    Args:
        rng: Seeded generator; the utterance depends on nothing else
        n_syllables: Number of syllables
        sample_rate: Output sample rate
        consonants: Onset inventory drawn from p, t, k, m
        vowels: Nucleus inventory drawn from a, e, i, o, u

    Returns:
        Utterance: Audio, phone labels, internal syllable boundaries and the
        generating F0 per sample (0 where unvoiced)
    """
    if n_syllables < 1:
        raise ValueError(f"An utterance needs at least one syllable, got {n_syllables}")
    unknown = (set(consonants) - set(TOY_CONSONANTS)) | (set(vowels) - set(TOY_VOWELS))
    if unknown or not consonants or not vowels:
        raise ValueError(f"Unsupported phone inventory: {sorted(unknown) or 'empty'}")

    def samples(ms: float) -> int:
        return int(round(ms * sample_rate / 1000.0))

    source = _PulseSource(sample_rate)
    pieces: List[np.ndarray] = []
    f0_pieces: List[np.ndarray] = []
    labels: List[Label] = []
    boundaries: List[float] = []
    cursor = 0

    def append(signal: np.ndarray, phone: str, f0: Optional[np.ndarray] = None):
        nonlocal cursor
        start_ms = 1000.0 * cursor / sample_rate
        pieces.append(signal)
        f0_pieces.append(f0 if f0 is not None else np.zeros(len(signal)))
        cursor += len(signal)
        labels.append(Label(start_ms, 1000.0 * cursor / sample_rate, phone))

    base_log_f0 = np.log(rng.uniform(100.0, 160.0))
    append(np.zeros(samples(rng.uniform(100.0, 150.0))), "sil")

    for index in range(n_syllables):
        consonant = str(rng.choice(list(consonants)))
        vowel = str(rng.choice(list(vowels)))
        onset_start = cursor

        centre_s = cursor / sample_rate + SYLLABLE_MS / 2000.0
        mean_log_f0 = base_log_f0 - 0.1 * centre_s + rng.normal(0.0, 0.1)
        slope = rng.uniform(-1.5, 1.5)

        def contour(n: int) -> np.ndarray:
            times = (cursor + np.arange(n)) / sample_rate - centre_s
            return np.exp(mean_log_f0 + slope * times)

        if consonant == "m":
            n_murmur = samples(rng.uniform(60.0, 80.0))
            f0 = contour(n_murmur)
            append(_murmur(source, f0), "m", f0)
            onset_ms = 1000.0 * n_murmur / sample_rate
        else:
            n_closure = samples(rng.uniform(60.0, 80.0))
            append(np.zeros(n_closure), "cl")
            append(_burst(rng, consonant, samples(rng.uniform(10.0, 15.0)), sample_rate), consonant)
            onset_ms = 1000.0 * n_closure / sample_rate
        if index > 0:
            boundaries.append(1000.0 * onset_start / sample_rate + onset_ms / 2.0)

        used_ms = 1000.0 * (cursor - onset_start) / sample_rate
        n_vowel = samples(SYLLABLE_MS - used_ms + rng.uniform(-15.0, 15.0))
        f0 = contour(n_vowel)
        append(_vowel(source, vowel, f0, VOWEL_PEAK * rng.uniform(0.8, 1.0)), vowel, f0)

    append(np.zeros(samples(rng.uniform(100.0, 150.0))), "sil")

    signal = np.concatenate(pieces) + rng.normal(0.0, NOISE_FLOOR, cursor)
    clip = AudioClip(np.clip(signal, -1.0, 1.0), sample_rate)
    return Utterance(clip, labels, BoundarySet(np.array(boundaries)), np.concatenate(f0_pieces))


def write_labels(path: Union[str, Path], labels: Sequence[Label]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{label.start_ms:.1f} {label.end_ms:.1f} {label.phone}\n" for label in labels))
    return path


def read_labels(path: Union[str, Path]) -> List[Label]:
    """
    Read "start_ms end_ms phone" lines.

    Raises:
        ConfigError: If the file is missing or a line is malformed
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Label file not found: {path}")
    labels = []
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ConfigError(f"{path}:{number}: expected 'start end phone', got {line!r}")
        try:
            labels.append(Label(float(parts[0]), float(parts[1]), parts[2]))
        except ValueError:
            raise ConfigError(f"{path}:{number}: invalid time in {line!r}")
    return labels


def write_corpus(
    out_dir: Union[str, Path],
    n_utterances: int = 20,
    seed: int = 0,
    syllables_per_utterance: Tuple[int, int] = (6, 10),
    sample_rate: int = 16000,
    consonants: Sequence[str] = TOY_CONSONANTS,
    vowels: Sequence[str] = TOY_VOWELS,
    jobs: int = 1,
) -> Path:
    """
    Generate a corpus on disk and return its manifest path.

    Utterance i is drawn from a generator seeded with (seed, i), so the
    corpus is identical for any number of workers.

    Args:
        out_dir: Output directory (created if needed)
        n_utterances: Number of utterances
        seed: Corpus seed
        syllables_per_utterance: Inclusive range of syllable counts
        sample_rate: Audio sample rate
        consonants: Onset inventory
        vowels: Nucleus inventory
        jobs: Worker threads

    Returns:
        Path: manifest.tsv with one wav/labels/boundaries line per utterance
    """
    if n_utterances < 1:
        raise ValueError(f"n_utterances must be positive, got {n_utterances}")
    low, high = syllables_per_utterance
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def build(index: int) -> str:
        rng = np.random.default_rng([seed, index])
        utterance = generate_utterance(rng, int(rng.integers(low, high + 1)), sample_rate, consonants, vowels)
        stem = f"utt_{index:04d}"
        write_wav(out_dir / f"{stem}.wav", utterance.clip)
        write_labels(out_dir / f"{stem}.lab", utterance.labels)
        write_boundaries(out_dir / f"{stem}.bnd", utterance.boundaries)
        return f"{stem}.wav\t{stem}.lab\t{stem}.bnd\n"

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        lines = list(pool.map(build, range(n_utterances)))

    manifest = out_dir / "manifest.tsv"
    manifest.write_text("".join(lines))
    logger.info("Wrote %d utterances to %s", n_utterances, out_dir)
    return manifest


def load_manifest(path: Union[str, Path]) -> List[CorpusEntry]:
    """
    Parse a manifest of tab-separated wav, labels and boundaries paths.

    Relative paths are resolved against the manifest directory.

    Raises:
        ConfigError: If the manifest is missing or a line is malformed
        EmptyCorpus: If the manifest lists no utterance
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Manifest not found: {path}")
    entries = []
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ConfigError(f"{path}:{number}: expected wav<TAB>labels<TAB>boundaries")
        entries.append(CorpusEntry(*(path.parent / part.strip() for part in parts)))
    if not entries:
        raise EmptyCorpus(f"Manifest lists no utterances: {path}")
    return entries


def load_utterance(entry: CorpusEntry, sample_rate: int = 16000) -> Utterance:
    return Utterance(
        read_wav(entry.wav_path, sample_rate),
        read_labels(entry.labels_path),
        read_boundaries(entry.boundaries_path),
    )


def frame_labels(labels: Sequence[Label], grid: FrameGrid, n_frames: int) -> List[str]:
    """Phone at the centre of every frame; frames past the last label take its phone."""
    if not labels:
        raise ValueError("No labels to align")
    starts = np.array([label.start_ms for label in labels])
    centres = grid.frame_centers_ms(n_frames)
    positions = np.clip(np.searchsorted(starts, centres, side="right") - 1, 0, len(labels) - 1)
    return [labels[p].phone for p in positions]


def label_targets(phones: Sequence[str], scheme: PhonologicalScheme) -> np.ndarray:
    """
    (n_frames, K) binary class targets of a phone sequence.

    Raises:
        ConfigError: If a phone has no class mapping in the scheme
    """
    try:
        return np.array([scheme.phone_bits(phone) for phone in phones], dtype=np.uint8).reshape(-1, scheme.k)
    except KeyError as e:
        raise ConfigError(f"Phone {e} is not mapped in scheme {scheme.name}")
