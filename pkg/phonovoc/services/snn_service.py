"""
Spiking syllable boundary detector.

A channel-weighted cepstral series is filtered with a difference-of-Gaussians
kernel so that energy minima become drive peaks. The drive feeds 10
excitatory leaky integrate-and-fire neurons; their spikes kick 10 inhibitory
neurons, whose spikes in turn inhibit the excitatory population. Each
inhibitory burst marks one putative syllable boundary.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from phonovoc.utils.errors import ConfigError, DimensionError, EmptyCorpus, InvalidDrive

logger = logging.getLogger(__name__)

N_CEPSTRA = 13
SIMULATION_STEP_MS = 1.0
MATCH_WINDOW_MS = 80.0
UNMATCHED_PENALTY_MS = 100.0


def _default_channel_weights() -> List[float]:
    return [1.0] + [0.0] * (N_CEPSTRA - 1)


@dataclass
class SnnParams:
    """Every tunable of the detector, serialized verbatim as JSON."""

    channel_weights: List[float] = field(default_factory=_default_channel_weights)
    # Temporal kernel (difference of Gaussians, sampled at the frame rate)
    sigma_narrow_ms: float = 15.0
    sigma_wide_ms: float = 50.0
    offset_ms: float = 0.0
    drive_gain: float = 3.0
    drive_bias: float = -0.8
    # Leaky integrate-and-fire neurons
    n_exc: int = 10
    n_inh: int = 10
    tau_exc_ms: float = 20.0
    tau_inh_ms: float = 10.0
    threshold: float = 1.0
    threshold_spread: float = 0.1
    reset: float = 0.0
    v_rest: float = 0.0
    refractory_ms: float = 5.0
    # Coupling, in units of threshold: w_ei kicks every inhibitory membrane
    # per excitatory spike, w_ie adds to the inhibitory current every
    # excitatory neuron receives
    w_ei: float = 0.4
    w_ie: float = 0.5
    tau_inh_syn_ms: float = 50.0
    # Burst rule
    burst_min_spikes: int = 3
    burst_window_ms: float = 20.0
    min_separation_ms: float = 50.0

    def __post_init__(self):
        self.channel_weights = [float(w) for w in self.channel_weights]
        if len(self.channel_weights) != N_CEPSTRA:
            raise DimensionError(f"channel_weights needs {N_CEPSTRA} values, got {len(self.channel_weights)}")
        for name in ("tau_exc_ms", "tau_inh_ms", "tau_inh_syn_ms", "burst_window_ms",
                     "sigma_narrow_ms", "sigma_wide_ms"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.refractory_ms < 0:
            raise ConfigError(f"refractory_ms must be non-negative, got {self.refractory_ms}")
        if self.min_separation_ms <= 0:
            raise ConfigError(f"min_separation_ms must be positive, got {self.min_separation_ms}")
        if self.n_exc < 1 or self.n_inh < 1 or self.burst_min_spikes < 1:
            raise ConfigError("Neuron counts and burst size must be at least 1")

    def thresholds(self, n_neurons: int) -> np.ndarray:
        """Per-neuron thresholds spread evenly by +/- threshold_spread (relative)."""
        if n_neurons == 1:
            return np.array([self.threshold])
        return self.threshold * (1.0 + self.threshold_spread * np.linspace(-1.0, 1.0, n_neurons))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "SnnParams":
        return cls(**values)


@dataclass
class SpikeTrain:
    """Ordered spike times (ms) per neuron."""

    spikes: List[np.ndarray]

    @property
    def n_spikes(self) -> int:
        return sum(len(s) for s in self.spikes)

    def events(self) -> List[Tuple[float, int]]:
        """All spikes as (time_ms, neuron) pairs sorted by time then neuron."""
        pairs = [(float(t), neuron) for neuron, times in enumerate(self.spikes) for t in times]
        return sorted(pairs)


@dataclass
class BoundarySet:
    """Strictly increasing syllable boundary times in milliseconds."""

    times_ms: np.ndarray

    def __post_init__(self):
        self.times_ms = np.asarray(self.times_ms, dtype=np.float64).reshape(-1)
        if np.any(np.diff(self.times_ms) <= 0):
            raise ValueError("Boundary times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times_ms)

    def __iter__(self):
        return iter(self.times_ms.tolist())


def weight_and_reduce(cepstra: np.ndarray, weights: Sequence[float]) -> np.ndarray:
    """
    Project 13-dim cepstral frames onto the channel weights.

    Raises:
        DimensionError: If the weights or frames are not 13-dimensional
    """
    cepstra = np.atleast_2d(np.asarray(cepstra, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (N_CEPSTRA,):
        raise DimensionError(f"Expected {N_CEPSTRA} channel weights, got {weights.shape}")
    if cepstra.size and cepstra.shape[1] != N_CEPSTRA:
        raise DimensionError(f"Expected {N_CEPSTRA} cepstra per frame, got {cepstra.shape[1]}")
    return cepstra @ weights


def temporal_kernel(params: SnnParams, frame_shift_ms: float) -> np.ndarray:
    """Wide minus narrow Gaussian (each summing to 1) sampled every frame_shift_ms over +/- 3 wide sigmas."""
    half = max(1, int(np.ceil(3.0 * params.sigma_wide_ms / frame_shift_ms)))
    times = np.arange(-half, half + 1) * frame_shift_ms

    def gaussian(sigma):
        values = np.exp(-0.5 * (times / sigma) ** 2)
        return values / values.sum()

    return gaussian(params.sigma_wide_ms) - gaussian(params.sigma_narrow_ms)


def convolve_drive(series: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-length convolution with zero-padded edges."""
    series = np.asarray(series, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if len(series) == 0:
        return series.copy()
    full = np.convolve(series, kernel, mode="full")
    start = (len(kernel) - 1) // 2
    return full[start:start + len(series)]


def run_lif_network(drive: np.ndarray, params: SnnParams) -> Tuple[SpikeTrain, SpikeTrain]:
    """
    Simulate the excitatory/inhibitory network with 1 ms Euler steps.

    Each membrane follows tau * dV/dt = -(V - v_rest) + I. A neuron spikes
    when V reaches its threshold, is reset, and is held at reset for
    refractory_ms. Excitatory spikes raise every inhibitory membrane by
    w_ei * threshold; inhibitory spikes add w_ie * threshold to an
    exponentially decaying current subtracted from every excitatory input.
    With v_rest = reset = 0, scaling the drive and threshold by the same
    positive factor leaves every spike time unchanged.

    Args:
        drive: (n_steps,) current shared by all excitatory neurons, or
            (n_steps, n_exc) per-neuron currents
        params: Network parameters

    Returns:
        Tuple of (excitatory, inhibitory) spike trains

    Raises:
        InvalidDrive: If the drive contains non-finite values
    """
    drive = np.asarray(drive, dtype=np.float64)
    if not np.all(np.isfinite(drive)):
        raise InvalidDrive("Drive contains non-finite values")
    if drive.ndim == 1:
        drive = np.repeat(drive[:, None], params.n_exc, axis=1)
    if drive.ndim != 2 or drive.shape[1] != params.n_exc:
        raise DimensionError(f"Drive must have shape (n_steps, {params.n_exc}), got {drive.shape}")

    dt = SIMULATION_STEP_MS
    theta_exc = params.thresholds(params.n_exc)
    theta_inh = params.thresholds(params.n_inh)
    v_exc = np.full(params.n_exc, params.v_rest)
    v_inh = np.full(params.n_inh, params.v_rest)
    last_exc = np.full(params.n_exc, -np.inf)
    last_inh = np.full(params.n_inh, -np.inf)
    inhibition = 0.0
    synaptic_decay = np.exp(-dt / params.tau_inh_syn_ms)
    kick_ei = params.w_ei * params.threshold
    kick_ie = params.w_ie * params.threshold
    exc_spikes: List[List[float]] = [[] for _ in range(params.n_exc)]
    inh_spikes: List[List[float]] = [[] for _ in range(params.n_inh)]

    for step in range(drive.shape[0]):
        now = step * dt
        free_exc = (now - last_exc) > params.refractory_ms
        free_inh = (now - last_inh) > params.refractory_ms

        current = drive[step] - inhibition
        v_exc = np.where(free_exc, v_exc + dt / params.tau_exc_ms * (params.v_rest - v_exc + current), params.reset)
        v_inh = np.where(free_inh, v_inh + dt / params.tau_inh_ms * (params.v_rest - v_inh), params.reset)

        fired_exc = free_exc & (v_exc >= theta_exc)
        if fired_exc.any():
            for neuron in np.flatnonzero(fired_exc):
                exc_spikes[neuron].append(now)
            v_exc[fired_exc] = params.reset
            last_exc[fired_exc] = now
            v_inh = np.where(free_inh, v_inh + kick_ei * int(fired_exc.sum()), v_inh)

        fired_inh = free_inh & (v_inh >= theta_inh)
        inhibition *= synaptic_decay
        if fired_inh.any():
            for neuron in np.flatnonzero(fired_inh):
                inh_spikes[neuron].append(now)
            v_inh[fired_inh] = params.reset
            last_inh[fired_inh] = now
            inhibition += kick_ie * int(fired_inh.sum())

    return SpikeTrain([np.array(s) for s in exc_spikes]), SpikeTrain([np.array(s) for s in inh_spikes])


def detect_boundaries(inh: SpikeTrain, params: SnnParams) -> BoundarySet:
    """
    One boundary per inhibitory burst.

    A burst is at least burst_min_spikes spikes from distinct neurons within
    burst_window_ms of its first spike; its boundary is the median spike
    time. Boundaries closer than min_separation_ms to the previous one are
    dropped.
    """
    events = inh.events()
    boundaries: List[float] = []
    position = 0
    while position < len(events):
        start_time = events[position][0]
        end = position
        while end < len(events) and events[end][0] - start_time <= params.burst_window_ms:
            end += 1
        burst = events[position:end]
        if len({neuron for _, neuron in burst}) >= params.burst_min_spikes:
            time = float(np.median([t for t, _ in burst]))
            if not boundaries or time - boundaries[-1] >= params.min_separation_ms:
                boundaries.append(time)
            position = end
        else:
            position += 1
    return BoundarySet(np.array(boundaries))


def _as_times(boundaries) -> np.ndarray:
    if isinstance(boundaries, BoundarySet):
        return boundaries.times_ms
    return np.asarray(list(boundaries), dtype=np.float64)


def _greedy_matches(detected: np.ndarray, reference: np.ndarray, tolerance_ms: float) -> List[Tuple[int, int, float]]:
    candidates = sorted(
        (abs(d - r), i, j)
        for i, d in enumerate(detected)
        for j, r in enumerate(reference)
        if abs(d - r) <= tolerance_ms
    )
    used_detected, used_reference, matches = set(), set(), []
    for gap, i, j in candidates:
        if i not in used_detected and j not in used_reference:
            used_detected.add(i)
            used_reference.add(j)
            matches.append((i, j, gap))
    return matches


def syllabic_distance(detected, reference) -> float:
    """
    Matching cost in milliseconds.

    Boundaries are matched one-to-one, closest pairs first, within +/- 80 ms.
    The cost is the summed offset of the matches plus 100 ms for every
    unmatched boundary on either side.
    """
    detected, reference = _as_times(detected), _as_times(reference)
    matches = _greedy_matches(detected, reference, MATCH_WINDOW_MS)
    unmatched = len(detected) + len(reference) - 2 * len(matches)
    return float(sum(gap for _, _, gap in matches) + UNMATCHED_PENALTY_MS * unmatched)


def boundary_f_score(detected, reference, tolerance_ms: float = 50.0) -> float:
    """Harmonic mean of boundary precision and recall under a +/- tolerance."""
    detected, reference = _as_times(detected), _as_times(reference)
    if len(detected) == 0 and len(reference) == 0:
        return 1.0
    if len(detected) == 0 or len(reference) == 0:
        return 0.0
    hits = len(_greedy_matches(detected, reference, tolerance_ms))
    if hits == 0:
        return 0.0
    precision, recall = hits / len(detected), hits / len(reference)
    return 2.0 * precision * recall / (precision + recall)


def drive_from_cepstra(
    cepstra: np.ndarray, params: SnnParams, frame_shift_ms: float = 16.0, window_ms: float = 25.0
) -> np.ndarray:
    """
    Per-millisecond input current for the excitatory population.

    The weighted series is mean-removed and edge-extended before filtering,
    peak-normalized, interpolated from frame centres to 1 kHz (delayed by
    offset_ms) and mapped through drive_gain and drive_bias.
    """
    series = weight_and_reduce(cepstra, params.channel_weights)
    if len(series) == 0:
        return np.zeros(0)
    series = series - series.mean()
    kernel = temporal_kernel(params, frame_shift_ms)
    pad = len(kernel)
    filtered = convolve_drive(np.pad(series, pad, mode="edge"), kernel)[pad:pad + len(series)]

    peak = filtered.max()
    normalized = filtered / peak if peak > 1e-12 else np.zeros_like(filtered)

    centres = np.arange(len(series)) * frame_shift_ms + window_ms / 2.0
    n_steps = int(centres[-1] + window_ms / 2.0)
    times = np.arange(n_steps) * SIMULATION_STEP_MS
    resampled = np.interp(times - params.offset_ms, centres, normalized)
    return params.drive_gain * resampled + params.drive_bias


def detect_syllables(
    cepstra: np.ndarray, params: SnnParams, frame_shift_ms: float = 16.0, window_ms: float = 25.0
) -> BoundarySet:
    """Syllable boundaries (ms) of one utterance from its 13-dim cepstra."""
    drive = drive_from_cepstra(cepstra, params, frame_shift_ms, window_ms)
    _, inh = run_lif_network(drive, params)
    return detect_boundaries(inh, params)


# Trainable coordinates: 13 channel weights then kernel and drive shape
_SHAPE_FIELDS = ("sigma_narrow_ms", "sigma_wide_ms", "offset_ms", "drive_gain", "drive_bias")
_SHAPE_STEPS = np.array([4.0, 10.0, 10.0, 0.3, 0.1])
_CHANNEL_STEP = 0.3


def _to_vector(params: SnnParams) -> np.ndarray:
    return np.array([*params.channel_weights, *(getattr(params, name) for name in _SHAPE_FIELDS)])


def _from_vector(vector: np.ndarray, template: SnnParams) -> Optional[SnnParams]:
    """Params for a search point, or None if it violates the kernel or gain limits."""
    shape = dict(zip(_SHAPE_FIELDS, (float(v) for v in vector[N_CEPSTRA:])))
    if shape["sigma_narrow_ms"] < 2.0 or shape["sigma_wide_ms"] < shape["sigma_narrow_ms"] + 5.0:
        return None
    if shape["drive_gain"] <= 0.1 or not np.any(vector[:N_CEPSTRA]):
        return None
    return replace(template, channel_weights=[float(v) for v in vector[:N_CEPSTRA]], **shape)


def corpus_cost(
    corpus: Sequence[Tuple[np.ndarray, Sequence[float]]],
    params: SnnParams,
    frame_shift_ms: float = 16.0,
    window_ms: float = 25.0,
) -> float:
    """Summed syllabic distance over (cepstra, reference boundaries) pairs."""
    return float(sum(
        syllabic_distance(detect_syllables(cepstra, params, frame_shift_ms, window_ms), reference)
        for cepstra, reference in corpus
    ))


def train_snn(
    corpus: Sequence[Tuple[np.ndarray, Sequence[float]]],
    init: SnnParams,
    budget: int,
    seed: int = 0,
    frame_shift_ms: float = 16.0,
    window_ms: float = 25.0,
) -> SnnParams:
    """
    Derivative-free search for channel weights and kernel shape.

    Half of the evaluation budget goes to seeded random perturbations of the
    best point so far, the rest to coordinate descent with step halving.
    Only improvements are accepted, so the returned cost never exceeds the
    initial one.

    Args:
        corpus: (cepstra, reference boundaries in ms) per utterance
        init: Starting parameters
        budget: Number of cost evaluations after the initial one
        seed: Seed of the random perturbations
        frame_shift_ms: Frame shift of the cepstra
        window_ms: Analysis window of the cepstra

    Returns:
        SnnParams: Best parameters found

    Raises:
        EmptyCorpus: If the corpus is empty
    """
    if not corpus:
        raise EmptyCorpus("SNN training needs at least one labeled utterance")
    if budget <= 0:
        return init

    rng = np.random.default_rng(seed)
    steps = np.concatenate([np.full(N_CEPSTRA, _CHANNEL_STEP), _SHAPE_STEPS])
    best_vector = _to_vector(init)
    best_params = init
    best_cost = corpus_cost(corpus, init, frame_shift_ms, window_ms)
    initial_cost = best_cost
    evaluations = 0

    def consider(vector):
        nonlocal best_vector, best_params, best_cost, evaluations
        candidate = _from_vector(vector, init)
        if candidate is None:
            return False
        evaluations += 1
        cost = corpus_cost(corpus, candidate, frame_shift_ms, window_ms)
        if cost < best_cost:
            best_vector, best_params, best_cost = vector, candidate, cost
            return True
        return False

    random_budget = budget // 2
    attempts = 0
    while evaluations < random_budget and attempts < 10 * budget:
        attempts += 1
        consider(best_vector + rng.normal(size=len(steps)) * steps)

    while evaluations < budget and steps.max() > 1e-3:
        improved = False
        for coordinate in range(len(steps)):
            for sign in (1.0, -1.0):
                if evaluations >= budget:
                    break
                trial = best_vector.copy()
                trial[coordinate] += sign * steps[coordinate]
                if consider(trial):
                    improved = True
                    break
        if not improved:
            steps = steps / 2.0

    logger.info("SNN training: cost %.1f -> %.1f ms over %d evaluations", initial_cost, best_cost, evaluations)
    return best_params


def save_snn_params(params: SnnParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(params.to_dict(), indent=2))
    return path


def load_snn_params(path: Union[str, Path]) -> SnnParams:
    """
    Raises:
        ConfigError: If the file is missing or has unknown fields
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Missing model file: {path}")
    try:
        return SnnParams.from_dict(json.loads(path.read_text()))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid SNN parameter file {path}: {e}")


def read_boundaries(path: Union[str, Path]) -> BoundarySet:
    """Read whitespace-separated boundary times (ms) from a text file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Boundary file not found: {path}")
    try:
        values = [float(token) for token in path.read_text().split()]
        return BoundarySet(np.array(sorted(values)))
    except ValueError as e:
        raise ConfigError(f"Invalid boundary file {path}: {e}")


def write_boundaries(path: Union[str, Path], boundaries) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(" ".join(f"{t:.1f}" for t in _as_times(boundaries)) + "\n")
    return path
