import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.signal import deconvolve, lfilter
from scipy.special import expit

from phonovoc.services.frontend_service import AudioClip, F0Track, FrameGrid, deltas, raw_frames
from phonovoc.services.neural_service import MlpWeights, mlp_forward
from phonovoc.utils.errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)

LPC_ORDER = 24
N_STATIC = LPC_ORDER + 4
N_PARAMS = 3 * N_STATIC
GAIN_FLOOR = 0.5 * np.log(1e-10)
HNR_RATIO_LIMITS = (1e-3, 1.0 - 1e-3)
HNR_FLOOR = float(np.log(HNR_RATIO_LIMITS[0] / HNR_RATIO_LIMITS[1]))
GLOTTAL_MAG_LIMITS = (1e-3, 0.98)
LSP_MIN_SEPARATION = 1e-3

# Column layout of the static block
GAIN = LPC_ORDER
HNR = LPC_ORDER + 1
GLOTTAL_ANGLE = LPC_ORDER + 2
GLOTTAL_LOG_MAG = LPC_ORDER + 3


@dataclass
class SpeechParams:
    """
    Per-frame vocoder parameters.

    The first 28 columns are statics (24 LSPs in radians, log gain, log HNR,
    glottal pole angle, log glottal pole magnitude), followed by their
    deltas and delta-deltas.
    """

    values: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if self.values.size and self.values.shape[1] not in (N_STATIC, N_PARAMS):
            raise DimensionError(f"Speech parameters need {N_STATIC} or {N_PARAMS} columns, got {self.values.shape[1]}")

    @classmethod
    def from_statics(cls, statics: np.ndarray) -> "SpeechParams":
        statics = np.atleast_2d(np.asarray(statics, dtype=np.float64))
        first = deltas(statics)
        return cls(np.hstack([statics, first, deltas(first)]))

    @property
    def n_frames(self) -> int:
        return self.values.shape[0] if self.values.size else 0

    @property
    def statics(self) -> np.ndarray:
        return self.values[:, :N_STATIC]

    @property
    def lsp(self) -> np.ndarray:
        return self.values[:, :LPC_ORDER]

    @property
    def gain(self) -> np.ndarray:
        return self.values[:, GAIN]

    @property
    def hnr(self) -> np.ndarray:
        return self.values[:, HNR]

    @property
    def glottal_angle(self) -> np.ndarray:
        return self.values[:, GLOTTAL_ANGLE]

    @property
    def glottal_log_mag(self) -> np.ndarray:
        return self.values[:, GLOTTAL_LOG_MAG]


def levinson_durbin(r: np.ndarray, order: int) -> Tuple[np.ndarray, float, np.ndarray]:
    """
    Solve the normal equations for A(z) = 1 + a1 z^-1 + ... + ap z^-p.

    Args:
        r: Autocorrelation sequence, at least order + 1 values
        order: Predictor order

    Returns:
        Tuple of (coefficients with a[0] = 1, prediction error energy,
        reflection coefficients)
    """
    r = np.asarray(r, dtype=np.float64)
    a = np.zeros(order + 1)
    a[0] = 1.0
    reflection = np.zeros(order)
    error = r[0]
    for i in range(1, order + 1):
        if error <= 0:
            break
        acc = r[i] + np.dot(a[1:i], r[i - 1:0:-1])
        k = -acc / error
        reflection[i - 1] = k
        a[1:i] = a[1:i] + k * a[i - 1:0:-1]
        a[i] = k
        error *= 1.0 - k * k
    return a, max(float(error), 0.0), reflection


def autocorrelation(frame: np.ndarray, max_lag: int) -> np.ndarray:
    full = np.correlate(frame, frame, mode="full")
    middle = len(frame) - 1
    return full[middle:middle + max_lag + 1]


def stabilize_lpc(a: np.ndarray) -> np.ndarray:
    """Reflect any pole outside the unit circle to its conjugate reciprocal."""
    roots = np.roots(a)
    outside = np.abs(roots) >= 1.0
    if not outside.any():
        return np.asarray(a, dtype=np.float64)
    roots[outside] = 1.0 / np.conj(roots[outside])
    rebuilt = np.real(np.poly(roots))
    return np.pad(rebuilt, (0, len(a) - len(rebuilt)))


def lpc_from_frame(frame: np.ndarray, order: int = LPC_ORDER) -> Tuple[np.ndarray, float]:
    """
    Autocorrelation-method LPC of a windowed frame.

    Returns:
        Tuple of (stable coefficients, prediction error energy); an all-zero
        frame returns A(z) = 1 and zero error
    """
    r = autocorrelation(frame, order)
    if r[0] <= 1e-12:
        a = np.zeros(order + 1)
        a[0] = 1.0
        return a, 0.0
    r[0] *= 1.0 + 1e-9
    a, error, _ = levinson_durbin(r, order)
    return stabilize_lpc(a), error


def lpc_to_lsp(a: np.ndarray) -> np.ndarray:
    """
    Line spectral pairs (radians, ascending in (0, pi)) of an even-order predictor.

    The sum and difference polynomials P and Q have their trivial roots at
    -1 and +1 removed before root finding.
    """
    a = np.asarray(a, dtype=np.float64)
    order = len(a) - 1
    if order % 2:
        raise ValueError(f"LSP conversion needs an even order, got {order}")
    extended = np.append(a, 0.0)
    reversed_ = extended[::-1]
    p_poly, _ = deconvolve(extended + reversed_, [1.0, 1.0])
    q_poly, _ = deconvolve(extended - reversed_, [1.0, -1.0])
    angles = np.sort(np.abs(np.angle(np.concatenate([np.roots(p_poly), np.roots(q_poly)]))))
    # Each conjugate pair contributes its angle twice
    return angles[::2]


def lsp_to_lpc(lsp: np.ndarray) -> np.ndarray:
    """Rebuild A(z) from ascending line spectral pairs; odd positions belong to P."""
    lsp = np.asarray(lsp, dtype=np.float64)
    p_zeros = np.exp(1j * lsp[0::2])
    q_zeros = np.exp(1j * lsp[1::2])
    p_poly = np.real(np.poly(np.concatenate([p_zeros, np.conj(p_zeros)])))
    q_poly = np.real(np.poly(np.concatenate([q_zeros, np.conj(q_zeros)])))
    p_full = np.convolve(p_poly, [1.0, 1.0])
    q_full = np.convolve(q_poly, [1.0, -1.0])
    return (0.5 * (p_full + q_full))[:-1]


def stabilize_lsp(lsp: np.ndarray, min_separation: float = LSP_MIN_SEPARATION) -> np.ndarray:
    """Sort and push apart LSPs so they are strictly ascending inside (0, pi)."""
    lsp = np.atleast_2d(np.asarray(lsp, dtype=np.float64))
    result = np.sort(lsp, axis=1)
    order = result.shape[1]
    lower = min_separation * np.arange(1, order + 1)
    upper = np.pi - min_separation * np.arange(order, 0, -1)
    result = np.clip(result, lower, upper)
    for i in range(1, order):
        result[:, i] = np.maximum(result[:, i], result[:, i - 1] + min_separation)
    return result


def uniform_lsp(order: int = LPC_ORDER) -> np.ndarray:
    """LSPs of A(z) = 1."""
    return np.arange(1, order + 1) * np.pi / (order + 1)


def glottal_filter(angle: float, log_mag: float) -> np.ndarray:
    """Denominator of the 2nd-order all-pole glottal filter with poles m e^{+/- jt}."""
    m = float(np.exp(log_mag))
    return np.array([1.0, -2.0 * m * np.cos(angle), m * m])


def fit_glottal_pole(residual: np.ndarray) -> Tuple[float, float]:
    """Dominant pole of an order-2 predictor fitted to the residual, as (angle, log magnitude)."""
    a, _ = lpc_from_frame(residual, 2)
    roots = np.roots(a)
    if len(roots) == 0:
        return 0.0, float(np.log(GLOTTAL_MAG_LIMITS[0]))
    dominant = roots[np.argmax(np.abs(roots))]
    magnitude = float(np.clip(np.abs(dominant), *GLOTTAL_MAG_LIMITS))
    return float(abs(np.angle(dominant))), float(np.log(magnitude))


def harmonic_ratio(residual: np.ndarray, period: float) -> float:
    """
    Harmonic share of the residual energy.

    The residual is split by the comb (1 + z^-T) / 2, whose passbands sit on
    the F0 harmonics, and its complement (1 - z^-T) / 2. Aperiodic energy
    leaks equally into both, so the harmonic energy is their difference and
    the share is (E_periodic - E_aperiodic) / (E_periodic + E_aperiodic).
    """
    lag = int(round(period))
    lag = min(max(lag, 1), len(residual) - 32)
    if lag < 1:
        return HNR_RATIO_LIMITS[0]
    head, tail = residual[:-lag], residual[lag:]
    periodic = 0.5 * (head + tail)
    aperiodic = 0.5 * (head - tail)
    e_periodic, e_aperiodic = float(np.dot(periodic, periodic)), float(np.dot(aperiodic, aperiodic))
    total = e_periodic + e_aperiodic
    if total <= 1e-20:
        return HNR_RATIO_LIMITS[0]
    return float(np.clip((e_periodic - e_aperiodic) / total, *HNR_RATIO_LIMITS))


def extract_speech_params(clip: AudioClip, grid: FrameGrid, f0: F0Track, order: int = LPC_ORDER) -> SpeechParams:
    """
    Analyze a clip into 84-dim vocoder parameters.

    Per frame: order-24 LPC of the Hamming-windowed frame (converted to
    LSPs), log RMS of the prediction residual, log harmonic-to-noise ratio
    from the residual's energy split at the F0 harmonic comb, and the glottal
    pole of an order-2 fit to the residual. Deltas are appended.

    Args:
        clip: Input audio
        grid: Frame grid
        f0: Pitch track on the same grid
        order: LPC order

    Returns:
        SpeechParams: One row per frame

    Raises:
        DimensionError: If the pitch track does not match the frame count
    """
    frames = raw_frames(clip, grid)
    n_frames = frames.shape[0]
    if f0.n_frames != n_frames:
        raise DimensionError(f"F0 track has {f0.n_frames} frames, audio has {n_frames}")

    window = np.hamming(frames.shape[1])
    window_energy = float(np.dot(window, window))
    periods = clip.sample_rate / f0.hz
    statics = np.zeros((n_frames, order + 4))
    for index, frame in enumerate(frames):
        a, error = lpc_from_frame(frame * window, order)
        if error <= 0.0:
            statics[index] = [*uniform_lsp(order), GAIN_FLOOR, HNR_FLOOR, 0.0, np.log(GLOTTAL_MAG_LIMITS[0])]
            continue
        residual = lfilter(a, [1.0], frame)
        ratio = harmonic_ratio(residual, periods[index])
        angle, log_mag = fit_glottal_pole(residual * window)
        statics[index, :order] = lpc_to_lsp(a)
        statics[index, order] = max(0.5 * np.log(max(error / window_energy, 1e-10)), GAIN_FLOOR)
        statics[index, order + 1] = np.log(ratio / (1.0 - ratio))
        statics[index, order + 2] = angle
        statics[index, order + 3] = log_mag

    return SpeechParams.from_statics(statics)


@dataclass
class SynthesisNet:
    """Maps context-stacked posteriors (K x context) to 84 speech parameters."""

    weights: MlpWeights
    k: int
    context: int = 11

    def __post_init__(self):
        if self.weights.output_kind != "linear":
            raise ConfigError("The synthesis network needs a linear output layer")
        if self.weights.input_dim != self.k * self.context:
            raise DimensionError(
                f"Synthesis input is {self.weights.input_dim}, expected {self.k} x {self.context}"
            )
        if self.weights.output_dim != N_PARAMS:
            raise DimensionError(f"Synthesis output is {self.weights.output_dim}, expected {N_PARAMS}")


def synth_forward(net: SynthesisNet, stacked: np.ndarray) -> SpeechParams:
    """
    Predict speech parameters and stabilize the LSPs.

    Raises:
        DimensionError: If the input dimension does not match the network
    """
    stacked = np.atleast_2d(np.asarray(stacked, dtype=np.float64))
    if stacked.shape[0] == 0:
        return SpeechParams(np.zeros((0, N_PARAMS)))
    outputs = np.atleast_2d(mlp_forward(net.weights, stacked))
    outputs[:, :LPC_ORDER] = stabilize_lsp(outputs[:, :LPC_ORDER])
    return SpeechParams(outputs)


def pulse_positions(f0: F0Track, grid: FrameGrid, n_samples: int, sample_rate: int) -> np.ndarray:
    """
    Sample indices of glottal pulses for the whole utterance.

    Log-F0 is interpolated from frame centres to every sample and integrated
    into one running phase, so pulse spacing stays continuous across frames.
    """
    if n_samples == 0 or f0.n_frames == 0:
        return np.zeros(0, dtype=int)
    centres = grid.frame_centers_ms(f0.n_frames) * sample_rate / 1000.0
    hz = np.exp(np.interp(np.arange(n_samples), centres, f0.log_f0))
    phase = np.cumsum(hz / sample_rate)
    return np.flatnonzero(np.diff(np.floor(phase), prepend=0.0) > 0)


def vocode(
    params: SpeechParams,
    f0: F0Track,
    grid: FrameGrid,
    sample_rate: int = 16000,
    seed: int = 0,
    peak: Optional[float] = 0.9,
) -> AudioClip:
    """
    Render speech parameters to a waveform.

    Each frame's excitation mixes a glottal-filtered pulse train (weight
    sqrt of the harmonic ratio) with white noise, is scaled by the frame
    gain and filtered by the all-pole LPC filter rebuilt from the LSPs.
    Frames are overlap-added with a Hann window and the result is
    peak-normalized.

    Args:
        params: Speech parameters, one row per frame
        f0: Pitch track aligned with params
        grid: Frame grid
        sample_rate: Output rate
        seed: Noise generator seed
        peak: Output peak amplitude, or None to skip normalization

    Returns:
        AudioClip: n_frames * shift + window - shift samples

    Raises:
        DimensionError: If params and f0 are not aligned
    """
    n_frames = params.n_frames
    if f0.n_frames != n_frames:
        raise DimensionError(f"{n_frames} parameter frames but {f0.n_frames} F0 frames")
    window = grid.window_length(sample_rate)
    hop = grid.hop_length(sample_rate)
    n_samples = grid.output_length(n_frames, sample_rate)
    output = np.zeros(n_samples)
    normalization = np.zeros(n_samples)
    if n_frames == 0:
        return AudioClip(output, sample_rate)

    rng = np.random.default_rng(seed)
    synthesis_window = np.hanning(window + 2)[1:-1]
    pulses = pulse_positions(f0, grid, n_samples, sample_rate)
    centres = grid.frame_centers_ms(n_frames) * sample_rate / 1000.0
    hz = np.exp(np.interp(np.arange(n_samples), centres, f0.log_f0))
    lsp = stabilize_lsp(params.lsp)
    ratios = expit(params.hnr)

    for index in range(n_frames):
        start = index * hop
        noise = rng.standard_normal(window)
        normalization[start:start + window] += synthesis_window
        if params.gain[index] <= GAIN_FLOOR + 1e-9:
            continue
        train = np.zeros(window)
        inside = pulses[(pulses >= start) & (pulses < start + window)]
        # Unit-power pulse train: amplitude sqrt(period in samples)
        train[inside - start] = np.sqrt(sample_rate / hz[inside])
        glottal = glottal_filter(params.glottal_angle[index], params.glottal_log_mag[index])
        voiced = lfilter([1.0], glottal, train)
        shaped_energy = np.dot(voiced, voiced)
        if shaped_energy > 0:
            voiced *= np.sqrt(np.dot(train, train) / shaped_energy)
        excitation = np.sqrt(ratios[index]) * voiced + np.sqrt(1.0 - ratios[index]) * noise
        a = lsp_to_lpc(lsp[index])
        segment = np.exp(params.gain[index]) * lfilter([1.0], a, excitation)
        output[start:start + window] += synthesis_window * segment

    output = np.where(normalization > 1e-8, output / np.maximum(normalization, 1e-8), 0.0)
    if peak is not None:
        largest = np.max(np.abs(output))
        if largest > 0:
            output *= peak / largest
    return AudioClip(output, sample_rate)
