import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from phonovoc.services.bitstream_service import (
    BitRateReport,
    StreamHeader,
    measure_bitrate,
    pack,
    read_stream,
    unpack,
    write_stream,
)
from phonovoc.services.frontend_service import AudioClip, F0Track, FrameGrid, FrontendService, stack_context
from phonovoc.services.neural_service import AnalyzerBank, analyze_matrix, binarize, load_bank, load_weights
from phonovoc.services.prosody_service import (
    DlopCoeffs,
    ProsodicCodebook,
    SyllableCode,
    decode_prosody,
    decode_unquantized,
    fit_syllables,
    load_prosodic_codebook,
    quantize_param,
)
from phonovoc.services.segmental_service import (
    SegmentalBlock,
    SegmentalCodebook,
    decode_segmental,
    encode_segmental,
    load_codebook,
)
from phonovoc.services.snn_service import BoundarySet, SnnParams, detect_syllables, load_snn_params
from phonovoc.services.synthesis_service import SynthesisNet, synth_forward, vocode
from phonovoc.utils.config import CodecConfig
from phonovoc.utils.errors import ConfigError, CorruptStream, DimensionError, TooShort
from phonovoc.utils.wavio import read_wav, write_wav

logger = logging.getLogger(__name__)


@dataclass
class EncodedUtterance:
    """A packed stream together with the intermediate results that produced it."""

    data: bytes
    header: StreamHeader
    blocks: List[SegmentalBlock]
    codes: List[SyllableCode]
    bitrate: BitRateReport
    posteriors: np.ndarray = field(repr=False)
    f0: F0Track = field(repr=False)
    boundaries: BoundarySet = field(repr=False)
    fitted: List[Tuple[DlopCoeffs, int]] = field(default_factory=list, repr=False)


def align_f0(track: F0Track, grid: FrameGrid, n_frames: int) -> F0Track:
    """Resample a decoded pitch track onto the frame centres of an n_frames grid."""
    if track.n_frames == 0:
        raise CorruptStream("Prosodic stream decodes to an empty pitch track")
    source_ms = (np.arange(track.n_frames) + 0.5) * track.frame_shift_ms
    return F0Track(np.interp(grid.frame_centers_ms(n_frames), source_ms, track.log_f0), grid.shift_ms)


class CodecService:
    """Encoder and decoder of one trained profile."""

    def __init__(
        self,
        config: CodecConfig,
        bank: AnalyzerBank,
        synthesis: SynthesisNet,
        segmental_codebook: SegmentalCodebook,
        prosodic_codebook: ProsodicCodebook,
        snn_params: SnnParams,
        frontend: Optional[FrontendService] = None,
    ):
        """
        Initialize the codec from loaded models.

        Raises:
            ConfigError: If the models disagree with the configured scheme
        """
        if (bank.k != config.k or synthesis.k != config.k or segmental_codebook.k != config.k
                or segmental_codebook.scheme != config.scheme):
            raise ConfigError(
                f"Models do not match scheme {config.scheme} with K={config.k}: bank {bank.k}, "
                f"synthesis {synthesis.k}, codebook {segmental_codebook.scheme} with K={segmental_codebook.k}"
            )
        self.config = config
        self.scheme = config.phonological_scheme
        self.frontend = frontend or FrontendService.from_config(config)
        self.bank = bank
        self.synthesis = synthesis
        self.segmental_codebook = segmental_codebook
        self.prosodic_codebook = prosodic_codebook
        self.snn_params = snn_params

    @classmethod
    def from_config(cls, config: CodecConfig) -> "CodecService":
        """
        Load every model file of the configured profile.

        Raises:
            ConfigError: Naming the first missing model file
            CorruptStream: If a weight file or codebook is damaged
        """
        config.require_model_files()
        bank = load_bank(config.scheme, config.class_names, config.analyzer_paths)
        try:
            synthesis = SynthesisNet(load_weights(config.synthesis_path), config.k, config.synthesis_context)
        except DimensionError as e:
            raise ConfigError(f"{config.synthesis_path} does not fit profile {config.profile}: {e}")
        return cls(
            config,
            bank,
            synthesis,
            load_codebook(config.segmental_codebook_path),
            load_prosodic_codebook(config.prosodic_codebook_path),
            load_snn_params(config.snn_params_path),
        )

    @property
    def grid(self) -> FrameGrid:
        return self.frontend.grid

    def analyze(self, clip: AudioClip) -> np.ndarray:
        """Continuous (n_frames, K) posteriors of a clip."""
        return analyze_matrix(self.bank, self.frontend.analysis_features(clip, self.config.analysis_context))

    def detect_boundaries(self, clip: AudioClip) -> BoundarySet:
        return detect_syllables(
            self.frontend.snn_cepstra(clip), self.snn_params, self.config.frame_shift_ms, self.config.window_ms
        )

    def encode(self, clip: AudioClip) -> EncodedUtterance:
        """
        Encode a clip into a container.

        Args:
            clip: Input audio at the configured sample rate

        Returns:
            EncodedUtterance: Stream bytes, codes and the bit-rate report

        Raises:
            TooShort: If the clip is shorter than two analysis frames
            NoVoicedSpeech: If no frame is voiced
        """
        n_frames = self.grid.n_frames(len(clip.samples), clip.sample_rate)
        if n_frames < 2:
            raise TooShort(f"Need at least two {self.grid.window_ms} ms frames, got {n_frames}")
        f0 = self.frontend.f0(clip)

        posteriors = self.analyze(clip)
        blocks = encode_segmental(binarize(posteriors), self.segmental_codebook)

        boundaries = self.detect_boundaries(clip)
        fitted = fit_syllables(f0, boundaries.times_ms)
        codes = [
            SyllableCode(
                quantize_param(coeffs.mean, self.prosodic_codebook.mean_levels),
                quantize_param(coeffs.slope, self.prosodic_codebook.slope_levels),
                n_steps,
            )
            for coeffs, n_steps in fitted
        ]

        header = StreamHeader(
            scheme_id=self.scheme.scheme_id,
            frame_shift_ms=self.config.frame_shift_ms,
            index_bits=self.segmental_codebook.index_bits,
            segmental_hash=self.segmental_codebook.short_hash,
            prosodic_hash=self.prosodic_codebook.short_hash,
            frame_count=n_frames,
            block_count=len(blocks),
            syllable_count=len(codes),
            duration_ms=int(round(clip.duration_ms)),
        )
        data = pack(blocks, codes, header)
        bitrate = measure_bitrate(blocks, codes, clip.duration_ms / 1000.0, header.index_bits)
        logger.info("Encoded %.0f ms: %d blocks, %d syllables, %.1f bps",
                    clip.duration_ms, len(blocks), len(codes), bitrate.total)
        return EncodedUtterance(data, header, blocks, codes, bitrate, posteriors, f0, boundaries, fitted)

    def synthesize(self, posteriors: np.ndarray, f0: F0Track) -> AudioClip:
        """Run the synthesis network and vocoder on (n_frames, K) posteriors."""
        stacked = stack_context(np.asarray(posteriors, dtype=np.float64), self.config.synthesis_context)
        params = synth_forward(self.synthesis, stacked)
        f0 = align_f0(f0, self.grid, params.n_frames)
        return vocode(params, f0, self.grid, self.config.sample_rate,
                      self.config.vocoder_noise_seed, self.config.output_peak)

    def decode(self, data: bytes) -> AudioClip:
        """
        Decode a container produced by encode.

        Raises:
            NotABitstream: If the bytes are not a container
            CodebookMismatch: If the stream was coded with other codebooks
            CorruptStream: If the stream is damaged or coded for another profile
        """
        container = unpack(data, self.segmental_codebook.short_hash, self.prosodic_codebook.short_hash)
        header = container.header
        if header.scheme_id != self.scheme.scheme_id or header.frame_shift_ms != self.config.frame_shift_ms:
            raise CorruptStream(
                f"Stream is scheme {header.scheme_id} at {header.frame_shift_ms} ms, "
                f"decoder is {self.scheme.name} at {self.config.frame_shift_ms} ms"
            )
        if header.index_bits != self.segmental_codebook.index_bits:
            raise CorruptStream(f"Stream uses {header.index_bits} index bits, codebook {self.segmental_codebook.index_bits}")
        patterns = decode_segmental(container.blocks, self.segmental_codebook)
        f0 = decode_prosody(container.codes, self.prosodic_codebook, self.config.frame_shift_ms)
        return self.synthesize(patterns.astype(np.float64), f0)

    def decode_continuous(self, encoded: EncodedUtterance, quantized_prosody: bool = True) -> AudioClip:
        """
        Decode from unbinarized posteriors, optionally with unquantized prosody.

        Used to measure what binarization and prosody quantization cost.
        """
        return self.synthesize(encoded.posteriors, self._prosody(encoded, quantized_prosody))

    def decode_binary(self, encoded: EncodedUtterance, quantized_prosody: bool = True) -> AudioClip:
        patterns = decode_segmental(encoded.blocks, self.segmental_codebook)
        return self.synthesize(patterns.astype(np.float64), self._prosody(encoded, quantized_prosody))

    def _prosody(self, encoded: EncodedUtterance, quantized: bool) -> F0Track:
        if quantized:
            return decode_prosody(encoded.codes, self.prosodic_codebook, self.config.frame_shift_ms)
        return decode_unquantized(encoded.fitted, self.config.frame_shift_ms)

    def encode_file(self, in_path: Union[str, Path], out_path: Union[str, Path]) -> EncodedUtterance:
        encoded = self.encode(read_wav(in_path, self.config.sample_rate))
        write_stream(out_path, encoded.data)
        return encoded

    def decode_file(self, in_path: Union[str, Path], out_path: Union[str, Path]) -> AudioClip:
        clip = self.decode(read_stream(in_path))
        write_wav(out_path, clip)
        return clip
