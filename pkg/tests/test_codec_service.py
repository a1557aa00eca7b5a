import numpy as np
import pytest

from phonovoc import create_codec
from phonovoc.services.bitstream_service import STREAM_MAGIC, unpack
from phonovoc.services.codec_service import CodecService, align_f0
from phonovoc.services.corpus_service import load_manifest, load_utterance
from phonovoc.services.frontend_service import AudioClip, F0Track, FrameGrid
from phonovoc.services.metrics_service import mcd
from phonovoc.utils.config import CodecConfig
from phonovoc.utils.errors import CodebookMismatch, ConfigError, CorruptStream, NoVoicedSpeech, TooShort
from phonovoc.utils.wavio import read_wav

RATE = 16000


@pytest.fixture
def codec(trained_config):
    return CodecService.from_config(trained_config)


@pytest.fixture
def clips(toy_corpus):
    return [load_utterance(entry).clip for entry in load_manifest(toy_corpus)]


class TestEncode:
    """Test suite for the encoder."""

    def test_stream_layout(self, codec, clips):
        """Test that a clip encodes to a container covering every frame."""
        clip = clips[0]
        encoded = codec.encode(clip)
        n_frames = codec.grid.n_frames(len(clip.samples), RATE)

        assert encoded.data[:4] == STREAM_MAGIC
        assert encoded.header.frame_count == n_frames
        assert sum(block.run_len for block in encoded.blocks) == n_frames
        assert all(block.index < codec.segmental_codebook.size for block in encoded.blocks)
        assert encoded.header.duration_ms == round(clip.duration_ms)

    def test_syllables_cover_the_utterance(self, codec, clips):
        """Test that syllable durations add up to the utterance on the 16 ms grid."""
        clip = clips[1]
        encoded = codec.encode(clip)
        total_ms = sum(code.duration_ms for code in encoded.codes)
        assert abs(total_ms - encoded.header.frame_count * 16) <= 16

    def test_bitrate_report(self, codec, clips):
        """Test that the report accounts the coded blocks and syllables."""
        encoded = codec.encode(clips[0])
        rows = encoded.bitrate.rows
        duration_s = clips[0].duration_ms / 1000.0

        assert rows["code"] == pytest.approx(len(encoded.blocks) * encoded.header.index_bits / duration_s)
        assert rows["f0_mean"] == pytest.approx(3 * len(encoded.codes) / duration_s)
        assert encoded.bitrate.total > 0

    def test_deterministic(self, codec, clips):
        """Test that encoding the same clip twice gives the same bytes."""
        assert codec.encode(clips[2]).data == codec.encode(clips[2]).data

    def test_too_short(self, codec):
        """Test that less than two frames raises TooShort."""
        with pytest.raises(TooShort):
            codec.encode(AudioClip(np.zeros(300), RATE))

    def test_silence_has_no_pitch(self, codec):
        """Test that a silent clip raises NoVoicedSpeech."""
        with pytest.raises(NoVoicedSpeech):
            codec.encode(AudioClip(np.zeros(RATE), RATE))


class TestDecode:
    """Test suite for the decoder."""

    def test_output_length(self, codec, clips):
        """Test that decoded audio spans n * shift + window - shift samples."""
        encoded = codec.encode(clips[0])
        decoded = codec.decode(encoded.data)

        assert decoded.sample_rate == RATE
        assert len(decoded.samples) == codec.grid.output_length(encoded.header.frame_count, RATE)
        assert np.max(np.abs(decoded.samples)) == pytest.approx(0.9)
        assert 0 <= len(clips[0].samples) - len(decoded.samples) < codec.grid.hop_length(RATE)

    def test_deterministic(self, codec, clips):
        """Test that decoding is repeatable."""
        data = codec.encode(clips[3]).data
        np.testing.assert_array_equal(codec.decode(data).samples, codec.decode(data).samples)

    def test_binary_path_matches_decode(self, codec, clips):
        """Test that decode_binary reproduces decoding the packed stream."""
        encoded = codec.encode(clips[0])
        np.testing.assert_allclose(codec.decode_binary(encoded).samples, codec.decode(encoded.data).samples)

    def test_truncated_stream(self, codec, clips):
        """Test that a cut-off stream raises CorruptStream."""
        data = codec.encode(clips[0]).data
        with pytest.raises(CorruptStream):
            codec.decode(data[:-1])

    def test_foreign_codebook(self, codec, clips):
        """Test that a stream naming another segmental codebook raises CodebookMismatch."""
        data = bytearray(codec.encode(clips[0]).data)
        data[8] ^= 0xFF
        with pytest.raises(CodebookMismatch):
            codec.decode(bytes(data))

    def test_other_profile(self, codec, clips):
        """Test that a stream coded for another scheme raises CorruptStream."""
        data = bytearray(codec.encode(clips[0]).data)
        data[5] = 2
        with pytest.raises(CorruptStream, match="scheme"):
            codec.decode(bytes(data))

    def test_file_roundtrip(self, codec, tmp_path, toy_corpus):
        """Test encode_file and decode_file through the file system."""
        wav_path = load_manifest(toy_corpus)[0].wav_path
        encoded = codec.encode_file(wav_path, tmp_path / "a.pvc")
        codec.decode_file(tmp_path / "a.pvc", tmp_path / "a.wav")

        assert unpack((tmp_path / "a.pvc").read_bytes()).header == encoded.header
        decoded = read_wav(tmp_path / "a.wav")
        assert len(decoded.samples) == codec.grid.output_length(encoded.header.frame_count, RATE)


class TestQualityTrends:
    """Test suite for the direction of the quality differences."""

    def test_continuous_posteriors_beat_binary(self, codec, clips):
        """Test that on average continuous posteriors decode with no more distortion than binary ones."""
        continuous, binary = [], []
        for clip in clips:
            encoded = codec.encode(clip)
            continuous.append(mcd(clip, codec.decode_continuous(encoded)))
            binary.append(mcd(clip, codec.decode_binary(encoded)))
        assert np.mean(continuous) <= np.mean(binary)

    def test_prosody_quantization_cost(self, codec, clips):
        """Test that 3-bit prosody adds at most 0.3 dB of distortion."""
        quantized, exact = [], []
        for clip in clips:
            encoded = codec.encode(clip)
            quantized.append(mcd(clip, codec.decode_continuous(encoded)))
            exact.append(mcd(clip, codec.decode_continuous(encoded, quantized_prosody=False)))
        assert np.mean(quantized) - np.mean(exact) <= 0.3


class TestAlignF0:
    """Test suite for mapping decoded pitch onto the synthesis grid."""

    def test_constant_track(self):
        """Test that a flat track stays flat on any frame count."""
        track = F0Track(np.full(10, np.log(120.0)), 16)
        aligned = align_f0(track, FrameGrid(16, 25), 12)

        assert aligned.n_frames == 12
        np.testing.assert_allclose(aligned.log_f0, np.log(120.0))

    def test_empty_track_raises_error(self):
        """Test that no syllables cannot be synthesized."""
        with pytest.raises(CorruptStream):
            align_f0(F0Track(np.zeros(0), 16), FrameGrid(), 5)


class TestCreateCodec:
    """Test suite for the codec factory."""

    def test_factory_loads_models(self, trained_config):
        """Test that create_codec honours a config override."""
        codec = create_codec(trained_config)
        assert codec.bank.k == 12

    def test_missing_models_raise_config_error(self, tmp_path):
        """Test that an empty model directory names the missing file."""
        config = CodecConfig(overrides={"model_dir": str(tmp_path)})
        with pytest.raises(ConfigError, match="analyzer_00"):
            create_codec(config)


class TestPhoneticScheme:
    """Test suite for coding with phone posteriors instead of phonological classes."""

    @pytest.fixture
    def phone_codec(self, trained_phone_model):
        model_dir, _ = trained_phone_model
        return CodecService.from_config(CodecConfig(profile="phone16", overrides={"model_dir": str(model_dir)}))

    def test_encode_decode_and_rate(self, phone_codec, clips):
        """Test that a phone16 model codes a clip with 11-bit patterns and a positive bit rate."""
        clip = clips[0]
        encoded = phone_codec.encode(clip)
        decoded = phone_codec.decode(encoded.data)

        assert phone_codec.bank.k == 11
        assert encoded.header.scheme_id == 3
        assert encoded.posteriors.shape[1] == 11
        assert encoded.bitrate.total > 0
        assert encoded.bitrate.rows["code"] == pytest.approx(
            len(encoded.blocks) * encoded.header.index_bits * 1000.0 / clip.duration_ms
        )
        assert abs(len(decoded.samples) - len(clip.samples)) < 16 * RATE // 1000
        assert np.isfinite(mcd(clip, decoded))

    def test_gp_stream_is_rejected(self, phone_codec, codec, clips):
        """Test that a phone16 decoder refuses a stream coded with the GP scheme."""
        with pytest.raises(CodebookMismatch):
            phone_codec.decode(codec.encode(clips[0]).data)

    def test_gp_models_do_not_load_as_phone_models(self, trained_model):
        """Test that GP models found under a phone profile directory raise ConfigError."""
        model_dir, _ = trained_model
        config = CodecConfig(profile="phone16", overrides={"artifact_dir": str(model_dir / "gp16")})

        with pytest.raises(ConfigError):
            CodecService.from_config(config)
