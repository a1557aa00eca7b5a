import numpy as np
import pytest

from phonovoc.services.frontend_service import F0Track
from phonovoc.services.prosody_service import (
    DlopCoeffs,
    ProsodicCodebook,
    SyllableCode,
    build_prosodic_codebooks,
    decode_prosody,
    decode_unquantized,
    dequantize,
    encode_prosody,
    fit_dlop,
    fit_syllables,
    legendre_basis,
    load_prosodic_codebook,
    quantize_param,
    reconstruct_dlop,
    save_prosodic_codebook,
    segment_syllables,
)
from phonovoc.utils.errors import ConfigError, CorruptStream, DegenerateCorpus, SegmentTooShort


def line(mean, slope, n_samples, span_ms):
    times_s = (np.arange(n_samples) + 0.5) * span_ms / n_samples / 1000.0
    return mean + slope * (times_s - span_ms / 2000.0)


def make_codebook():
    return ProsodicCodebook(np.log(120.0), 0.15, 0.0, 1.0)


class TestLegendreBasis:
    """Test suite for the discrete Legendre vectors."""

    @pytest.mark.parametrize("n_samples", [2, 3, 10, 31])
    def test_orthonormal(self, n_samples):
        """Test that the two basis vectors are orthonormal."""
        basis = legendre_basis(n_samples)
        np.testing.assert_allclose(basis.T @ basis, np.eye(2), atol=1e-12)

    def test_first_vector_is_constant(self):
        """Test that order 0 is a positive constant and order 1 increases."""
        basis = legendre_basis(5)
        np.testing.assert_allclose(basis[:, 0], 1 / np.sqrt(5))
        assert np.all(np.diff(basis[:, 1]) > 0)


class TestFitDlop:
    """Test suite for per-syllable line fits."""

    def test_exact_line_is_recovered(self):
        """Test that a straight log-F0 line gives back its mean and slope."""
        segment = line(4.8, 1.2, 10, 160.0)
        coeffs = fit_dlop(segment, 160.0)

        assert coeffs.mean == pytest.approx(4.8)
        assert coeffs.slope == pytest.approx(1.2)
        np.testing.assert_allclose(reconstruct_dlop(coeffs, 10), segment, atol=1e-12)

    def test_projection_is_least_squares(self):
        """Test that the fit equals numpy's first-order polynomial fit."""
        rng = np.random.default_rng(0)
        segment = 5.0 + 0.1 * rng.standard_normal(12)
        times_s = (np.arange(12) + 0.5) * 192.0 / 12 / 1000.0
        slope, _ = np.polyfit(times_s, segment, 1)

        coeffs = fit_dlop(segment, 192.0)

        assert coeffs.slope == pytest.approx(slope)
        assert coeffs.mean == pytest.approx(segment.mean())

    def test_single_sample_raises_error(self):
        """Test that a one-sample segment raises SegmentTooShort."""
        with pytest.raises(SegmentTooShort):
            fit_dlop(np.array([5.0]), 16.0)

    def test_non_finite_coefficients_rejected(self):
        """Test that DlopCoeffs refuses NaN."""
        with pytest.raises(ValueError):
            DlopCoeffs(np.nan, 0.0, 16.0)


class TestQuantizer:
    """Test suite for the linear 3-bit quantizers."""

    def test_levels_span_three_sigma(self):
        """Test that levels run from mu - 3 sigma to mu + 3 sigma."""
        codebook = ProsodicCodebook(1.0, 0.5, 0.0, 2.0)
        np.testing.assert_allclose(codebook.mean_levels[[0, -1]], [-0.5, 2.5])
        assert len(codebook.slope_levels) == 8

    def test_nearest_level(self):
        """Test that values quantize to the closest level."""
        levels = np.arange(8, dtype=float)
        assert quantize_param(2.2, levels) == 2
        assert quantize_param(2.8, levels) == 3

    def test_tie_goes_low(self):
        """Test that a value halfway between levels takes the lower index."""
        assert quantize_param(2.5, np.arange(8, dtype=float)) == 2

    def test_out_of_range_clamps(self):
        """Test that values beyond the outer levels clamp."""
        levels = np.arange(8, dtype=float)
        assert quantize_param(-100.0, levels) == 0
        assert quantize_param(100.0, levels) == 7

    def test_dequantize_out_of_range_raises_error(self):
        """Test that a level index of 8 raises CorruptStream."""
        with pytest.raises(CorruptStream):
            dequantize(SyllableCode(8, 0, 1), make_codebook())

    def test_zero_spread_raises_error(self):
        """Test that a zero sigma is degenerate."""
        with pytest.raises(DegenerateCorpus):
            ProsodicCodebook(1.0, 0.0, 0.0, 1.0)

    def test_reconstruction_error_bound(self):
        """Test that in-range lines reconstruct within half a step of mean plus slope."""
        codebook = make_codebook()
        mean_step = np.diff(codebook.mean_levels)[0]
        slope_step = np.diff(codebook.slope_levels)[0]
        rng = np.random.default_rng(1)
        for _ in range(200):
            span_ms = 16.0 * rng.integers(2, 17)
            n = int(span_ms / 16)
            mean = rng.uniform(codebook.mean_levels[0], codebook.mean_levels[-1])
            slope = rng.uniform(codebook.slope_levels[0], codebook.slope_levels[-1])
            original = line(mean, slope, n, span_ms)

            code = SyllableCode(quantize_param(mean, codebook.mean_levels),
                                quantize_param(slope, codebook.slope_levels), n)
            q_mean, q_slope = dequantize(code, codebook)
            rebuilt = reconstruct_dlop(DlopCoeffs(q_mean, q_slope, span_ms), n)

            bound = mean_step / 2 + slope_step / 2 * span_ms / 2000.0
            assert np.max(np.abs(rebuilt - original)) <= bound + 1e-9


class TestBuildCodebooks:
    """Test suite for codebook training."""

    def test_statistics(self):
        """Test that mu and sigma are the corpus mean and standard deviation."""
        coeffs = [DlopCoeffs(m, s, 160.0) for m, s in [(4.0, -1.0), (5.0, 1.0), (6.0, 0.0)]]
        codebook = build_prosodic_codebooks(coeffs)

        assert codebook.mean_mu == pytest.approx(5.0)
        assert codebook.mean_sigma == pytest.approx(np.std([4.0, 5.0, 6.0]))
        assert codebook.slope_mu == pytest.approx(0.0)

    def test_single_syllable_raises_error(self):
        """Test that one syllable is not enough."""
        with pytest.raises(DegenerateCorpus):
            build_prosodic_codebooks([DlopCoeffs(5.0, 0.0, 160.0)])

    def test_constant_slopes_raise_error(self):
        """Test that zero variance in one parameter raises DegenerateCorpus."""
        with pytest.raises(DegenerateCorpus):
            build_prosodic_codebooks([DlopCoeffs(4.0, 0.0, 160.0), DlopCoeffs(5.0, 0.0, 160.0)])

    def test_save_and_load(self, tmp_path):
        """Test that a saved codebook reloads with the same hash."""
        codebook = make_codebook()
        loaded = load_prosodic_codebook(save_prosodic_codebook(codebook, tmp_path / "p.json"))
        assert loaded.short_hash == codebook.short_hash

    def test_malformed_file_raises_error(self, tmp_path):
        """Test that a JSON file without the expected keys raises ConfigError."""
        path = tmp_path / "p.json"
        path.write_text("{}")
        with pytest.raises(ConfigError):
            load_prosodic_codebook(path)


class TestSegmentation:
    """Test suite for syllable segmentation."""

    def test_boundaries_on_grid(self):
        """Test that boundaries cut the utterance into step-aligned segments."""
        assert segment_syllables([160.0, 320.0], 30, 16) == [(0, 10), (10, 10), (20, 10)]

    def test_boundaries_snap_to_nearest_step(self):
        """Test that an off-grid boundary rounds to the nearest 16 ms step."""
        assert segment_syllables([170.0], 20, 16) == [(0, 11), (11, 9)]

    def test_long_segment_is_split(self):
        """Test that a segment over 16 steps is split evenly."""
        segments = segment_syllables([], 40, 16)
        assert segments == [(0, 13), (13, 13), (26, 14)]

    def test_sliver_is_merged(self):
        """Test that a one-step segment joins its neighbour."""
        segments = segment_syllables([160.0, 176.0], 20, 16)
        assert segments == [(0, 11), (11, 9)]

    def test_segments_cover_the_utterance(self):
        """Test that segments tile every step exactly once."""
        rng = np.random.default_rng(3)
        boundaries = np.sort(rng.uniform(0, 3000, size=15))
        segments = segment_syllables(boundaries, 190, 16)
        assert segments[0][0] == 0
        assert all(a[0] + a[1] == b[0] for a, b in zip(segments, segments[1:]))
        assert sum(n for _, n in segments) == 190
        assert all(1 <= n <= 16 for _, n in segments)

    def test_other_frame_shift(self):
        """Test that 10 ms frames map onto the 16 ms duration grid."""
        segments = segment_syllables([256.0], 48, 10)
        assert segments == [(0, 16), (16, 14)]


class TestProsodyCodec:
    """Test suite for encoding and decoding F0 contours."""

    def contour(self):
        parts = [line(np.log(110.0), 1.0, 10, 160.0), line(np.log(140.0), -1.0, 10, 160.0)]
        return F0Track(np.concatenate(parts), 16)

    def test_encode_gives_one_code_per_syllable(self):
        """Test that each boundary-delimited segment yields one code."""
        codes = encode_prosody(self.contour(), [160.0], make_codebook())
        assert [c.dur_steps for c in codes] == [10, 10]

    def test_decode_length(self):
        """Test that the decoded track spans the summed syllable durations."""
        codes = [SyllableCode(3, 4, 10), SyllableCode(5, 2, 5)]
        track = decode_prosody(codes, make_codebook(), 16)
        assert track.n_frames == 15

    def test_decoded_contour_is_close(self):
        """Test that a two-line contour survives quantization within the bound."""
        codebook = make_codebook()
        f0 = self.contour()
        decoded = decode_prosody(encode_prosody(f0, [160.0], codebook), codebook, 16)

        bound = np.diff(codebook.mean_levels)[0] / 2 + np.diff(codebook.slope_levels)[0] / 2 * 0.08
        assert np.max(np.abs(decoded.log_f0 - f0.log_f0)) <= bound + 1e-9

    def test_unquantized_decode_is_exact_for_lines(self):
        """Test that rendering fitted coefficients reproduces piecewise-linear input."""
        f0 = self.contour()
        decoded = decode_unquantized(fit_syllables(f0, [160.0]), 16)
        np.testing.assert_allclose(decoded.log_f0, f0.log_f0, atol=1e-9)

    def test_no_syllables_gives_empty_track(self):
        """Test that an empty code list decodes to zero frames."""
        assert decode_prosody([], make_codebook()).n_frames == 0

    def test_duration_bounds(self):
        """Test that duration steps outside 1..16 are rejected."""
        with pytest.raises(ValueError):
            SyllableCode(0, 0, 17)
