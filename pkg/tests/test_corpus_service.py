import numpy as np
import pytest

from phonovoc.services.corpus_service import (
    Label,
    frame_labels,
    generate_utterance,
    label_targets,
    load_manifest,
    load_utterance,
    read_labels,
    write_corpus,
    write_labels,
)
from phonovoc.services.frontend_service import FrameGrid
from phonovoc.utils.errors import ConfigError, EmptyCorpus
from phonovoc.utils.schemes import get_scheme, scheme_by_id


class TestGenerateUtterance:
    """Test suite for synthetic utterance generation."""

    def test_labels_tile_the_clip(self):
        """Test that labels are contiguous from zero to the end of the audio."""
        utterance = generate_utterance(np.random.default_rng(0), 5)
        labels = utterance.labels

        assert labels[0].start_ms == 0.0 and labels[0].phone == "sil"
        assert labels[-1].phone == "sil"
        assert all(a.end_ms == b.start_ms for a, b in zip(labels, labels[1:]))
        assert labels[-1].end_ms == pytest.approx(utterance.clip.duration_ms)

    def test_one_boundary_between_syllables(self):
        """Test that n syllables give n - 1 increasing internal boundaries."""
        utterance = generate_utterance(np.random.default_rng(1), 6)
        times = utterance.boundaries.times_ms

        assert len(times) == 5
        assert np.all(np.diff(times) > 0)

    def test_boundaries_sit_in_onsets(self):
        """Test that every boundary falls inside a closure or a nasal murmur."""
        utterance = generate_utterance(np.random.default_rng(2), 6)
        for time in utterance.boundaries.times_ms:
            phone = next(label.phone for label in utterance.labels if label.start_ms <= time < label.end_ms)
            assert phone in ("cl", "m")

    def test_f0_per_sample(self):
        """Test that the generating F0 has one value per sample and is zero in silence."""
        utterance = generate_utterance(np.random.default_rng(3), 3)
        assert len(utterance.f0_hz) == len(utterance.clip.samples)
        assert utterance.f0_hz[0] == 0.0
        voiced = utterance.f0_hz[utterance.f0_hz > 0]
        assert voiced.min() > 50.0 and voiced.max() < 400.0

    def test_amplitude_range(self):
        """Test that samples stay inside [-1, 1]."""
        samples = generate_utterance(np.random.default_rng(4), 4).clip.samples
        assert np.max(np.abs(samples)) <= 1.0

    def test_same_seed_same_utterance(self):
        """Test that the generator is the only source of randomness."""
        a = generate_utterance(np.random.default_rng(7), 4)
        b = generate_utterance(np.random.default_rng(7), 4)
        np.testing.assert_array_equal(a.clip.samples, b.clip.samples)
        np.testing.assert_array_equal(a.boundaries.times_ms, b.boundaries.times_ms)

    def test_restricted_inventory(self):
        """Test that only the requested onsets are used."""
        utterance = generate_utterance(np.random.default_rng(5), 8, consonants=("t",))
        phones = {label.phone for label in utterance.labels}
        assert phones & {"p", "k", "m"} == set()
        assert "t" in phones

    def test_zero_syllables_raises_error(self):
        """Test that an utterance needs a syllable."""
        with pytest.raises(ValueError):
            generate_utterance(np.random.default_rng(0), 0)

    def test_unknown_phone_raises_error(self):
        """Test that onsets outside the toy set are rejected."""
        with pytest.raises(ValueError, match="Unsupported"):
            generate_utterance(np.random.default_rng(0), 2, consonants=("z",))


class TestLabelFiles:
    """Test suite for label file I/O."""

    def test_roundtrip(self, tmp_path):
        """Test that labels survive a write and read to 0.1 ms."""
        labels = [Label(0.0, 120.25, "sil"), Label(120.25, 190.0, "cl")]
        loaded = read_labels(write_labels(tmp_path / "a.lab", labels))

        assert [label.phone for label in loaded] == ["sil", "cl"]
        assert loaded[0].end_ms == pytest.approx(120.25, abs=0.05)

    def test_missing_file_raises_error(self, tmp_path):
        """Test that a missing label file raises ConfigError."""
        with pytest.raises(ConfigError):
            read_labels(tmp_path / "absent.lab")

    def test_malformed_line_raises_error(self, tmp_path):
        """Test that a line without three fields names the file and line."""
        path = tmp_path / "bad.lab"
        path.write_text("0.0 10.0 sil\n10.0 a\n")
        with pytest.raises(ConfigError, match=":2:"):
            read_labels(path)


class TestWriteCorpus:
    """Test suite for on-disk corpus generation."""

    def test_manifest_lists_every_utterance(self, tmp_path):
        """Test that the manifest has one loadable entry per utterance."""
        manifest = write_corpus(tmp_path, n_utterances=3, seed=1, syllables_per_utterance=(2, 3))
        entries = load_manifest(manifest)

        assert len(entries) == 3
        utterance = load_utterance(entries[0])
        assert utterance.clip.sample_rate == 16000
        assert len(utterance.labels) > 0

    def test_independent_of_worker_count(self, tmp_path):
        """Test that one worker and three workers write the same audio."""
        serial = write_corpus(tmp_path / "serial", n_utterances=3, seed=4, syllables_per_utterance=(2, 3))
        parallel = write_corpus(tmp_path / "parallel", n_utterances=3, seed=4, syllables_per_utterance=(2, 3),
                                jobs=3)

        assert serial.read_text() == parallel.read_text()
        for name in ("utt_0000.wav", "utt_0002.wav", "utt_0001.bnd"):
            assert (serial.parent / name).read_bytes() == (parallel.parent / name).read_bytes()

    def test_non_positive_count_raises_error(self, tmp_path):
        """Test that a corpus needs an utterance."""
        with pytest.raises(ValueError):
            write_corpus(tmp_path, n_utterances=0)


class TestManifest:
    """Test suite for manifest parsing."""

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        """Test that '#' lines and blank lines are ignored and paths resolve next to the manifest."""
        manifest = tmp_path / "manifest.tsv"
        manifest.write_text("# corpus\n\na.wav\ta.lab\ta.bnd\n")

        entries = load_manifest(manifest)

        assert len(entries) == 1
        assert entries[0].wav_path == tmp_path / "a.wav"

    def test_missing_manifest_raises_error(self, tmp_path):
        """Test that a missing manifest raises ConfigError."""
        with pytest.raises(ConfigError):
            load_manifest(tmp_path / "absent.tsv")

    def test_empty_manifest_raises_error(self, tmp_path):
        """Test that a manifest with no entries raises EmptyCorpus."""
        manifest = tmp_path / "manifest.tsv"
        manifest.write_text("# nothing here\n")
        with pytest.raises(EmptyCorpus):
            load_manifest(manifest)

    def test_wrong_column_count_raises_error(self, tmp_path):
        """Test that a line without three tab-separated paths raises ConfigError."""
        manifest = tmp_path / "manifest.tsv"
        manifest.write_text("a.wav\ta.lab\n")
        with pytest.raises(ConfigError):
            load_manifest(manifest)


class TestFrameTargets:
    """Test suite for frame-level class targets."""

    def test_frame_labels_use_frame_centres(self):
        """Test that each frame takes the phone under its centre."""
        labels = [Label(0.0, 100.0, "sil"), Label(100.0, 200.0, "a")]
        phones = frame_labels(labels, FrameGrid(16, 25), 8)
        # Centres at 12.5 + 16 n ms: frame 5 is at 92.5 ms, frame 6 at 108.5 ms
        assert phones == ["sil"] * 6 + ["a"] * 2

    def test_frames_past_the_end_take_the_last_phone(self):
        """Test that frames beyond the last label keep its phone."""
        phones = frame_labels([Label(0.0, 20.0, "sil")], FrameGrid(16, 25), 3)
        assert phones == ["sil", "sil", "sil"]

    def test_no_labels_raises_error(self):
        """Test that alignment needs labels."""
        with pytest.raises(ValueError):
            frame_labels([], FrameGrid(), 3)

    def test_targets_follow_the_scheme(self):
        """Test that targets are K-bit class vectors of each phone."""
        scheme = get_scheme("GP")
        targets = label_targets(["sil", "a"], scheme)

        assert targets.shape == (2, 12)
        assert targets[0, scheme.class_names.index("silence")] == 1
        assert targets[1].sum() == 2

    def test_every_toy_phone_is_mapped(self):
        """Test that every scheme covers the toy phone set."""
        phones = ["a", "e", "i", "o", "u", "p", "t", "k", "m", "cl", "sil"]
        for name, k in (("GP", 12), ("SPE", 15), ("eSPE", 21), ("phone", 11)):
            assert label_targets(phones, get_scheme(name)).shape == (len(phones), k)

    def test_unmapped_phone_raises_error(self):
        """Test that a phone outside the scheme raises ConfigError."""
        with pytest.raises(ConfigError, match="zz"):
            label_targets(["zz"], get_scheme("GP"))

    def test_phonetic_targets_are_one_hot(self):
        """Test that the phone scheme gives exactly one active class per frame."""
        scheme = get_scheme("phone")
        phones = ["sil", "p", "a", "cl", "m", "o"]
        targets = label_targets(phones, scheme)

        np.testing.assert_array_equal(targets.sum(axis=1), 1)
        assert [scheme.class_names[i] for i in targets.argmax(axis=1)] == phones

    def test_reordered_classes_reorder_targets(self):
        """Test that a permuted class list moves the target columns with it."""
        scheme = get_scheme("GP")
        reordered = scheme.with_class_order(tuple(reversed(scheme.class_names)))

        np.testing.assert_array_equal(
            label_targets(["a", "k"], reordered), label_targets(["a", "k"], scheme)[:, ::-1]
        )

    def test_scheme_ids_resolve(self):
        """Test that every stream scheme id maps back to its scheme."""
        assert [scheme_by_id(i).name for i in range(4)] == ["GP", "SPE", "eSPE", "phone"]

    def test_unknown_scheme_id_raises_config_error(self):
        """Test that an id no scheme uses raises ConfigError."""
        with pytest.raises(ConfigError, match="Unknown scheme id"):
            scheme_by_id(9)

    def test_unknown_scheme_name_raises_config_error(self):
        """Test that an unknown scheme name raises ConfigError."""
        with pytest.raises(ConfigError, match="Unknown phonological scheme"):
            get_scheme("IPA")
