import json
from dataclasses import asdict

import pytest

from phonovoc.services.corpus_service import load_manifest, load_utterance
from phonovoc.services.neural_service import load_weights
from phonovoc.services.prosody_service import load_prosodic_codebook
from phonovoc.services.segmental_service import load_codebook
from phonovoc.services.training_service import TRAINING_LOG, TRAINING_SUMMARY, TrainingReport, TrainingService
from phonovoc.utils.config import CodecConfig
from phonovoc.utils.errors import EmptyCorpus


class TestTrainingService:
    """Test suite for the TrainingService class."""

    def test_every_artifact_is_written(self, trained_model, trained_config):
        """Test that training leaves every model file the codec needs."""
        _, report = trained_model

        assert len(report.artifacts) == 12 + 4
        for path in trained_config.model_files():
            assert path.is_file()
        trained_config.require_model_files()

    def test_summary_and_log(self, trained_config):
        """Test that training.json and training.log land next to the models."""
        summary = json.loads((trained_config.artifact_dir / TRAINING_SUMMARY).read_text())

        assert len(summary["analyzers"]) == 12
        assert summary["synthesis"]["train_loss"]
        assert summary["n_syllables"] >= 2
        assert "Prosodic codebook" in (trained_config.artifact_dir / TRAINING_LOG).read_text()

    def test_detector_cost_does_not_increase(self, trained_model):
        """Test that detector tuning ends no worse than it started."""
        _, report = trained_model
        assert report.snn_cost_final <= report.snn_cost_initial

    def test_codebooks_match_the_profile(self, trained_model, trained_config):
        """Test that the saved codebooks fit the GP scheme."""
        _, report = trained_model
        segmental = load_codebook(trained_config.segmental_codebook_path)

        assert segmental.k == 12
        assert segmental.size == report.codebook_size >= 1
        assert load_prosodic_codebook(trained_config.prosodic_codebook_path).mean_sigma > 0

    def test_network_shapes(self, trained_config):
        """Test the analyzer and synthesis network dimensions."""
        analyzer = load_weights(trained_config.analyzer_paths[0])
        synthesis = load_weights(trained_config.synthesis_path)

        assert analyzer.input_dim == 39 * 9 and analyzer.output_dim == 2
        assert synthesis.input_dim == 12 * 11 and synthesis.output_dim == 84

    def test_prepare_aligns_every_stream(self, toy_corpus, trained_config):
        """Test that features, targets, pitch and vocoder parameters share one frame count."""
        trainer = TrainingService(trained_config)
        prepared = trainer.prepare(load_utterance(load_manifest(toy_corpus)[0]))

        n = prepared.n_frames
        assert prepared.stacked.shape == (n, 351)
        assert prepared.targets.shape == (n, 12)
        assert prepared.speech_params.shape == (n, 84)
        assert prepared.f0.n_frames == n
        assert prepared.cepstra.shape == (n, 13)

    def test_empty_manifest_raises_error(self, tmp_path):
        """Test that a manifest without utterances raises EmptyCorpus."""
        manifest = tmp_path / "manifest.tsv"
        manifest.write_text("# empty\n")
        config = CodecConfig(overrides={"model_dir": str(tmp_path / "models")})

        with pytest.raises(EmptyCorpus):
            TrainingService(config).train(manifest)

    def test_report_to_dict(self):
        """Test that an empty report serializes."""
        document = TrainingReport().to_dict()
        assert document["analyzers"] == [] and document["synthesis"] is None

    def test_fixed_seed_reproduces_artifacts(self, toy_corpus, trained_config, tmp_path):
        """Test that retraining with the same seed writes byte-identical model files."""
        config = CodecConfig(profile="gp16", overrides={
            "model_dir": str(tmp_path), "training": asdict(trained_config.training),
        })
        TrainingService(config).train(toy_corpus)

        for first, second in zip(trained_config.model_files(), config.model_files()):
            assert first.name == second.name
            assert first.read_bytes() == second.read_bytes()
