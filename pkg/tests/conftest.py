import pytest

from phonovoc.services.corpus_service import write_corpus
from phonovoc.services.training_service import TrainingService
from phonovoc.utils.config import CodecConfig

ENV_VARS = (
    "PHONOVOC_CONFIG", "PHONOVOC_PROFILE", "PHONOVOC_MODEL_DIR",
    "PHONOVOC_LOG_LEVEL", "PHONOVOC_JOBS", "PHONOVOC_SEED",
)

# Small enough to train in seconds; quality is not the point here
TOY_TRAINING = {
    "analyzer_hidden": [16],
    "synthesis_hidden": [32],
    "epochs": 6,
    "patience": 6,
    "batch_size": 64,
    "snn_budget": 2,
}


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    """Keep PHONOVOC_* variables of the calling shell out of every test."""
    for var in ENV_VARS:
        monkeypatch.delenv(var, raising=False)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Manifest of a six-utterance synthetic corpus."""
    out_dir = tmp_path_factory.mktemp("corpus")
    return write_corpus(out_dir, n_utterances=6, seed=0, syllables_per_utterance=(4, 6))


def _train_toy_model(tmp_path_factory, manifest, profile):
    model_dir = tmp_path_factory.mktemp(f"models_{profile}")
    with pytest.MonkeyPatch.context() as patcher:
        for var in ENV_VARS:
            patcher.delenv(var, raising=False)
        config = CodecConfig(profile=profile, overrides={"model_dir": str(model_dir), "training": dict(TOY_TRAINING)})
        report = TrainingService(config).train(manifest)
    return model_dir, report


@pytest.fixture(scope="session")
def trained_model(tmp_path_factory, toy_corpus):
    """Model directory and training report of a toy gp16 model."""
    return _train_toy_model(tmp_path_factory, toy_corpus, "gp16")


@pytest.fixture(scope="session")
def trained_phone_model(tmp_path_factory, toy_corpus):
    """Model directory and training report of a toy phone16 model."""
    return _train_toy_model(tmp_path_factory, toy_corpus, "phone16")


@pytest.fixture
def trained_config(trained_model):
    """Fresh configuration pointing at the toy model."""
    model_dir, _ = trained_model
    return CodecConfig(profile="gp16", overrides={"model_dir": str(model_dir), "training": dict(TOY_TRAINING)})
