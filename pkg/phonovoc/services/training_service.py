import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from phonovoc.services.corpus_service import (
    Utterance,
    frame_labels,
    label_targets,
    load_manifest,
    load_utterance,
)
from phonovoc.services.frontend_service import F0Track, FrontendService, stack_context
from phonovoc.services.neural_service import (
    AnalyzerBank,
    TrainingConfig,
    TrainingHistory,
    analyze_matrix,
    binarize,
    load_bank,
    save_weights,
    train_mlp,
)
from phonovoc.services.prosody_service import (
    build_prosodic_codebooks,
    fit_syllables,
    save_prosodic_codebook,
)
from phonovoc.services.segmental_service import build_codebook, save_codebook
from phonovoc.services.snn_service import (
    BoundarySet,
    SnnParams,
    corpus_cost,
    detect_syllables,
    save_snn_params,
    train_snn,
)
from phonovoc.services.synthesis_service import extract_speech_params
from phonovoc.utils.config import CodecConfig
from phonovoc.utils.errors import DegenerateCorpus, TrainingError
from phonovoc.utils.log import configure_logging

logger = logging.getLogger(__name__)

TRAINING_LOG = "training.log"
TRAINING_SUMMARY = "training.json"


@dataclass
class PreparedUtterance:
    """Everything the trainers need from one labeled utterance."""

    stacked: np.ndarray
    targets: np.ndarray
    f0: F0Track
    speech_params: np.ndarray
    cepstra: np.ndarray
    boundaries: BoundarySet

    @property
    def n_frames(self) -> int:
        return self.stacked.shape[0]


@dataclass
class TrainingReport:
    """Summary of one training run."""

    analyzer_histories: List[TrainingHistory] = field(default_factory=list)
    synthesis_history: Optional[TrainingHistory] = None
    snn_cost_initial: float = 0.0
    snn_cost_final: float = 0.0
    codebook_size: int = 0
    n_syllables: int = 0
    n_frames: int = 0
    artifacts: List[Path] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            "analyzers": [history.to_dict() for history in self.analyzer_histories],
            "synthesis": self.synthesis_history.to_dict() if self.synthesis_history else None,
            "snn_cost_initial_ms": self.snn_cost_initial,
            "snn_cost_final_ms": self.snn_cost_final,
            "codebook_size": self.codebook_size,
            "n_syllables": self.n_syllables,
            "n_frames": self.n_frames,
        }


class TrainingService:
    """Trains every network and codebook of one profile from a labeled manifest."""

    def __init__(self, config: CodecConfig, frontend: Optional[FrontendService] = None):
        """
        Initialize the trainer.

        Args:
            config: Codec configuration; artifacts go to config.artifact_dir
            frontend: Optional frontend (built from config by default)
        """
        self.config = config
        self.scheme = config.phonological_scheme
        self.frontend = frontend or FrontendService.from_config(config)
        self.settings = config.training

    def prepare(self, utterance: Utterance) -> PreparedUtterance:
        """Extract features, targets, pitch and vocoder parameters of one utterance."""
        clip = utterance.clip
        stacked = self.frontend.analysis_features(clip, self.config.analysis_context)
        phones = frame_labels(utterance.labels, self.frontend.grid, stacked.shape[0])
        f0 = self.frontend.f0(clip)
        params = extract_speech_params(clip, self.frontend.grid, f0, self.config.lpc_order)
        return PreparedUtterance(
            stacked=stacked,
            targets=label_targets(phones, self.scheme),
            f0=f0,
            speech_params=params.values,
            cepstra=self.frontend.snn_cepstra(clip),
            boundaries=utterance.boundaries,
        )

    def load_corpus(self, manifest: Union[str, Path]) -> List[PreparedUtterance]:
        """
        Load and prepare every manifest utterance with a bounded worker pool.

        Raises:
            EmptyCorpus: If the manifest lists nothing
        """
        entries = load_manifest(manifest)

        def work(entry):
            return self.prepare(load_utterance(entry, self.config.sample_rate))

        with ThreadPoolExecutor(max_workers=self.config.jobs) as pool:
            prepared = list(pool.map(work, entries))
        logger.info("Prepared %d utterances (%d frames)", len(prepared), sum(p.n_frames for p in prepared))
        return prepared

    def train_analyzers(self, corpus: Sequence[PreparedUtterance]) -> List[TrainingHistory]:
        """Train one two-class network per phonological class and write it to disk."""
        inputs = np.vstack([p.stacked for p in corpus])
        targets = np.vstack([p.targets for p in corpus])

        def work(index: int) -> TrainingHistory:
            present = targets[:, index].astype(np.float64)
            one_hot = np.stack([1.0 - present, present], axis=1)
            config = TrainingConfig(
                hidden_dims=tuple(self.settings.analyzer_hidden),
                output_kind="softmax",
                learning_rate=self.settings.learning_rate,
                momentum=self.settings.momentum,
                epochs=self.settings.epochs,
                batch_size=self.settings.batch_size,
                patience=self.settings.patience,
                cv_fraction=self.settings.cv_fraction,
                seed=self.config.seed + index,
            )
            try:
                weights, history = train_mlp(inputs, one_hot, config)
            except TrainingError as e:
                raise type(e)(f"Analyzer {self.config.class_names[index]!r}: {e}") from e
            save_weights(weights, self.config.analyzer_paths[index], {
                "role": "analyzer",
                "class_name": self.config.class_names[index],
                "scheme": self.config.scheme,
            })
            logger.info(
                "Analyzer %-12s cv loss %.4f after %d epochs",
                self.config.class_names[index], history.cv_loss[-1] if history.cv_loss else float("nan"),
                len(history.train_loss),
            )
            return history

        with ThreadPoolExecutor(max_workers=self.config.jobs) as pool:
            return list(pool.map(work, range(self.config.k)))

    def synthesis_inputs(self, bank: AnalyzerBank, prepared: PreparedUtterance) -> np.ndarray:
        posteriors = analyze_matrix(bank, prepared.stacked)
        if self.config.synthesis_inputs == "binary":
            posteriors = binarize(posteriors).astype(np.float64)
        return stack_context(posteriors, self.config.synthesis_context)

    def train_synthesis(self, bank: AnalyzerBank, corpus: Sequence[PreparedUtterance]) -> TrainingHistory:
        """Fit the posterior-to-parameter network and write it to disk."""
        inputs = np.vstack([self.synthesis_inputs(bank, p) for p in corpus])
        targets = np.vstack([p.speech_params for p in corpus])
        config = TrainingConfig(
            hidden_dims=tuple(self.settings.synthesis_hidden),
            output_kind="linear",
            learning_rate=self.settings.synthesis_learning_rate,
            momentum=self.settings.momentum,
            epochs=self.settings.epochs,
            batch_size=self.settings.batch_size,
            patience=self.settings.patience,
            cv_fraction=self.settings.cv_fraction,
            seed=self.config.seed + self.config.k,
        )
        try:
            weights, history = train_mlp(inputs, targets, config)
        except TrainingError as e:
            raise type(e)(f"Synthesis network: {e}") from e
        save_weights(weights, self.config.synthesis_path, {
            "role": "synthesis",
            "scheme": self.config.scheme,
            "context": self.config.synthesis_context,
            "inputs": self.config.synthesis_inputs,
        })
        logger.info("Synthesis network cv loss %.4f after %d epochs",
                    history.cv_loss[-1] if history.cv_loss else float("nan"), len(history.train_loss))
        return history

    def train_detector(self, corpus: Sequence[PreparedUtterance], report: TrainingReport) -> SnnParams:
        """Tune the spiking syllable detector against the reference boundaries."""
        snn_corpus = [(p.cepstra, p.boundaries.times_ms) for p in corpus]
        init = SnnParams()
        shift, window = self.config.frame_shift_ms, self.config.window_ms
        report.snn_cost_initial = corpus_cost(snn_corpus, init, shift, window)
        params = train_snn(snn_corpus, init, self.settings.snn_budget, self.config.seed, shift, window)
        report.snn_cost_final = corpus_cost(snn_corpus, params, shift, window)
        save_snn_params(params, self.config.snn_params_path)
        return params

    def train(self, manifest: Union[str, Path]) -> TrainingReport:
        """
        Run the full training pipeline and write every artifact.

        Args:
            manifest: Corpus manifest path

        Returns:
            TrainingReport: Losses, detector cost and artifact paths

        Raises:
            EmptyCorpus: If the manifest lists nothing
            TrainingDiverged: If any network diverges
            DegenerateCorpus: If the corpus cannot support a prosodic codebook
        """
        artifact_dir = Path(self.config.artifact_dir)
        artifact_dir.mkdir(parents=True, exist_ok=True)
        configure_logging(self.config.log_level, artifact_dir / TRAINING_LOG)
        try:
            return self._train(manifest, artifact_dir)
        finally:
            configure_logging(self.config.log_level)

    def _train(self, manifest: Union[str, Path], artifact_dir: Path) -> TrainingReport:
        logger.info("Training profile %s (%s, %d ms) from %s",
                    self.config.profile, self.config.scheme, self.config.frame_shift_ms, manifest)
        corpus = self.load_corpus(manifest)
        report = TrainingReport(n_frames=sum(p.n_frames for p in corpus))

        report.analyzer_histories = self.train_analyzers(corpus)
        # Everything downstream sees the single-precision weights the codec will load
        bank = load_bank(self.config.scheme, self.config.class_names, self.config.analyzer_paths)

        binary = np.vstack([binarize(analyze_matrix(bank, p.stacked)) for p in corpus])
        codebook = build_codebook(binary, self.config.scheme)
        save_codebook(codebook, self.config.segmental_codebook_path)
        report.codebook_size = codebook.size

        report.synthesis_history = self.train_synthesis(bank, corpus)

        snn_params = self.train_detector(corpus, report)

        coeffs = []
        for prepared in corpus:
            boundaries = detect_syllables(prepared.cepstra, snn_params, self.config.frame_shift_ms,
                                          self.config.window_ms)
            coeffs.extend(c for c, _ in fit_syllables(prepared.f0, boundaries.times_ms))
        report.n_syllables = len(coeffs)
        try:
            prosodic = build_prosodic_codebooks(coeffs)
        except DegenerateCorpus as e:
            raise DegenerateCorpus(f"Prosodic codebook from {len(coeffs)} syllables: {e}") from e
        save_prosodic_codebook(prosodic, self.config.prosodic_codebook_path)
        logger.info("Prosodic codebook from %d syllables", len(coeffs))

        report.artifacts = self.config.model_files()
        (artifact_dir / TRAINING_SUMMARY).write_text(json.dumps(report.to_dict(), indent=2))
        logger.info("Wrote %d artifacts to %s", len(report.artifacts), artifact_dir)
        return report
