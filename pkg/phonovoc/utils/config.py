import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from phonovoc.utils.errors import ConfigError
from phonovoc.utils.schemes import EXPECTED_K, SCHEMES

VALID_FRAME_SHIFTS = (10, 16, 20)
DEFAULT_PROFILE = "gp16"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

DEFAULT_SETTINGS: Dict[str, Any] = {
    "model_dir": "models",
    "sample_rate": 16000,
    "window_ms": 25,
    "analysis_context": 9,
    "synthesis_context": 11,
    "f0_min_hz": 50.0,
    "f0_max_hz": 500.0,
    "voicing_threshold": 0.3,
    "lpc_order": 24,
    "vocoder_noise_seed": 0,
    "output_peak": 0.9,
    "synthesis_inputs": "continuous",
    "network_latency_ms": 130.0,
    "log_level": "INFO",
    "jobs": 1,
    "seed": 0,
}


def _builtin_profiles() -> Dict[str, Dict[str, Any]]:
    profiles = {}
    for scheme in SCHEMES:
        for shift in VALID_FRAME_SHIFTS:
            profiles[f"{scheme.lower()}{shift}"] = {"scheme": scheme, "frame_shift_ms": shift}
    return profiles


@dataclass
class TrainingSettings:
    """Desk-scale training hyper-parameters."""

    analyzer_hidden: List[int] = field(default_factory=lambda: [64])
    synthesis_hidden: List[int] = field(default_factory=lambda: [64, 64])
    learning_rate: float = 0.1
    synthesis_learning_rate: float = 0.05
    momentum: float = 0.5
    epochs: int = 40
    batch_size: int = 32
    patience: int = 3
    cv_fraction: float = 0.1
    snn_budget: int = 40

    @classmethod
    def from_mapping(cls, values: Dict[str, Any]) -> "TrainingSettings":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"Unknown training setting(s): {', '.join(sorted(unknown))}")
        return cls(**values)


class CodecConfig:
    """Configuration management for the codec: profiles, model paths and tunables."""

    def __init__(
        self,
        config_path: Optional[str] = None,
        profile: Optional[str] = None,
        overrides: Optional[Dict[str, Any]] = None,
    ):
        """
        Initialize configuration from a TOML file, the environment and overrides.

        Args:
            config_path: Optional TOML file; falls back to PHONOVOC_CONFIG
            profile: Optional profile name; falls back to PHONOVOC_PROFILE, then gp16
            overrides: Optional values that win over every other source

        Raises:
            ConfigError: If the file is missing or a value is invalid
        """
        # Load environment variables from .env file if it exists
        load_dotenv()

        self.config_path = config_path or os.getenv("PHONOVOC_CONFIG")
        self.profile = profile or os.getenv("PHONOVOC_PROFILE") or DEFAULT_PROFILE
        self._overrides = dict(overrides or {})

        self._load_file()
        self._load_required_vars()
        self._load_optional_vars()

    def _load_file(self):
        """Read the TOML file (if any) and merge defaults with the selected profile."""
        document: Dict[str, Any] = {}
        if self.config_path:
            path = Path(self.config_path)
            if not path.is_file():
                raise ConfigError(f"Config file not found: {path}")
            try:
                with path.open("rb") as handle:
                    document = tomllib.load(handle)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"Invalid config file {path}: {e}")

        profiles = _builtin_profiles()
        for name, values in document.get("profiles", {}).items():
            profiles.setdefault(name, {}).update(values)

        if self.profile not in profiles:
            raise ConfigError(f"Unknown profile: {self.profile}. Available: {', '.join(sorted(profiles))}")

        settings = dict(DEFAULT_SETTINGS)
        settings.update(document.get("defaults", {}))
        settings.update(profiles[self.profile])

        training = dict(document.get("training", {}))
        training.update(self._overrides.pop("training", {}) or {})
        self.training = TrainingSettings.from_mapping(training)

        settings.update(self._overrides)
        self._settings = settings

    def _load_required_vars(self):
        """Load and validate the values every profile must define."""
        settings = self._settings

        self.scheme = settings.get("scheme")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"Missing or unknown scheme: {self.scheme}. Expected one of {sorted(SCHEMES)}")

        try:
            self.frame_shift_ms = int(settings.get("frame_shift_ms"))
        except (TypeError, ValueError):
            raise ConfigError("Missing required setting: frame_shift_ms")
        if self.frame_shift_ms not in VALID_FRAME_SHIFTS:
            raise ConfigError(f"frame_shift_ms must be one of {VALID_FRAME_SHIFTS}, got {self.frame_shift_ms}")

        self.class_names: Tuple[str, ...] = tuple(settings.get("class_names") or SCHEMES[self.scheme].class_names)
        if len(set(self.class_names)) != len(self.class_names):
            raise ConfigError(f"class_names must be unique for scheme {self.scheme}")
        if len(self.class_names) != EXPECTED_K[self.scheme]:
            raise ConfigError(
                f"Scheme {self.scheme} expects {EXPECTED_K[self.scheme]} classes, got {len(self.class_names)}"
            )
        self.phonological_scheme = SCHEMES[self.scheme].with_class_order(self.class_names)

    def _load_optional_vars(self):
        """Load optional values, letting PHONOVOC_* environment variables win over the file."""
        settings = self._settings

        self.model_dir = Path(os.getenv("PHONOVOC_MODEL_DIR", settings["model_dir"]))
        if "model_dir" in self._overrides:
            self.model_dir = Path(self._overrides["model_dir"])
        self.artifact_dir = Path(settings.get("artifact_dir") or self.model_dir / self.profile)

        self.sample_rate = int(settings["sample_rate"])
        self.window_ms = int(settings["window_ms"])
        self.analysis_context = int(settings["analysis_context"])
        self.synthesis_context = int(settings["synthesis_context"])
        self.f0_min_hz = float(settings["f0_min_hz"])
        self.f0_max_hz = float(settings["f0_max_hz"])
        self.voicing_threshold = float(settings["voicing_threshold"])
        self.lpc_order = int(settings["lpc_order"])
        self.vocoder_noise_seed = int(settings["vocoder_noise_seed"])
        self.output_peak = float(settings["output_peak"])
        self.network_latency_ms = float(settings["network_latency_ms"])

        for key in ("analysis_context", "synthesis_context"):
            value = getattr(self, key)
            if value < 1 or value % 2 == 0:
                raise ConfigError(f"{key} must be a positive odd number, got {value}")
        if self.lpc_order < 2 or self.lpc_order % 2:
            raise ConfigError(f"lpc_order must be even and at least 2, got {self.lpc_order}")
        if not 0 < self.f0_min_hz < self.f0_max_hz < self.sample_rate / 2:
            raise ConfigError(f"Invalid F0 range: {self.f0_min_hz}-{self.f0_max_hz} Hz")

        self.synthesis_inputs = settings["synthesis_inputs"]
        if self.synthesis_inputs not in ("continuous", "binary"):
            raise ConfigError(f"synthesis_inputs must be 'continuous' or 'binary', got {self.synthesis_inputs}")

        # Logging and execution
        self.log_level = os.getenv("PHONOVOC_LOG_LEVEL", settings["log_level"])
        self.jobs = int(os.getenv("PHONOVOC_JOBS", settings["jobs"]))
        self.seed = int(os.getenv("PHONOVOC_SEED", settings["seed"]))
        for key in ("log_level", "jobs", "seed"):
            if key in self._overrides:
                setattr(self, key, type(getattr(self, key))(self._overrides[key]))
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if str(self.log_level).upper() not in LOG_LEVELS:
            raise ConfigError(f"log_level must be one of {', '.join(LOG_LEVELS)}, got {self.log_level}")

    @property
    def k(self) -> int:
        return len(self.class_names)

    @property
    def analyzer_paths(self) -> List[Path]:
        return [self.artifact_dir / f"analyzer_{index:02d}.pvw" for index in range(self.k)]

    @property
    def synthesis_path(self) -> Path:
        return self.artifact_dir / "synthesis.pvw"

    @property
    def segmental_codebook_path(self) -> Path:
        return self.artifact_dir / "segmental.pvcb"

    @property
    def prosodic_codebook_path(self) -> Path:
        return self.artifact_dir / "prosodic.json"

    @property
    def snn_params_path(self) -> Path:
        return self.artifact_dir / "snn.json"

    def model_files(self) -> List[Path]:
        return [*self.analyzer_paths, self.synthesis_path, self.segmental_codebook_path,
                self.prosodic_codebook_path, self.snn_params_path]

    def require_model_files(self):
        """
        Check that every trained artifact exists.

        Raises:
            ConfigError: Naming the first missing path
        """
        for path in self.model_files():
            if not path.is_file():
                raise ConfigError(f"Missing model file: {path}")
