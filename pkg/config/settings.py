"""
Application Settings and Configuration
Configuration management for prunekit: run configuration dataclasses,
the KEY=value run-config file format, and process-wide settings
"""

import io
import math
import os
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import dotenv_values, load_dotenv
from loguru import logger

from utils.errors import ConfigError

# Load environment variables
load_dotenv()


class Environment(Enum):
    """Application environment types"""
    DEVELOPMENT = "development"
    STAGING = "staging"
    PRODUCTION = "production"


PIPELINE_KINDS = ("joint", "ft_then_prune", "prune_then_ft", "prune_pretrain_then_ft")


@dataclass
class ModelConfig:
    """Architecture of the FastSpeech-2-style network"""
    vocab_size: int = 40
    d: int = 32
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_heads: int = 2
    d_k: int = 32
    d_f: int = 64
    adaptor_hidden: int = 32
    postnet_hidden: int = 32
    n_mel: int = 20
    n_speakers: int = 20
    adaptor_layers: int = 2
    postnet_layers: int = 2
    kernel_size: int = 3
    max_len: int = 64
    ln_eps: float = 1e-5
    # Filled in by compaction: surviving extent per prunable dimension and
    # surviving head ids per attention layer. Empty means "unpruned".
    extents: Dict[str, int] = field(default_factory=dict)
    head_ids: Dict[str, List[int]] = field(default_factory=dict)

    @property
    def head_dim(self) -> int:
        """Per-head width of the unpruned model"""
        return self.d_k // self.n_heads

    @property
    def attention_scale(self) -> float:
        # fixed from the unpruned width so compaction leaves logits unchanged
        return math.sqrt(self.head_dim)

    def extent(self, name: str, default: int) -> int:
        return int(self.extents.get(name, default))

    def layer_prefixes(self) -> List[str]:
        return [f"enc.{i}" for i in range(self.n_enc_layers)] + [f"dec.{i}" for i in range(self.n_dec_layers)]

    def heads(self, prefix: str) -> List[int]:
        return list(self.head_ids.get(prefix, range(self.n_heads)))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        values = dict(data)
        values["extents"] = {str(k): int(v) for k, v in values.get("extents", {}).items()}
        values["head_ids"] = {str(k): [int(h) for h in v] for k, v in values.get("head_ids", {}).items()}
        return cls(**values)


@dataclass
class GateConfig:
    """Hard-concrete gate hyperparameters"""
    beta: float = 1.0
    gamma: float = 0.0
    eta: float = 1.0
    init_log_alpha: float = 2.5
    eps: float = 1e-6
    penalty: str = "sampled"
    prune_model_d: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainingConfig:
    """Optimization and stage budgets"""
    optimizer: str = "adam"
    lr_weights: float = 1e-3
    lr_gates: float = 1e-2
    batch_size: int = 8
    pretrain_steps: int = 3000
    stage_min_steps: int = 500
    stage_max_steps: int = 2000
    eval_every: int = 50
    patience: int = 200
    min_improvement: float = 0.01
    reg_multiplier: float = 1.0
    aux_weight: float = 0.1
    log_every: int = 10
    prune_trains_weights: bool = False
    polarization_warn: float = 0.10
    polarization_fail: float = 0.25


@dataclass
class CorpusConfig:
    """Synthetic pretraining corpus and clone task sizes"""
    samples_per_speaker: int = 32
    eval_per_speaker: int = 4
    min_len: int = 8
    max_len: int = 32
    feature_dim: int = 16
    n_support: int = 8
    n_eval: int = 16


@dataclass
class PipelineConfig:
    """Which prune/fine-tune pipeline a clone run executes"""
    kind: str = "joint"
    n_probe: int = 10


@dataclass
class PathConfig:
    """Output locations"""
    out_dir: str = "default"
    checkpoint_name: str = "base.ckpt"


_SECTIONS = {
    "MODEL": "model",
    "GATES": "gates",
    "TRAINING": "training",
    "CORPUS": "corpus",
    "PIPELINE": "pipeline",
    "PATHS": "paths",
}


def _parse_value(raw: str, kind: type, key: str):
    text = str(raw).strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


@dataclass
class RunConfig:
    """
    Everything a run needs; a run is reproducible from this object and the code
    """
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    gates: GateConfig = field(default_factory=GateConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    paths: PathConfig = field(default_factory=PathConfig)

    @classmethod
    def from_text(cls, text: str, source: str = "<text>") -> "RunConfig":
        """
        Parse the KEY=value run-config format

        Args:
            text: File contents
            source: Name used in error messages

        Returns:
            Validated RunConfig
        """
        values = dotenv_values(stream=io.StringIO(text))
        return cls._from_values(values, source)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        return cls._from_values(dotenv_values(config_path), str(config_path))

    @classmethod
    def _from_values(cls, values: Dict[str, Optional[str]], source: str) -> "RunConfig":
        config = cls()
        for key, raw in values.items():
            if raw is None:
                raise ConfigError(f"{source}: key {key} has no value")
            if key == "SEED":
                config.seed = _parse_value(raw, int, key)
                continue
            section, _, name = key.partition("_")
            attr = _SECTIONS.get(section)
            if attr is None or not name:
                raise ConfigError(f"{source}: unknown key {key}")
            target = getattr(config, attr)
            spec = {f.name: f for f in fields(target)}.get(name.lower())
            if spec is None or spec.type not in (int, float, bool, str):
                raise ConfigError(f"{source}: unknown key {key}")
            setattr(target, spec.name, _parse_value(raw, spec.type, key))
        config.validate(source)
        return config

    def to_text(self) -> str:
        """Serialize to the KEY=value format (sorted keys within sections)"""
        lines = [f"SEED={self.seed}"]
        for section, attr in _SECTIONS.items():
            lines.append("")
            lines.append(f"# {attr}")
            target = getattr(self, attr)
            for spec in sorted(fields(target), key=lambda f: f.name):
                if spec.type not in (int, float, bool, str):
                    continue
                lines.append(f"{section}_{spec.name.upper()}={_format_value(getattr(target, spec.name))}")
        return "\n".join(lines) + "\n"

    def validate(self, source: str = "<config>") -> None:
        """Raise ConfigError on the first invalid section; log the warnings of valid ones"""
        from utils.validators import (
            validate_gate_config,
            validate_model_config,
            validate_seed,
            validate_training_config,
        )
        for result in (
            validate_seed(self.seed),
            validate_model_config(self.model),
            validate_gate_config(self.gates),
            validate_training_config(self.training, self.corpus),
        ):
            if not result:
                raise ConfigError(f"{source}: {result.message}")
            for warning in result.warnings:
                logger.warning(f"{source}: {warning}")
        if self.pipeline.kind not in PIPELINE_KINDS:
            raise ConfigError(
                f"{source}: unknown pipeline kind {self.pipeline.kind!r}; "
                f"valid kinds: {', '.join(PIPELINE_KINDS)}"
            )


class Settings:
    """
    Process-wide settings read from the environment
    Implements singleton pattern for consistent access across application
    """
    _instance: Optional['Settings'] = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._initialize()
        return cls._instance

    def _initialize(self):
        """Initialize from environment variables"""
        self.environment = self._get_environment()
        self.debug = self.environment == Environment.DEVELOPMENT
        self.log_level = os.getenv("PRUNEKIT_LOG_LEVEL", "INFO").upper()
        self.log_file = os.getenv("PRUNEKIT_LOG_FILE") or None
        self.runs_dir = os.getenv("PRUNEKIT_RUNS_DIR", "runs")
        try:
            self.threads = max(1, int(os.getenv("PRUNEKIT_THREADS", "1")))
        except ValueError:
            self.threads = 1

    @staticmethod
    def _get_environment() -> Environment:
        """Get current environment from environment variable"""
        env = os.getenv("PRUNEKIT_ENVIRONMENT", "development").lower()
        try:
            return Environment(env)
        except ValueError:
            return Environment.DEVELOPMENT

    def apply_thread_limits(self) -> None:
        """Pin BLAS/OpenMP pools; must run before numpy is imported"""
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(self.threads))


# Global settings instance
settings = Settings()
