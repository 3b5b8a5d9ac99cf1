# Configuration module
from config.settings import (
    PIPELINE_KINDS,
    CorpusConfig,
    GateConfig,
    ModelConfig,
    PathConfig,
    PipelineConfig,
    RunConfig,
    Settings,
    TrainingConfig,
    settings,
)

__all__ = [
    "PIPELINE_KINDS",
    "CorpusConfig",
    "GateConfig",
    "ModelConfig",
    "PathConfig",
    "PipelineConfig",
    "RunConfig",
    "Settings",
    "TrainingConfig",
    "settings",
]
