# Utils module
from utils.errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DimensionError,
    NumericError,
    PlanError,
    PruneKitError,
    SamplerError,
    SpecError,
    UsageError,
)
from utils.helpers import compression_ratio, format_duration, format_number, sparsity_percent
from utils.validators import (
    ValidationResult,
    validate_gate_config,
    validate_model_config,
    validate_run_directory,
    validate_tensor_shapes,
    validate_training_config,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DimensionError",
    "NumericError",
    "PlanError",
    "PruneKitError",
    "SamplerError",
    "SpecError",
    "UsageError",
    "compression_ratio",
    "format_duration",
    "format_number",
    "sparsity_percent",
    "ValidationResult",
    "validate_gate_config",
    "validate_model_config",
    "validate_run_directory",
    "validate_tensor_shapes",
    "validate_training_config",
]
