"""
Validators Module
Input validation utilities for configurations, checkpoints and run directories
"""

from pathlib import Path
from typing import Dict, List, Tuple


class ValidationResult:
    """Validation result container"""

    def __init__(self, is_valid: bool, message: str = "", warnings: List[str] = None):
        self.is_valid = is_valid
        self.message = message
        self.warnings = warnings or []

    def __bool__(self):
        return self.is_valid


def validate_seed(seed: int, name: str = "SEED") -> ValidationResult:
    """Seeds key numpy generators, which reject negative entropy"""
    if seed < 0:
        return ValidationResult(False, f"{name} must be >= 0, got {seed}")
    return ValidationResult(True, "Seed is valid")


def validate_model_config(config) -> ValidationResult:
    """
    Validate architecture hyperparameters

    Args:
        config: ModelConfig to validate

    Returns:
        ValidationResult object
    """
    warnings = []

    positive = {
        "vocab_size": config.vocab_size,
        "d": config.d,
        "n_heads": config.n_heads,
        "d_k": config.d_k,
        "d_f": config.d_f,
        "adaptor_hidden": config.adaptor_hidden,
        "postnet_hidden": config.postnet_hidden,
        "n_mel": config.n_mel,
        "n_speakers": config.n_speakers,
        "adaptor_layers": config.adaptor_layers,
        "postnet_layers": config.postnet_layers,
        "kernel_size": config.kernel_size,
        "max_len": config.max_len,
    }
    for name, value in positive.items():
        if value < 1:
            return ValidationResult(False, f"model.{name} must be >= 1, got {value}")

    if config.n_enc_layers < 0 or config.n_dec_layers < 0:
        return ValidationResult(False, "layer counts must be >= 0")

    if config.d_k % config.n_heads != 0:
        return ValidationResult(False, f"d_k={config.d_k} is not divisible by n_heads={config.n_heads}")

    if config.kernel_size % 2 != 1:
        return ValidationResult(False, f"kernel_size must be odd, got {config.kernel_size}")

    if config.ln_eps <= 0:
        return ValidationResult(False, "ln_eps must be > 0")

    for name, extent in config.extents.items():
        if extent < 1:
            return ValidationResult(False, f"extent of {name} must be >= 1, got {extent}")

    if config.n_enc_layers + config.n_dec_layers == 0:
        warnings.append("model has no transformer layers")

    return ValidationResult(True, "Model configuration is valid", warnings)


def validate_gate_config(config) -> ValidationResult:
    """
    Validate hard-concrete hyperparameters

    Args:
        config: GateConfig to validate

    Returns:
        ValidationResult object
    """
    if config.beta <= 0:
        return ValidationResult(False, f"gates.beta must be > 0, got {config.beta}")
    if config.gamma > 0:
        return ValidationResult(False, f"gates.gamma must be <= 0, got {config.gamma}")
    if config.eta < 1:
        return ValidationResult(False, f"gates.eta must be >= 1, got {config.eta}")
    if not 0 < config.eps < 0.5:
        return ValidationResult(False, f"gates.eps must be in (0, 0.5), got {config.eps}")
    if config.penalty not in ("sampled", "expected"):
        return ValidationResult(False, f"gates.penalty must be 'sampled' or 'expected', got {config.penalty!r}")

    warnings = []
    if config.init_log_alpha < 0:
        warnings.append("init_log_alpha < 0 starts every gate binarized to 0")
    return ValidationResult(True, "Gate configuration is valid", warnings)


def validate_training_config(training, corpus) -> ValidationResult:
    """
    Validate optimization budgets and corpus sizes

    Args:
        training: TrainingConfig
        corpus: CorpusConfig

    Returns:
        ValidationResult object
    """
    if training.optimizer not in ("adam", "sgd"):
        return ValidationResult(False, f"training.optimizer must be 'adam' or 'sgd', got {training.optimizer!r}")
    if training.lr_weights < 0 or training.lr_gates < 0:
        return ValidationResult(False, "learning rates must be >= 0")
    if training.batch_size < 1:
        return ValidationResult(False, "training.batch_size must be >= 1")
    if training.stage_max_steps < 0 or training.stage_min_steps < 0 or training.pretrain_steps < 0:
        return ValidationResult(False, "step budgets must be >= 0")
    if training.eval_every < 1 or training.log_every < 1 or training.patience < 1:
        return ValidationResult(False, "eval_every, log_every and patience must be >= 1")
    if training.reg_multiplier < 0:
        return ValidationResult(False, "training.reg_multiplier must be >= 0")
    if not 1 <= corpus.min_len <= corpus.max_len:
        return ValidationResult(False, "sequence lengths must satisfy 1 <= min_len <= max_len")
    if corpus.n_support < 1 or corpus.n_eval < 1 or corpus.samples_per_speaker < 1:
        return ValidationResult(False, "corpus sizes must be >= 1")

    warnings = []
    if training.stage_min_steps > training.stage_max_steps:
        warnings.append("stage_min_steps exceeds stage_max_steps; max wins")
    return ValidationResult(True, "Training configuration is valid", warnings)


def validate_tensor_shapes(
    expected: Dict[str, Tuple[int, ...]],
    actual: Dict[str, Tuple[int, ...]]
) -> ValidationResult:
    """
    Check that a set of named tensors matches the shapes a config implies

    Args:
        expected: Shapes derived from the model config
        actual: Shapes found in a checkpoint

    Returns:
        ValidationResult object
    """
    missing = sorted(set(expected) - set(actual))
    if missing:
        return ValidationResult(False, f"missing tensors: {', '.join(missing[:5])}")
    extra = sorted(set(actual) - set(expected))
    if extra:
        return ValidationResult(False, f"unexpected tensors: {', '.join(extra[:5])}")
    for name, shape in expected.items():
        if tuple(actual[name]) != tuple(shape):
            return ValidationResult(False, f"{name}: shape {tuple(actual[name])} does not match config {tuple(shape)}")
    return ValidationResult(True, "Tensor shapes match configuration")


def validate_run_directory(path: str) -> ValidationResult:
    """
    Validate a directory expected to hold stage record files

    Args:
        path: Run directory

    Returns:
        ValidationResult object
    """
    run_dir = Path(path)
    if not run_dir.is_dir():
        return ValidationResult(False, f"run directory not found: {run_dir}")
    records = sorted(run_dir.glob("*.jsonl"))
    if not records:
        return ValidationResult(False, "no stage records found")
    return ValidationResult(True, f"{len(records)} record files found")
