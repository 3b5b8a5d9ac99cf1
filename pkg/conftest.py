"""
Shared pytest fixtures: tiny configurations, the 64-bit audit mode and
temporary run directories
"""

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config.settings import CorpusConfig, GateConfig, ModelConfig, RunConfig, TrainingConfig  # noqa: E402
from core.tensor import audit_precision  # noqa: E402
from utils.logger import configure_logging  # noqa: E402


def make_tiny_model_config(**overrides) -> ModelConfig:
    """A model small enough for exhaustive checks"""
    values = dict(
        vocab_size=12,
        d=8,
        n_enc_layers=1,
        n_dec_layers=1,
        n_heads=2,
        d_k=8,
        d_f=12,
        adaptor_hidden=6,
        postnet_hidden=6,
        n_mel=4,
        n_speakers=3,
        adaptor_layers=2,
        postnet_layers=2,
        kernel_size=3,
        max_len=16,
    )
    values.update(overrides)
    return ModelConfig(**values)


def make_tiny_training_config(**overrides) -> TrainingConfig:
    values = dict(
        batch_size=4,
        pretrain_steps=20,
        stage_min_steps=5,
        stage_max_steps=10,
        eval_every=5,
        patience=10,
        log_every=5,
    )
    values.update(overrides)
    return TrainingConfig(**values)


def make_tiny_corpus_config(**overrides) -> CorpusConfig:
    values = dict(
        samples_per_speaker=6,
        eval_per_speaker=2,
        min_len=4,
        max_len=8,
        feature_dim=8,
        n_support=4,
        n_eval=4,
    )
    values.update(overrides)
    return CorpusConfig(**values)


def make_tiny_run_config(seed: int = 0) -> RunConfig:
    return RunConfig(
        seed=seed,
        model=make_tiny_model_config(),
        gates=GateConfig(),
        training=make_tiny_training_config(),
        corpus=make_tiny_corpus_config(),
    )


@pytest.fixture(autouse=True)
def quiet_logs():
    configure_logging("WARNING")
    yield


@pytest.fixture
def tiny_config() -> ModelConfig:
    return make_tiny_model_config()


@pytest.fixture
def tiny_training() -> TrainingConfig:
    return make_tiny_training_config()


@pytest.fixture
def tiny_corpus_config() -> CorpusConfig:
    return make_tiny_corpus_config()


@pytest.fixture
def tiny_run_config() -> RunConfig:
    return make_tiny_run_config()


@pytest.fixture
def audit():
    """Run the test body with 64-bit default tensors"""
    with audit_precision():
        yield


@pytest.fixture
def run_dir(tmp_path):
    path = tmp_path / "run"
    path.mkdir()
    return path
