"""
End-to-end acceptance runs at the default desk scale

These are slow (minutes) and statistical; run them with `pytest -m slow`.
"""

from dataclasses import replace

import numpy as np
import pytest

from components.speech_model import SpeechModel
from config.settings import GateConfig, RunConfig
from services.compaction_service import compact
from services.corpus_service import make_clone_task, make_synthetic_corpus
from services.pipeline_graph import pipeline_spec, run_pipeline
from services.prune_plan import build_plan
from services.training_service import pretrain

from conftest import make_tiny_corpus_config, make_tiny_model_config, make_tiny_training_config

pytestmark = pytest.mark.slow

SEEDS = (1, 2, 3)


@pytest.fixture(scope="module")
def desk():
    """Default-config base model pretrained on the synthetic corpus"""
    config = RunConfig()
    corpus = make_synthetic_corpus(
        config.seed, config.model.n_speakers, config.corpus.samples_per_speaker,
        config.model.vocab_size, config.model.n_mel, config.corpus
    )
    model = SpeechModel.initialize(config.model, config.seed)
    plan = build_plan(config.model, config.gates)
    pretrain(model, plan, corpus.items, corpus.eval_items, config.training, config.gates, config.seed)
    return config, corpus, model


def clone(desk, kind, seed, reg_multiplier=None):
    config, corpus, model = desk
    training = config.training
    if reg_multiplier is not None:
        training = replace(training, reg_multiplier=reg_multiplier)
    task = make_clone_task(config.seed, seed, config.model.vocab_size, config.model.n_mel, config.corpus)
    return run_pipeline(pipeline_spec(kind, training), model, task, seed, training, config.gates, corpus)


def test_masked_and_compacted_models_agree():
    rng = np.random.default_rng(0)
    worst = 0.0
    for model_seed in range(20):
        config = make_tiny_model_config(n_enc_layers=2, n_dec_layers=2)
        model = SpeechModel.initialize(config, seed=model_seed)
        for _ in range(20):
            plan = build_plan(config)
            for dim in plan.enabled_dims():
                dim.gate.log_alpha.data[...] = rng.choice([-1.0, 1.0], size=dim.extent)
            _, _, report = compact(model, plan, n_probe=10, seed=int(rng.integers(1 << 30)))
            worst = max(worst, report.max_residual)
    assert worst < 1e-5


def test_loss_identity_holds_on_every_step():
    config = make_tiny_model_config()
    training = make_tiny_training_config(stage_min_steps=200, stage_max_steps=200, log_every=1)
    corpus = make_synthetic_corpus(0, 3, 6, config.vocab_size, config.n_mel, make_tiny_corpus_config())
    task = make_clone_task(0, 1, config.vocab_size, config.n_mel, make_tiny_corpus_config())
    records = []
    run_pipeline(pipeline_spec("joint", training), SpeechModel.initialize(config, 0), task, 0,
                 training, GateConfig(), corpus, on_record=records.append)
    steps = [r for r in records if r["type"] == "step"]
    assert len(steps) == 200
    for record in steps:
        expected = record["l_tts"] + record["reg_multiplier"] * record["l_reg"] / record["lambda"]
        assert abs(record["l_total"] - expected) <= 1e-9


def test_joint_pipeline_prunes_half_the_model(desk):
    finals, polarizations = [], []
    for seed in SEEDS:
        joint = clone(desk, "joint", seed).reports[-1]
        baseline = clone(desk, "ft_then_prune", seed).reports[0]
        finals.append((joint.sparsity_pct, joint.eval_loss / baseline.eval_loss))
        polarizations.append(joint.polarization)
    assert np.median([s for s, _ in finals]) >= 50.0
    assert np.median([r for _, r in finals]) <= 2.0
    assert max(polarizations) <= desk[0].training.polarization_fail


def test_stronger_regularization_keeps_less(desk):
    densities = []
    for multiplier in (0.3, 1.0, 3.0):
        densities.append(np.median([clone(desk, "joint", seed, multiplier).reports[-1].density for seed in SEEDS]))
    assert densities[0] >= densities[1] >= densities[2]


def test_pipeline_shapes(desk):
    joint, pretrain_pruned = [], []
    for seed in SEEDS:
        first, second = clone(desk, "ft_then_prune", seed).reports
        assert first.sparsity_pct == 0.0
        first, second = clone(desk, "prune_then_ft", seed).reports
        assert first.sparsity_pct == second.sparsity_pct
        assert second.eval_loss < first.eval_loss
        joint.append(clone(desk, "joint", seed).reports[-1].sparsity_pct)
        pretrain_pruned.append(clone(desk, "prune_pretrain_then_ft", seed).reports[-1].sparsity_pct)
    assert np.median(pretrain_pruned) < np.median(joint)
