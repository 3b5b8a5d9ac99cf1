"""
Tests for the synthetic corpus, loss assembly, optimization steps and the
prune / fine-tune pipelines
"""

import numpy as np
import pytest

from components.layout import ffn_dim, heads_dim
from components.speech_model import SpeechModel
from config.settings import GateConfig
from services.corpus_service import (
    Batch,
    SyntheticSpeaker,
    collate,
    corpus_summary,
    eval_batches,
    make_clone_task,
    make_synthetic_corpus,
    sample_batch,
)
from core.tensor import grad, no_grad
from services.gate_service import expected_l0
from services.pipeline_graph import PipelineSpec, pipeline_spec, run_pipeline
from services.prune_plan import build_plan
from services.training_service import (
    LossBreakdown,
    StageSpec,
    TrainState,
    _improvement_stalled,
    begin_stage,
    evaluate,
    gates_undecided,
    pretrain,
    run_stage,
    stage_objective,
    total_loss,
    train_step,
)
from utils.errors import ConfigError, DataError, NumericError, SpecError, UsageError

from conftest import make_tiny_training_config


@pytest.fixture
def corpus(tiny_config, tiny_corpus_config):
    return make_synthetic_corpus(0, 2, 3, tiny_config.vocab_size, tiny_config.n_mel, tiny_corpus_config)


@pytest.fixture
def task(tiny_config, tiny_corpus_config):
    return make_clone_task(0, 1, tiny_config.vocab_size, tiny_config.n_mel, tiny_corpus_config)


def make_state(config, stage, training=None, gates=None, seed=0, speaker_id=None):
    model = SpeechModel.initialize(config, seed=seed)
    gates = gates or GateConfig()
    state = TrainState(model, build_plan(config, gates), training or make_tiny_training_config(), gates, seed,
                       stage, speaker_id=speaker_id)
    return begin_stage(state, stage)


# ============================================================================
# corpus
# ============================================================================

def test_corpus_counts(corpus):
    assert len(corpus) == 6
    assert len(corpus.eval_items) == 2 * 2
    assert sorted({item.speaker for item in corpus.items}) == [0, 1]
    assert corpus_summary(corpus)["items"] == 6


def test_corpus_is_deterministic(tiny_config, tiny_corpus_config, corpus):
    again = make_synthetic_corpus(0, 2, 3, tiny_config.vocab_size, tiny_config.n_mel, tiny_corpus_config)
    for a, b in zip(corpus.items, again.items):
        np.testing.assert_array_equal(a.tokens, b.tokens)
        np.testing.assert_array_equal(a.mel, b.mel)
        np.testing.assert_array_equal(a.aux, b.aux)


def test_corpus_item_lengths_and_shapes(corpus, tiny_config, tiny_corpus_config):
    for item in corpus.items:
        assert tiny_corpus_config.min_len <= len(item) <= tiny_corpus_config.max_len
        assert item.mel.shape == (len(item), tiny_config.n_mel)
        assert item.aux.shape == (len(item),)


def test_speakers_render_differently(tiny_config):
    tokens = np.array([1, 2, 3, 4, 5])
    first = SyntheticSpeaker(0, 0, tiny_config.vocab_size, tiny_config.n_mel, 8).render(tokens)
    second = SyntheticSpeaker(0, 1, tiny_config.vocab_size, tiny_config.n_mel, 8).render(tokens)
    assert np.max(np.abs(first[0] - second[0])) > 1e-3


def test_corpus_needs_two_speakers(tiny_config):
    with pytest.raises(ConfigError):
        make_synthetic_corpus(0, 1, 3, tiny_config.vocab_size, tiny_config.n_mel)


def test_clone_task_sets_are_disjoint(task, tiny_corpus_config):
    assert len(task.support) == tiny_corpus_config.n_support
    assert len(task.eval) == tiny_corpus_config.n_eval
    support = {item.tokens.tobytes() for item in task.support}
    assert not support & {item.tokens.tobytes() for item in task.eval}


def test_clone_tasks_differ_by_seed(tiny_config, tiny_corpus_config, task):
    other = make_clone_task(0, 2, tiny_config.vocab_size, tiny_config.n_mel, tiny_corpus_config)
    assert other.speaker_seed != task.speaker_seed


def test_collate_pads_and_masks(corpus):
    items = corpus.items[:3]
    batch = collate(items, speaker=2)
    length = max(len(item) for item in items)
    assert batch.tokens.shape == (3, length)
    np.testing.assert_array_equal(batch.mask.sum(axis=1), [len(item) for item in items])
    np.testing.assert_array_equal(batch.speakers, [2, 2, 2])
    assert not np.any(batch.mel[~batch.mask])
    with pytest.raises(DataError):
        collate([])


def test_batches_are_reproducible(corpus):
    a = sample_batch(corpus.items, 4, seed=3, step=9)
    b = sample_batch(corpus.items, 4, seed=3, step=9)
    np.testing.assert_array_equal(a.tokens, b.tokens)
    assert a.size == 4
    assert sum(batch.size for batch in eval_batches(corpus.items, 4)) == len(corpus.items)


# ============================================================================
# loss
# ============================================================================

def test_loss_identity_arithmetic():
    breakdown = LossBreakdown.from_terms(1.0, 250.0, 1000.0)
    assert breakdown.density == 0.25
    assert breakdown.l_total == 1.25
    assert LossBreakdown.from_terms(1.0, 250.0, 1000.0, reg_multiplier=2.0).l_total == 1.5


def test_loss_without_regularizer_is_tts_loss(tiny_config, corpus):
    model = SpeechModel.initialize(tiny_config, seed=0)
    plan = build_plan(tiny_config)
    breakdown = total_loss(model, plan, collate(corpus.items), reg_enabled=False)
    assert breakdown.l_reg == 0.0
    assert breakdown.l_total == breakdown.l_tts
    assert breakdown.lambda_ == plan.lambda_


def test_open_gates_give_maskable_density(tiny_config, corpus):
    model = SpeechModel.initialize(tiny_config, seed=0)
    plan = build_plan(tiny_config)
    breakdown = total_loss(model, plan, collate(corpus.items), reg_enabled=True)
    assert breakdown.density == pytest.approx(plan.maskable_count() / plan.lambda_, rel=1e-6)
    assert breakdown.l_total == pytest.approx(breakdown.l_tts + breakdown.density, rel=1e-6)


def test_sampled_density_below_one(tiny_config, corpus):
    model = SpeechModel.initialize(tiny_config, seed=0)
    plan = build_plan(tiny_config)
    breakdown = total_loss(model, plan, collate(corpus.items), True, samples=plan.sample(0, 0))
    assert 0 < breakdown.density < plan.maskable_count() / plan.lambda_


def test_empty_batch_is_rejected(tiny_config):
    model = SpeechModel.initialize(tiny_config, seed=0)
    empty = Batch(np.zeros((0, 0), dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros((0, 0), dtype=bool),
                  np.zeros((0, 0, tiny_config.n_mel)), np.zeros((0, 0)))
    with pytest.raises(DataError):
        total_loss(model, build_plan(tiny_config), empty, reg_enabled=True)
    with pytest.raises(DataError):
        evaluate(model, [], 4)


# ============================================================================
# steps
# ============================================================================

def test_zero_learning_rate_leaves_weights(tiny_config, corpus):
    stage = StageSpec("s", trainable=frozenset({"weights", "gates"}), reg=True, gate_mode="sampled")
    state = make_state(tiny_config, stage, make_tiny_training_config(lr_weights=0.0, lr_gates=0.0))
    before = {name: t.data.copy() for name, t in state.params.items()}
    train_step(state, collate(corpus.items))
    for name, tensor in state.params.items():
        np.testing.assert_array_equal(tensor.data, before[name])
    assert state.step == 1


def test_steps_are_deterministic(tiny_config, corpus):
    stage = StageSpec("s", trainable=frozenset({"weights", "gates"}), reg=True, gate_mode="sampled")
    runs = []
    for _ in range(2):
        state = make_state(tiny_config, stage, seed=4)
        losses = []
        for step in range(3):
            state, breakdown = train_step(state, sample_batch(corpus.items, 4, 4, step))
            losses.append(breakdown.l_total)
        runs.append((losses, {name: t.data.copy() for name, t in state.params.items()}))
    assert runs[0][0] == runs[1][0]
    for name, value in runs[0][1].items():
        np.testing.assert_array_equal(value, runs[1][1][name])


def test_speaker_stage_only_moves_the_clone_row(tiny_config, task):
    stage = StageSpec("s", trainable=frozenset({"speaker"}), gate_mode="none")
    state = make_state(tiny_config, stage, speaker_id=2)
    table = state.model.tensors["embed.speaker"].data.copy()
    out_bias = state.model.tensors["out.bias"].data.copy()
    train_step(state, collate(task.support, speaker=2))
    moved = state.model.tensors["embed.speaker"].data
    np.testing.assert_array_equal(moved[:2], table[:2])
    assert np.any(moved[2] != table[2])
    np.testing.assert_array_equal(state.model.tensors["out.bias"].data, out_bias)


def test_gate_stage_leaves_weights(tiny_config, corpus):
    stage = StageSpec("s", trainable=frozenset({"gates"}), reg=True, gate_mode="sampled")
    state = make_state(tiny_config, stage)
    weights = {name: t.data.copy() for name, t in state.model.parameters().items()}
    gates = {name: t.data.copy() for name, t in state.plan.gate_parameters().items()}
    train_step(state, collate(corpus.items))
    for name, tensor in state.model.parameters().items():
        np.testing.assert_array_equal(tensor.data, weights[name])
    assert any(np.any(t.data != gates[name]) for name, t in state.plan.gate_parameters().items())


def test_non_finite_loss_stops_the_step(tiny_config, corpus):
    stage = StageSpec("s", gate_mode="none")
    state = make_state(tiny_config, stage)
    state.model.tensors["out.bias"].data[0] = np.nan
    with pytest.raises(NumericError):
        train_step(state, collate(corpus.items))


def test_stage_validation():
    with pytest.raises(SpecError):
        StageSpec("s", trainable=frozenset({"bias"})).validate()
    with pytest.raises(SpecError):
        StageSpec("s", trainable=frozenset({"gates"}), gate_mode="none").validate()
    with pytest.raises(SpecError):
        StageSpec("s", reg=True, gate_mode="ones").validate()
    with pytest.raises(SpecError):
        StageSpec("s", data="elsewhere").validate()


def test_improvement_window():
    assert not _improvement_stalled([(5, 1.0)], 5, 5, 0.01)
    assert _improvement_stalled([(5, 1.0), (10, 0.999)], 10, 5, 0.01)
    assert not _improvement_stalled([(5, 1.0), (10, 0.5)], 10, 5, 0.01)


def test_pruned_structure_gets_no_gradient_while_fine_tuning(tiny_config, corpus):
    stage = StageSpec("2nd", trainable=frozenset({"weights"}), gate_mode="binary")
    state = make_state(tiny_config, stage)
    closed = [1, 4, 7]
    state.plan.dim(ffn_dim("enc.0")).gate.log_alpha.data[closed] = -3.0
    state.plan.dim(heads_dim("enc.0")).gate.log_alpha.data[...] = [-3.0, 3.0]
    batch = collate(corpus.items)

    breakdown = total_loss(state.model, state.plan, batch, False, samples=state.plan.binary_samples())
    w_u, w_q = state.model.tensors["enc.0.ffn.w_u"], state.model.tensors["enc.0.attn.head0.w_q"]
    g_u, g_q = grad(breakdown.loss, [w_u, w_q], allow_unused=True)
    np.testing.assert_array_equal(g_u[:, closed], 0.0)
    assert np.any(g_u[:, [0, 2]] != 0.0)
    np.testing.assert_array_equal(g_q, 0.0)

    before_u, before_q = w_u.data.copy(), w_q.data.copy()
    for step in range(3):
        train_step(state, sample_batch(corpus.items, 4, 0, step))
    np.testing.assert_array_equal(w_u.data[:, closed], before_u[:, closed])
    np.testing.assert_array_equal(w_q.data, before_q)
    assert np.any(w_u.data[:, [0, 2]] != before_u[:, [0, 2]])


def test_regularized_objective_adds_expected_density(tiny_config, corpus):
    plain = StageSpec("ft", trainable=frozenset({"weights"}), gate_mode="sampled")
    pruning = StageSpec("prune", trainable=frozenset({"gates"}), reg=True, gate_mode="sampled")
    training = make_tiny_training_config(reg_multiplier=2.0)
    state = make_state(tiny_config, plain, training)
    base = stage_objective(state, corpus.eval_items)
    begin_stage(state, pruning)
    with no_grad():
        density = expected_l0(state.plan).item() / state.plan.lambda_
    assert density > 0
    assert stage_objective(state, corpus.eval_items) == pytest.approx(base + 2.0 * density, rel=1e-9)


def test_gate_stage_waits_for_polarized_gates(tiny_config, corpus):
    training = make_tiny_training_config(
        lr_gates=0.0, stage_min_steps=5, stage_max_steps=20, eval_every=5, patience=5, min_improvement=10.0
    )
    stage = StageSpec("prune", trainable=frozenset({"gates"}), reg=True, gate_mode="sampled",
                      min_steps=5, max_steps=20)
    state = make_state(tiny_config, stage, training)
    assert gates_undecided(state)
    undecided = run_stage(state, stage, corpus.items, corpus.eval_items)
    assert not undecided.converged and undecided.steps == 20

    state = make_state(tiny_config, stage, training)
    for dim in state.plan.enabled_dims():
        dim.gate.log_alpha.data[...] = 6.0
    assert not gates_undecided(state)
    decided = run_stage(state, stage, corpus.items, corpus.eval_items)
    assert decided.converged and decided.steps == 10


def test_pretraining_reduces_eval_loss(tiny_config, tiny_corpus_config):
    corpus = make_synthetic_corpus(0, 3, 6, tiny_config.vocab_size, tiny_config.n_mel, tiny_corpus_config)
    model = SpeechModel.initialize(tiny_config, seed=0)
    records = []
    result, initial = pretrain(
        model, build_plan(tiny_config), corpus.items, corpus.eval_items,
        make_tiny_training_config(lr_weights=1e-2), GateConfig(), seed=0, steps=60, on_record=records.append
    )
    assert result.steps == 60
    assert result.eval_loss < initial
    assert records[0]["stage"] == "pretrain" and records[0]["step"] == 1


# ============================================================================
# pipelines
# ============================================================================

def test_pipeline_stage_lists(tiny_training):
    assert [s.label for s in pipeline_spec("joint", tiny_training).stages] == ["joint"]
    for kind in ("ft_then_prune", "prune_then_ft", "prune_pretrain_then_ft"):
        assert [s.label for s in pipeline_spec(kind, tiny_training).stages] == ["1st", "2nd"]
    assert pipeline_spec("prune_then_ft", tiny_training).stages[1].gate_mode == "binary"
    assert pipeline_spec("prune_pretrain_then_ft", tiny_training).stages[0].data == "pretrain"
    assert pipeline_spec("joint", tiny_training, steps=3).stages[0].max_steps == 3


def test_prune_stage_trains_weights_when_configured():
    training = make_tiny_training_config(prune_trains_weights=True)
    assert "weights" in pipeline_spec("ft_then_prune", training).stages[1].trainable
    assert "weights" not in pipeline_spec("ft_then_prune", make_tiny_training_config()).stages[1].trainable


def test_unknown_pipeline(tiny_training):
    with pytest.raises(UsageError):
        pipeline_spec("prune_twice", tiny_training)


def test_binary_stage_needs_earlier_pruning(tiny_training):
    frozen = StageSpec("2nd", trainable=frozenset({"weights"}), gate_mode="binary")
    with pytest.raises(SpecError):
        PipelineSpec("prune_then_ft", [frozen]).validate()


def run_tiny(kind, config, task, corpus=None, training=None, records=None):
    base = SpeechModel.initialize(config, seed=0)
    training = training or make_tiny_training_config()
    return base, run_pipeline(
        pipeline_spec(kind, training), base, task, seed=0,
        training=training, gates=GateConfig(), corpus=corpus, on_record=records.append if records is not None else None
    )


def test_joint_pipeline_records(tiny_config, task):
    records = []
    base, result = run_tiny("joint", tiny_config, task, records=records)
    stages = [r for r in records if r["type"] == "stage"]
    assert len(stages) == 1 and stages[0]["stage"] == "joint"
    assert all(r["pipeline"] == "joint" for r in records)
    assert result.speaker_id == tiny_config.n_speakers
    assert base.config.n_speakers == tiny_config.n_speakers


def test_fine_tune_stage_does_not_prune(tiny_config, task):
    _, result = run_tiny("ft_then_prune", tiny_config, task)
    first, second = result.reports
    assert first.sparsity_pct == 0.0 and first.ratio == 1.0
    assert first.polarization is None
    assert second.params_before == first.params_before


def test_frozen_gates_keep_sparsity(tiny_config, task):
    _, result = run_tiny("prune_then_ft", tiny_config, task)
    first, second = result.reports
    assert first.sparsity_pct == second.sparsity_pct
    assert first.params_after == second.params_after


def test_zero_multiplier_keeps_everything(tiny_config, task):
    training = make_tiny_training_config(reg_multiplier=0.0)
    _, result = run_tiny("joint", tiny_config, task, training=training)
    assert result.reports[-1].sparsity_pct == 0.0


def test_pretrain_data_pipeline_needs_corpus(tiny_config, task, corpus):
    with pytest.raises(SpecError):
        run_tiny("prune_pretrain_then_ft", tiny_config, task)
    _, result = run_tiny("prune_pretrain_then_ft", tiny_config, task, corpus=corpus)
    assert len(result.reports) == 2


def test_pipelines_are_reproducible(tiny_config, task):
    _, first = run_tiny("prune_then_ft", tiny_config, task)
    _, second = run_tiny("prune_then_ft", tiny_config, task)
    assert [r.eval_loss for r in first.reports] == [r.eval_loss for r in second.reports]
    assert first.steps == second.steps
