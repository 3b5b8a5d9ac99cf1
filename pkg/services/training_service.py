"""
Training Service
Loss assembly, one optimization step, and the stage loop with its
convergence stop. Records are handed to a callback; this module never
touches the filesystem.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from components.speech_model import SpeechModel
from config.settings import GateConfig, TrainingConfig
from core.functional import masked_mse
from core.optim import ParamGroup, build_optimizer
from core.tensor import Tensor, grad, no_grad
from services.corpus_service import Batch, Utterance, eval_batches, sample_batch
from services.gate_service import GateSample, expected_l0, gate_polarization, mask_l1
from services.prune_plan import PrunePlan, apply_masks
from utils.errors import DataError, NumericError, SpecError

RecordSink = Callable[[Dict[str, Any]], None]

GATE_MODES = ("sampled", "ones", "binary", "none")
PARAMETER_SETS = ("weights", "gates", "speaker")
SPEAKER_TABLE = "embed.speaker"


# ============================================================================
# Data Models
# ============================================================================

@dataclass
class LossBreakdown:
    """
    Terms of L_total = L_TTS + multiplier * L_reg / lambda

    Scalars are float64 copies of the recorded terms, so the identity holds
    exactly on the logged values. `loss` is the differentiable total.
    """
    l_tts: float
    l_reg: float
    lambda_: float
    l_total: float
    density: float
    reg_multiplier: float = 1.0
    loss: Optional[Tensor] = field(default=None, repr=False, compare=False)

    @classmethod
    def from_terms(
        cls,
        l_tts: float,
        l_reg: float,
        lambda_: float,
        reg_multiplier: float = 1.0,
        loss: Optional[Tensor] = None
    ) -> "LossBreakdown":
        l_tts, l_reg, lambda_ = float(l_tts), float(l_reg), float(lambda_)
        return cls(
            l_tts=l_tts,
            l_reg=l_reg,
            lambda_=lambda_,
            l_total=l_tts + reg_multiplier * l_reg / lambda_,
            density=l_reg / lambda_,
            reg_multiplier=float(reg_multiplier),
            loss=loss,
        )

    def to_record(self) -> Dict[str, float]:
        return {
            "l_tts": self.l_tts,
            "l_reg": self.l_reg,
            "lambda": self.lambda_,
            "l_total": self.l_total,
            "density": self.density,
            "reg_multiplier": self.reg_multiplier,
        }


@dataclass(frozen=True)
class StageSpec:
    """
    One optimization stage

    trainable names parameter sets: "weights" (every model tensor, speaker
    table included), "speaker" (only the clone speaker's row) and "gates".
    gate_mode decides the masks the forward pass sees: freshly sampled, frozen
    open, frozen binarized, or no masking at all.
    """
    label: str
    data: str = "task"
    trainable: FrozenSet[str] = frozenset({"weights"})
    reg: bool = False
    gate_mode: str = "none"
    min_steps: int = 500
    max_steps: int = 2000
    early_stop: bool = True

    def validate(self) -> None:
        unknown = set(self.trainable) - set(PARAMETER_SETS)
        if unknown or not self.trainable:
            raise SpecError(f"stage {self.label}: invalid trainable sets {sorted(self.trainable)}")
        if self.gate_mode not in GATE_MODES:
            raise SpecError(f"stage {self.label}: unknown gate mode {self.gate_mode!r}")
        if ("gates" in self.trainable or self.reg) and self.gate_mode != "sampled":
            raise SpecError(f"stage {self.label}: training gates or regularizing needs sampled gates")
        if self.data not in ("task", "pretrain"):
            raise SpecError(f"stage {self.label}: unknown data source {self.data!r}")


@dataclass
class TrainState:
    """Everything a step reads and updates"""
    model: SpeechModel
    plan: PrunePlan
    training: TrainingConfig
    gates: GateConfig
    seed: int
    stage: StageSpec
    speaker_id: Optional[int] = None
    step: int = 0
    optimizer: Any = None
    params: Dict[str, Tensor] = field(default_factory=dict)
    frozen_samples: Optional[Dict[str, GateSample]] = None


@dataclass
class StageResult:
    """Outcome of run_stage"""
    label: str
    steps: int
    converged: bool
    breakdown: Optional[LossBreakdown]
    eval_loss: float
    eval_history: List[Tuple[int, float]] = field(default_factory=list)


# ============================================================================
# Loss
# ============================================================================

def tts_loss(model: SpeechModel, batch: Batch, view=None, aux_weight: float = 0.1) -> Tensor:
    """MSE(mel_before) + MSE(mel_after) + aux_weight * MSE(aux) over valid frames"""
    out = model.forward_batch(batch.tokens, batch.speakers, batch.mask, view)
    return (
        masked_mse(out.mel_before, batch.mel, batch.mask)
        + masked_mse(out.mel_after, batch.mel, batch.mask)
        + masked_mse(out.aux, batch.aux, batch.mask) * aux_weight
    )


def total_loss(
    model: SpeechModel,
    plan: PrunePlan,
    batch: Batch,
    reg_enabled: bool,
    samples: Optional[Dict[str, GateSample]] = None,
    penalty: str = "sampled",
    aux_weight: float = 0.1,
    reg_multiplier: float = 1.0
) -> LossBreakdown:
    """
    Assemble L_total for one batch

    Args:
        model: Speech model
        plan: Plan built for the model's config
        batch: Training batch
        reg_enabled: Add the density term
        samples: Gate samples for the masked forward; None runs the plain
            model and regularizes gates frozen open
        penalty: "sampled" (L1 of the sampled masks) or "expected" (closed-form L0)
        aux_weight: Weight of the auxiliary-feature error
        reg_multiplier: Global multiplier on the 1/lambda term

    Returns:
        LossBreakdown whose `loss` is differentiable
    """
    if batch.size == 0:
        raise DataError("total_loss received an empty batch")
    view = None if samples is None else apply_masks(model, plan, samples)
    l_tts = tts_loss(model, batch, view, aux_weight)
    if not reg_enabled:
        return LossBreakdown.from_terms(l_tts.item(), 0.0, plan.lambda_, reg_multiplier, l_tts)
    if penalty == "expected":
        l_reg = expected_l0(plan)
    else:
        l_reg = mask_l1(plan, samples if samples is not None else plan.ones_samples())
    loss = l_tts + l_reg * (reg_multiplier / plan.lambda_)
    return LossBreakdown.from_terms(l_tts.item(), l_reg.item(), plan.lambda_, reg_multiplier, loss)


# ============================================================================
# Steps and stages
# ============================================================================

def stage_samples(state: TrainState) -> Optional[Dict[str, GateSample]]:
    """Masks the current step's forward pass sees"""
    mode = state.stage.gate_mode
    if mode == "sampled":
        return state.plan.sample(state.seed, state.step)
    if mode == "binary":
        if state.frozen_samples is None:
            state.frozen_samples = state.plan.binary_samples()
        return state.frozen_samples
    return None


def eval_samples(state: TrainState) -> Optional[Dict[str, GateSample]]:
    """Deterministic masks for evaluation: the binarized sub-network whenever gates are in play"""
    if state.stage.gate_mode == "sampled":
        return state.plan.binary_samples(warn=False)
    if state.stage.gate_mode == "binary":
        return stage_samples(state)
    return None


def begin_stage(state: TrainState, stage: StageSpec) -> TrainState:
    """Switch a state to a new stage: fresh optimizer over the stage's parameter sets"""
    stage.validate()
    state.stage = stage
    state.frozen_samples = None
    training = state.training
    groups = []
    params: Dict[str, Tensor] = {}
    if "weights" in stage.trainable:
        weights = state.model.parameters()
        groups.append(ParamGroup("weights", weights, training.lr_weights))
        params.update(weights)
    elif "speaker" in stage.trainable:
        speaker = {SPEAKER_TABLE: state.model.tensors[SPEAKER_TABLE]}
        groups.append(ParamGroup("speaker", speaker, training.lr_weights))
        params.update(speaker)
    if "gates" in stage.trainable:
        gates = state.plan.gate_parameters()
        groups.append(ParamGroup("gates", gates, training.lr_gates))
        params.update(gates)
    state.params = params
    state.optimizer = build_optimizer(training.optimizer, groups)
    logger.debug(f"Stage {stage.label}: training {sorted(stage.trainable)} ({len(params)} tensors)")
    return state


def train_step(state: TrainState, batch: Batch) -> Tuple[TrainState, LossBreakdown]:
    """
    One gradient step on the stage's trainable sets

    Args:
        state: Training state (updated in place)
        batch: Training batch

    Returns:
        (state, breakdown of the loss before the update)

    Raises:
        NumericError: if the loss is not finite
    """
    stage = state.stage
    breakdown = total_loss(
        state.model, state.plan, batch, stage.reg,
        samples=stage_samples(state),
        penalty=state.gates.penalty,
        aux_weight=state.training.aux_weight,
        reg_multiplier=state.training.reg_multiplier,
    )
    if not np.isfinite(breakdown.l_total):
        raise NumericError(
            f"step {state.step}: non-finite loss (l_tts={breakdown.l_tts}, l_reg={breakdown.l_reg})"
        )
    names = list(state.params)
    grads = dict(zip(names, grad(breakdown.loss, [state.params[n] for n in names], allow_unused=True)))
    if "weights" not in stage.trainable and SPEAKER_TABLE in grads:
        rows = np.arange(grads[SPEAKER_TABLE].shape[0]) != state.speaker_id
        speaker_grad = grads[SPEAKER_TABLE].copy()
        speaker_grad[rows] = 0.0
        grads[SPEAKER_TABLE] = speaker_grad
    state.optimizer.step(grads)
    state.step += 1
    return state, breakdown


def evaluate(
    model: SpeechModel,
    items: Sequence[Utterance],
    batch_size: int,
    plan: Optional[PrunePlan] = None,
    samples: Optional[Dict[str, GateSample]] = None,
    speaker: Optional[int] = None,
    aux_weight: float = 0.1
) -> float:
    """Item-weighted mean L_TTS over items, without recording"""
    if not items:
        raise DataError("cannot evaluate on an empty item list")
    view = None if samples is None else apply_masks(model, plan, samples)
    total = 0.0
    with no_grad():
        for batch in eval_batches(items, batch_size, speaker):
            total += tts_loss(model, batch, view, aux_weight).item() * batch.size
    return total / len(items)


def _improvement_stalled(history: List[Tuple[int, float]], step: int, patience: int, min_improvement: float) -> bool:
    earlier = [loss for at, loss in history if at <= step - patience]
    if not earlier:
        return False
    reference = earlier[-1]
    return reference - history[-1][1] < min_improvement * abs(reference)


def stage_objective(state: TrainState, eval_items: Sequence[Utterance], eval_speaker: Optional[int] = None) -> float:
    """
    Eval objective the convergence check follows

    Eval L_TTS of the binarized sub-network; regularized stages add
    reg_multiplier * E[L0] / lambda with the closed-form expected L0.
    """
    training = state.training
    loss = evaluate(
        state.model, eval_items, training.batch_size, state.plan,
        eval_samples(state), eval_speaker, training.aux_weight
    )
    if state.stage.reg:
        with no_grad():
            loss += training.reg_multiplier * expected_l0(state.plan).item() / state.plan.lambda_
    return loss


def gates_undecided(state: TrainState) -> bool:
    """True while a gate-training stage still has more than polarization_warn of its gates mid-range"""
    if "gates" not in state.stage.trainable:
        return False
    polarization = stage_polarization(state.plan)
    return polarization is not None and polarization > state.training.polarization_warn


def run_stage(
    state: TrainState,
    stage: StageSpec,
    train_items: Sequence[Utterance],
    eval_items: Sequence[Utterance],
    train_speaker: Optional[int] = None,
    eval_speaker: Optional[int] = None,
    on_record: Optional[RecordSink] = None,
    record_fields: Optional[Dict[str, Any]] = None
) -> StageResult:
    """
    Optimize one stage until convergence or its step budget

    After min_steps, every eval_every steps the eval objective is checked; the
    stage stops once it improved by less than min_improvement over the last
    patience steps. A stage training gates also waits for them to polarize.

    Args:
        state: Training state
        stage: Stage to run
        train_items: Items batches are drawn from
        eval_items: Held-out items for the convergence check
        train_speaker: Speaker id overriding the train items' own
        eval_speaker: Speaker id overriding the eval items' own
        on_record: Receives step records
        record_fields: Extra fields copied into every record

    Returns:
        StageResult
    """
    begin_stage(state, stage)
    training = state.training
    extra = dict(record_fields or {})
    history: List[Tuple[int, float]] = []
    breakdown: Optional[LossBreakdown] = None
    converged = False
    steps = 0

    for local in range(1, stage.max_steps + 1):
        batch = sample_batch(train_items, training.batch_size, state.seed, state.step, train_speaker)
        state, breakdown = train_step(state, batch)
        steps = local
        if on_record and (local == 1 or local % training.log_every == 0):
            on_record({"type": "step", **extra, "stage": stage.label, "step": state.step, **breakdown.to_record()})
        if stage.early_stop and local % training.eval_every == 0:
            loss = stage_objective(state, eval_items, eval_speaker)
            history.append((local, loss))
            logger.debug(f"[{stage.label}] step {local}: eval objective {loss:.5f}")
            if local >= stage.min_steps and not gates_undecided(state) and _improvement_stalled(
                history, local, training.patience, training.min_improvement
            ):
                converged = True
                break

    if stage.early_stop and not converged and stage.max_steps > 0:
        logger.warning(f"Stage {stage.label} hit its step budget ({stage.max_steps}) before converging")
    eval_loss = evaluate(
        state.model, eval_items, training.batch_size, state.plan,
        eval_samples(state), eval_speaker, training.aux_weight
    )
    logger.info(f"Stage {stage.label} finished after {steps} steps: eval loss {eval_loss:.5f}")
    return StageResult(stage.label, steps, converged, breakdown, eval_loss, history)


def stage_polarization(plan: PrunePlan) -> Optional[float]:
    """Polarization over enabled gates; None when the plan has none"""
    gates = [dim.gate for dim in plan.enabled_dims()]
    return gate_polarization(gates) if gates else None


def pretrain(
    model: SpeechModel,
    plan: PrunePlan,
    train_items: Sequence[Utterance],
    eval_items: Sequence[Utterance],
    training: TrainingConfig,
    gates: GateConfig,
    seed: int,
    steps: Optional[int] = None,
    on_record: Optional[RecordSink] = None
) -> Tuple[StageResult, float]:
    """
    Train every weight on the multi-speaker corpus for a fixed budget

    Returns:
        (stage result, eval loss before training)
    """
    budget = training.pretrain_steps if steps is None else steps
    stage = StageSpec("pretrain", data="pretrain", trainable=frozenset({"weights"}),
                      min_steps=budget, max_steps=budget, early_stop=False)
    state = TrainState(model, plan, training, gates, seed, stage)
    initial = evaluate(model, eval_items, training.batch_size, aux_weight=training.aux_weight)
    logger.info(f"Pretraining for {budget} steps (initial eval loss {initial:.5f})")
    result = run_stage(state, stage, train_items, eval_items, on_record=on_record,
                       record_fields={"pipeline": "pretrain", "seed": seed})
    return result, initial
