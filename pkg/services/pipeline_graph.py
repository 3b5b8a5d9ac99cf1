"""
Pipeline Graph Service
The four prune / fine-tune pipelines run as a LangGraph workflow:
prepare -> run_stage (once per stage) -> finalize
"""

from dataclasses import dataclass, field
from typing import List, Optional, TypedDict

from langgraph.graph import END, StateGraph
from loguru import logger

from components.speech_model import SpeechModel
from config.settings import PIPELINE_KINDS, GateConfig, TrainingConfig
from services.compaction_service import surviving_parameters
from services.corpus_service import CloneTask, Corpus
from services.gate_service import mask_l1
from services.prune_plan import PrunePlan, build_plan
from services.report_service import StageReport
from services.training_service import (
    RecordSink,
    StageSpec,
    TrainState,
    run_stage,
    stage_polarization,
)
from utils.errors import SpecError, UsageError
from utils.helpers import compression_ratio, sparsity_percent


# ============================================================================
# Data Models
# ============================================================================

@dataclass(frozen=True)
class PipelineSpec:
    """A pipeline kind and its ordered stages"""
    kind: str
    stages: List[StageSpec] = field(default_factory=list)

    def validate(self) -> None:
        """
        Stage order rules: a frozen-binary stage needs an earlier stage that
        trained gates; every stage must be internally consistent.
        """
        if self.kind not in PIPELINE_KINDS:
            raise UsageError(f"unknown pipeline {self.kind!r}; valid kinds: {', '.join(PIPELINE_KINDS)}")
        if not self.stages:
            raise SpecError(f"pipeline {self.kind} has no stages")
        gates_trained = False
        for stage in self.stages:
            stage.validate()
            if stage.gate_mode == "binary" and not gates_trained:
                raise SpecError(f"pipeline {self.kind}: stage {stage.label} freezes gates before any pruning stage")
            gates_trained = gates_trained or "gates" in stage.trainable


def pipeline_spec(kind: str, training: TrainingConfig, steps: Optional[int] = None) -> PipelineSpec:
    """
    Stage list for a pipeline kind

    Args:
        kind: One of PIPELINE_KINDS
        training: Budgets and the prune_trains_weights switch
        steps: Optional per-stage step cap overriding the configured budgets

    Returns:
        Validated PipelineSpec
    """
    max_steps = training.stage_max_steps if steps is None else steps
    min_steps = min(training.stage_min_steps, max_steps)
    prune_sets = {"gates", "speaker"} | ({"weights"} if training.prune_trains_weights else set())

    def stage(label: str, trainable, reg: bool, gate_mode: str, data: str = "task") -> StageSpec:
        return StageSpec(label, data, frozenset(trainable), reg, gate_mode, min_steps, max_steps)

    if kind == "joint":
        stages = [stage("joint", {"weights", "gates", "speaker"}, True, "sampled")]
    elif kind == "ft_then_prune":
        stages = [
            stage("1st", {"weights", "speaker"}, False, "ones"),
            stage("2nd", prune_sets, True, "sampled"),
        ]
    elif kind == "prune_then_ft":
        stages = [
            stage("1st", prune_sets, True, "sampled"),
            stage("2nd", {"weights", "speaker"}, False, "binary"),
        ]
    elif kind == "prune_pretrain_then_ft":
        stages = [
            stage("1st", prune_sets - {"speaker"}, True, "sampled", data="pretrain"),
            stage("2nd", {"weights", "speaker"}, False, "binary"),
        ]
    else:
        raise UsageError(f"unknown pipeline {kind!r}; valid kinds: {', '.join(PIPELINE_KINDS)}")
    spec = PipelineSpec(kind, stages)
    spec.validate()
    return spec


@dataclass
class PipelineResult:
    """Final model of a pipeline run and its stage reports"""
    model: SpeechModel
    plan: PrunePlan
    speaker_id: int
    reports: List[StageReport]
    steps: int


# ============================================================================
# LangGraph State
# ============================================================================

class PipelineState(TypedDict):
    """State for the pipeline workflow"""
    # Inputs
    spec: PipelineSpec
    base_model: SpeechModel
    corpus: Optional[Corpus]
    task: CloneTask
    seed: int

    # Working state
    train_state: Optional[TrainState]
    stage_index: int
    reports: List[StageReport]

    # Output
    finished: bool


class PipelineGraphService:
    """
    Service running one pipeline over one clone task
    Each run copies the base model, so tasks never share mutable state
    """

    def __init__(
        self,
        training: TrainingConfig,
        gates: GateConfig,
        on_record: Optional[RecordSink] = None
    ):
        self.training = training
        self.gates = gates
        self.on_record = on_record
        self.workflow = self._build_workflow()

    def _build_workflow(self):
        """Build the LangGraph workflow for one pipeline run"""
        workflow = StateGraph(PipelineState)

        workflow.add_node("prepare", self._prepare_node)
        workflow.add_node("run_stage", self._run_stage_node)
        workflow.add_node("finalize", self._finalize_node)

        workflow.set_entry_point("prepare")
        workflow.add_edge("prepare", "run_stage")
        workflow.add_conditional_edges(
            "run_stage",
            self._next_after_stage,
            {"run_stage": "run_stage", "finalize": "finalize"}
        )
        workflow.add_edge("finalize", END)

        return workflow.compile()

    @staticmethod
    def _next_after_stage(state: PipelineState) -> str:
        return "run_stage" if state["stage_index"] < len(state["spec"].stages) else "finalize"

    # =========================================================================
    # Node Implementations
    # =========================================================================

    def _prepare_node(self, state: PipelineState) -> PipelineState:
        """Copy the base model, add the clone speaker and build a fresh plan"""
        spec = state["spec"]
        spec.validate()
        if any(stage.data == "pretrain" for stage in spec.stages) and state["corpus"] is None:
            raise SpecError(f"pipeline {spec.kind} needs the pretraining corpus")

        model = state["base_model"].copy()
        speaker_id = model.add_speaker(init="mean")
        plan = build_plan(model.config, self.gates)
        state["train_state"] = TrainState(
            model, plan, self.training, self.gates, state["seed"], spec.stages[0], speaker_id=speaker_id
        )
        state["stage_index"] = 0
        state["reports"] = []
        state["finished"] = False
        logger.info(
            f"Pipeline {spec.kind} (seed {state['seed']}): {len(spec.stages)} stage(s), "
            f"lambda={plan.lambda_}, clone speaker id {speaker_id}"
        )
        return state

    def _run_stage_node(self, state: PipelineState) -> PipelineState:
        """Run the current stage and append its report"""
        spec = state["spec"]
        stage = spec.stages[state["stage_index"]]
        train_state = state["train_state"]
        task = state["task"]

        if stage.data == "pretrain":
            train_items, train_speaker = state["corpus"].items, None
        else:
            train_items, train_speaker = task.support, train_state.speaker_id

        result = run_stage(
            train_state, stage, train_items, task.eval,
            train_speaker=train_speaker,
            eval_speaker=train_state.speaker_id,
            on_record=self.on_record,
            record_fields={"pipeline": spec.kind, "seed": state["seed"]},
        )
        report = self._stage_report(spec.kind, state["seed"], stage, train_state, result)
        if self.on_record:
            self.on_record(report.to_record())
        state["reports"] = state["reports"] + [report]
        state["stage_index"] = state["stage_index"] + 1
        return state

    def _finalize_node(self, state: PipelineState) -> PipelineState:
        """Log the final stage and warn on weak gate polarization"""
        final = state["reports"][-1]
        polarization = final.polarization
        if polarization is not None:
            if polarization > self.training.polarization_fail:
                logger.error(f"Gate polarization {polarization:.3f} exceeds {self.training.polarization_fail}")
            elif polarization > self.training.polarization_warn:
                logger.warning(f"Gate polarization {polarization:.3f} exceeds {self.training.polarization_warn}")
        logger.info(
            f"Pipeline {state['spec'].kind} done: sparsity {final.sparsity_pct:.2f}%, "
            f"ratio {final.ratio:.3f}, eval loss {final.eval_loss:.5f}"
        )
        state["finished"] = True
        return state

    def _stage_report(self, kind: str, seed: int, stage: StageSpec, train_state: TrainState, result) -> StageReport:
        plan = train_state.plan
        gated = stage.gate_mode in ("sampled", "binary")
        params_after = surviving_parameters(plan) if gated else plan.lambda_
        masks = plan.binary_samples(warn=False) if gated else plan.ones_samples()
        density = mask_l1(plan, masks).item() / plan.lambda_ if plan.enabled_dims() else 0.0
        breakdown = result.breakdown
        return StageReport(
            pipeline=kind,
            seed=seed,
            stage=stage.label,
            steps=result.steps,
            converged=result.converged,
            l_tts=breakdown.l_tts if breakdown else 0.0,
            l_reg=breakdown.l_reg if breakdown else 0.0,
            lambda_=float(plan.lambda_),
            l_total=breakdown.l_total if breakdown else 0.0,
            density=density,
            eval_loss=result.eval_loss,
            sparsity_pct=sparsity_percent(params_after, plan.lambda_),
            ratio=compression_ratio(plan.lambda_, params_after),
            polarization=stage_polarization(plan) if gated else None,
            params_before=plan.lambda_,
            params_after=params_after,
            maskable=plan.maskable_count(),
        )

    # =========================================================================
    # Public Methods
    # =========================================================================

    def run(
        self,
        spec: PipelineSpec,
        base_model: SpeechModel,
        task: CloneTask,
        seed: int,
        corpus: Optional[Corpus] = None
    ) -> PipelineResult:
        """
        Run every stage of a pipeline

        Args:
            spec: Pipeline to run
            base_model: Pretrained model (left untouched)
            task: Clone task
            seed: Seed for batches and gate noise
            corpus: Pretraining corpus (needed by prune_pretrain_then_ft)

        Returns:
            PipelineResult
        """
        initial_state: PipelineState = {
            "spec": spec,
            "base_model": base_model,
            "corpus": corpus,
            "task": task,
            "seed": seed,
            "train_state": None,
            "stage_index": 0,
            "reports": [],
            "finished": False,
        }
        final_state = self.workflow.invoke(initial_state)
        train_state = final_state["train_state"]
        return PipelineResult(
            model=train_state.model,
            plan=train_state.plan,
            speaker_id=train_state.speaker_id,
            reports=final_state["reports"],
            steps=train_state.step,
        )


def run_pipeline(
    spec: PipelineSpec,
    base_model: SpeechModel,
    task: CloneTask,
    seed: int,
    training: TrainingConfig,
    gates: GateConfig,
    corpus: Optional[Corpus] = None,
    on_record: Optional[RecordSink] = None
) -> PipelineResult:
    """Functional entry point: build the graph and run one pipeline"""
    return PipelineGraphService(training, gates, on_record).run(spec, base_model, task, seed, corpus)

