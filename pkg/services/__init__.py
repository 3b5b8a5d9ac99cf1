# Services module
from services.gate_service import (
    GateParam,
    GateSample,
    binarize,
    expected_l0,
    gate_polarization,
    gate_rng,
    keep_probability,
    mask_l1,
    sample_gate,
)
from services.prune_plan import MaskBinding, PrunableDim, PrunePlan, apply_masks, build_plan, compose_mask
from services.corpus_service import (
    Batch,
    CloneTask,
    Corpus,
    Utterance,
    collate,
    make_clone_task,
    make_synthetic_corpus,
)
from services.training_service import (
    LossBreakdown,
    StageSpec,
    TrainState,
    evaluate,
    pretrain,
    run_stage,
    total_loss,
    train_step,
)
from services.compaction_service import CompactionReport, compact, compact_tensors, sparsity_of
from services.checkpoint_service import Checkpoint, CheckpointService
from services.report_service import RecordWriter, ReportService, StageReport
from services.pipeline_graph import PipelineGraphService, PipelineSpec, pipeline_spec, run_pipeline

__all__ = [
    "GateParam",
    "GateSample",
    "binarize",
    "expected_l0",
    "gate_polarization",
    "gate_rng",
    "keep_probability",
    "mask_l1",
    "sample_gate",
    "MaskBinding",
    "PrunableDim",
    "PrunePlan",
    "apply_masks",
    "build_plan",
    "compose_mask",
    "Batch",
    "CloneTask",
    "Corpus",
    "Utterance",
    "collate",
    "make_clone_task",
    "make_synthetic_corpus",
    "LossBreakdown",
    "StageSpec",
    "TrainState",
    "evaluate",
    "pretrain",
    "run_stage",
    "total_loss",
    "train_step",
    "CompactionReport",
    "compact",
    "compact_tensors",
    "sparsity_of",
    "Checkpoint",
    "CheckpointService",
    "RecordWriter",
    "ReportService",
    "StageReport",
    "PipelineGraphService",
    "PipelineSpec",
    "pipeline_spec",
    "run_pipeline",
]
