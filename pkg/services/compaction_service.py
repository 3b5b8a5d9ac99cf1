"""
Compaction Service
Binarize gates, physically delete pruned channels and heads, and account
for sparsity and compression.
"""

import copy
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
from loguru import logger

from components.layout import heads_dim
from components.speech_model import SpeechModel
from config.settings import GateConfig, ModelConfig
from core.tensor import Tensor, no_grad
from services.prune_plan import PrunePlan, apply_masks, build_plan, tensor_group
from utils.helpers import compression_ratio, sparsity_percent


# ============================================================================
# Data Models
# ============================================================================

@dataclass
class DimReport:
    """Kept / total indices of one prunable dimension"""
    name: str
    kept: int
    total: int
    enabled: bool = True
    zero_survivor: bool = False


@dataclass
class CompactionReport:
    """
    Parameter accounting of one compaction

    params_before, sparsity_pct, ratio and the per-dimension totals refer to
    the unpruned layout the compacted config descends from, so compacting an
    already compacted model reproduces the same report. overall_sparsity_pct
    compares against params_original (the base model before cloning added a
    speaker row).
    """
    dims: List[DimReport]
    params_before: int
    params_after: int
    params_original: int
    sparsity_pct: float
    ratio: float
    overall_sparsity_pct: float
    max_residual: Optional[float] = None
    groups: Dict[str, Dict[str, int]] = field(default_factory=dict)

    @property
    def zero_survivors(self) -> List[str]:
        return [dim.name for dim in self.dims if dim.zero_survivor]

    def to_record(self) -> Dict[str, Any]:
        record = asdict(self)
        record["type"] = "compaction"
        return record


# ============================================================================
# Counting
# ============================================================================

def _kept_extent(plan: PrunePlan, binding, keep: Mapping[str, np.ndarray]) -> Tuple[int, ...]:
    """Shape of a bound tensor after compaction; all zeros for a removed head"""
    if binding.head is not None:
        head_dim, position = binding.head
        if position not in keep[head_dim]:
            return tuple(0 for _ in binding.shape)
    return tuple(
        binding.shape[axis] if dim is None else len(keep[dim])
        for axis, dim in enumerate(binding.axes)
    )


def surviving_parameters(plan: PrunePlan, keep: Optional[Mapping[str, np.ndarray]] = None) -> int:
    """
    Closed-form parameter count after compaction

    Per binding the survivors are the product of kept extents per axis (a
    matrix keeping r of its rows and c of its columns keeps r*c), or zero for a
    removed head.
    """
    keep = plan.keep_indices() if keep is None else keep
    return sum(
        int(np.prod(_kept_extent(plan, b, keep), dtype=np.int64))
        for b in plan.bindings if not b.buffer
    )


def sparsity_of(plan: PrunePlan, keep: Optional[Mapping[str, np.ndarray]] = None) -> float:
    """Percentage of lambda removed by the binarized gates, without building a model"""
    return sparsity_percent(surviving_parameters(plan, keep), plan.lambda_)


def group_breakdown(
    plan: PrunePlan,
    keep: Mapping[str, np.ndarray],
    ancestor: Optional[PrunePlan] = None
) -> Dict[str, Dict[str, int]]:
    """Before / maskable counts of the ancestor layout and after counts of plan, per group"""
    ancestor = ancestor or plan
    groups: Dict[str, Dict[str, int]] = {}
    for binding in ancestor.bindings:
        if binding.buffer:
            continue
        entry = groups.setdefault(tensor_group(binding.tensor), {"before": 0, "after": 0, "maskable": 0})
        entry["before"] += binding.size
        if binding.maskable:
            entry["maskable"] += binding.size
    for binding in plan.bindings:
        if binding.buffer:
            continue
        entry = groups.setdefault(tensor_group(binding.tensor), {"before": 0, "after": 0, "maskable": 0})
        entry["after"] += int(np.prod(_kept_extent(plan, binding, keep), dtype=np.int64))
    return dict(sorted(groups.items()))


def ancestor_config(config: ModelConfig) -> ModelConfig:
    """The unpruned config a compacted one descends from (compaction only fills extents and head ids)"""
    return replace(config, extents={}, head_ids={})


# ============================================================================
# Physical compaction
# ============================================================================

def compact_tensors(
    tensors: Mapping[str, Any],
    plan: PrunePlan,
    keep: Mapping[str, np.ndarray]
) -> Dict[str, np.ndarray]:
    """
    Delete pruned indices from every bound tensor

    Tensors of removed heads are dropped entirely.

    Args:
        tensors: Name -> Tensor or array
        plan: Plan the keep sets refer to
        keep: Surviving indices per dimension

    Returns:
        Name -> compacted array (copies)
    """
    compacted = {}
    for name, value in tensors.items():
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        binding = plan.binding(name)
        if binding.head is not None:
            head_dim, position = binding.head
            if position not in keep[head_dim]:
                continue
        for axis, dim in enumerate(binding.axes):
            if dim is not None:
                data = np.take(data, keep[dim], axis=axis)
        compacted[name] = np.array(data, copy=True)
    return compacted


def compacted_config(config: ModelConfig, plan: PrunePlan, keep: Mapping[str, np.ndarray]) -> ModelConfig:
    """Model config describing the surviving structure; head ids keep their original numbering"""
    new = copy.deepcopy(config)
    for prefix in config.layer_prefixes():
        heads = config.heads(prefix)
        new.head_ids[prefix] = [heads[int(i)] for i in keep[heads_dim(prefix)]]
    for dim in plan.dims:
        if dim.kind != "head_count":
            new.extents[dim.name] = int(len(keep[dim.name]))
    new.extents = {
        name: extent for name, extent in sorted(new.extents.items())
        if not name.endswith(".dk") or _head_survives(name, new)
    }
    return new


def _head_survives(dk_name: str, config: ModelConfig) -> bool:
    prefix, _, rest = dk_name.rpartition(".head")
    head = int(rest.split(".")[0])
    return head in config.heads(prefix)


def compacted_plan(small: SpeechModel, plan: PrunePlan, keep: Mapping[str, np.ndarray], gate_config: GateConfig) -> PrunePlan:
    """Plan for the compacted model carrying the surviving gate logits"""
    new_plan = build_plan(small.config, gate_config)
    new_plan.load_gates({
        dim.name: plan.dim(dim.name).gate.log_alpha.data[keep[dim.name]]
        for dim in new_plan.dims
    })
    return new_plan


def equivalence_residual(
    model: SpeechModel,
    plan: PrunePlan,
    small: SpeechModel,
    n_probe: int = 10,
    seed: int = 0,
    length: int = 12
) -> float:
    """
    Max |masked forward - compacted forward| over random probe sequences

    The masked side uses the same binary masks compaction used.
    """
    rng = np.random.default_rng([seed, 11])
    samples = plan.binary_samples(warn=False)
    n_speakers = model.tensors["embed.speaker"].shape[0]
    length = min(length, model.config.max_len)
    worst = 0.0
    with no_grad():
        view = apply_masks(model, plan, samples)
        for _ in range(n_probe):
            tokens = rng.integers(0, model.config.vocab_size, size=length)
            speaker = int(rng.integers(0, n_speakers))
            masked = model.forward(tokens, speaker, view)
            compact_out = small.forward(tokens, speaker)
            for a, b in (
                (masked.mel_before, compact_out.mel_before),
                (masked.mel_after, compact_out.mel_after),
                (masked.aux, compact_out.aux),
            ):
                worst = max(worst, float(np.max(np.abs(a.data.astype(np.float64) - b.data))))
    return worst


def compact(
    model: SpeechModel,
    plan: PrunePlan,
    gate_config: Optional[GateConfig] = None,
    params_original: Optional[int] = None,
    n_probe: int = 10,
    seed: int = 0
) -> Tuple[SpeechModel, PrunePlan, CompactionReport]:
    """
    Build the smaller model the binarized gates describe

    Args:
        model: Model to compact
        plan: Its prune plan (gates are binarized here)
        gate_config: Gate hyperparameters for the new plan
        params_original: Parameter count of the unpruned ancestor
        n_probe: Probe inputs for the equivalence residual (0 skips it)
        seed: Probe seed

    Returns:
        (compacted model, its plan with surviving logits, report)
    """
    gate_config = gate_config or GateConfig()
    keep = plan.keep_indices()
    zero = set(plan.zero_survivors())
    for name in sorted(zero):
        logger.warning(f"Dimension {name} has no surviving index; keeping index {int(keep[name][0])}")

    arrays = compact_tensors(model.tensors, plan, keep)
    config = compacted_config(model.config, plan, keep)
    tensors = {
        name: Tensor(data, requires_grad=model.tensors[name].requires_grad, name=name, dtype=data.dtype)
        for name, data in arrays.items()
    }
    small = SpeechModel(config, tensors)
    new_plan = compacted_plan(small, plan, keep, gate_config)

    ancestor = build_plan(ancestor_config(model.config), gate_config)
    current = {dim.name: dim for dim in plan.dims}
    dims = []
    for dim in ancestor.dims:
        removed = dim.kind == "head_dk" and not _head_survives(dim.name, config)
        kept = 0 if removed or dim.name not in current else int(len(keep[dim.name]))
        enabled = current[dim.name].enabled if dim.name in current else dim.enabled
        dims.append(DimReport(dim.name, kept, dim.extent, enabled, dim.name in zero and not removed))

    before = ancestor.lambda_
    after = small.parameter_count()
    original = params_original or before
    residual = equivalence_residual(model, plan, small, n_probe, seed) if n_probe > 0 else None
    report = CompactionReport(
        dims=dims,
        params_before=before,
        params_after=after,
        params_original=original,
        sparsity_pct=sparsity_percent(after, before),
        ratio=compression_ratio(before, after),
        overall_sparsity_pct=sparsity_percent(after, original),
        max_residual=residual,
        groups=group_breakdown(plan, keep, ancestor),
    )
    logger.info(
        f"Compacted {before} -> {after} parameters "
        f"({report.sparsity_pct:.2f}% sparsity, ratio {report.ratio:.3f})"
    )
    return small, new_plan, report
