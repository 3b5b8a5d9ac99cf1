"""
Prune Plan Service
Declares every prunable dimension, binds each tensor axis to the gate that
masks it, composes per-tensor masks and builds masked parameter views.
"""

from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np
from loguru import logger

from components.layout import MODEL_D, UNMASKED, DimSpec, TensorSpec, dimension_specs, parameter_layout
from components.speech_model import ParameterView
from config.settings import GateConfig, ModelConfig
from core.tensor import Tensor, getitem, reshape
from services.gate_service import GateParam, GateSample, binarize, gate_rng, sample_gate
from utils.errors import DimensionError, PlanError, UsageError

GATE_PREFIX = "gate:"


@dataclass
class PrunableDim:
    """A dimension that can be pruned, with the gate that masks it"""
    name: str
    extent: int
    gate: GateParam
    enabled: bool = True
    kind: str = ""


@dataclass(frozen=True)
class MaskBinding:
    """
    Which gate masks which axis of one tensor

    axes names, per tensor axis, the enabled dimension gating it (None for
    unmasked axes and for disabled dimensions). head is the (head-count
    dimension, position) pair when the tensor belongs to a gated head.
    """
    tensor: str
    shape: Tuple[int, ...]
    axes: Tuple[Optional[str], ...]
    head: Optional[Tuple[str, int]] = None
    head_output: bool = False
    buffer: bool = False

    @property
    def maskable(self) -> bool:
        return self.head is not None or any(dim is not None for dim in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


def tensor_group(name: str) -> str:
    """Coarse report group of a tensor name"""
    if name.startswith("embed.") or name == "pos_enc":
        return "embedding"
    if ".attn." in name:
        return "attention"
    if ".ffn." in name:
        return "ffn"
    if ".ln1." in name or ".ln2." in name:
        return "norm"
    if name.startswith("adaptor."):
        return "adaptor"
    if name.startswith("out."):
        return "output"
    if name.startswith("postnet."):
        return "postnet"
    return "other"


class PrunePlan:
    """
    Dependency ledger from prunable dimensions to tensor axes

    Immutable after construction apart from gate logits, which train.
    lambda_ is the parameter count of the layout (buffers and gates excluded).
    """

    def __init__(self, dims: List[PrunableDim], bindings: List[MaskBinding]):
        self.dims = list(dims)
        self.bindings = list(bindings)
        self._dims = {dim.name: dim for dim in self.dims}
        self._bindings = {binding.tensor: binding for binding in self.bindings}
        if len(self._dims) != len(self.dims):
            raise PlanError("prunable dimension names must be unique")
        if len(self._bindings) != len(self.bindings):
            raise PlanError("each tensor may be bound only once")
        self.lambda_ = sum(b.size for b in self.bindings if not b.buffer)

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    @classmethod
    def from_layout(
        cls,
        dims: Iterable[DimSpec],
        layout: Iterable[TensorSpec],
        gate_config: GateConfig,
        disabled: Iterable[str] = ()
    ) -> "PrunePlan":
        """
        Build a plan for any tensor layout

        Args:
            dims: Prunable dimensions
            layout: Tensor specs whose axes name those dimensions or UNMASKED
            gate_config: Hyperparameters for the created gates
            disabled: Dimension names that exist but are never masked

        Returns:
            PrunePlan

        Raises:
            PlanError: an axis names no known dimension, or extents disagree
        """
        disabled = set(disabled)
        prunable = [
            PrunableDim(d.name, d.extent, GateParam.create(d.name, d.extent, gate_config), d.name not in disabled, d.kind)
            for d in dims
        ]
        known = {dim.name: dim for dim in prunable}
        unknown_disabled = disabled - set(known)
        if unknown_disabled:
            raise PlanError(f"cannot disable unknown dimensions: {sorted(unknown_disabled)}")

        bindings = []
        for spec in layout:
            if len(spec.axes) != len(spec.shape):
                raise PlanError(f"{spec.name}: {len(spec.axes)} axis roles for a {len(spec.shape)}-d tensor")
            axes = []
            for axis, role in enumerate(spec.axes):
                if role == UNMASKED:
                    axes.append(None)
                    continue
                dim = known.get(role)
                if dim is None:
                    raise PlanError(f"{spec.name}: axis {axis} is bound to unknown dimension {role!r}")
                if dim.extent != spec.shape[axis]:
                    raise PlanError(
                        f"{spec.name}: axis {axis} has extent {spec.shape[axis]} but {role} has {dim.extent}"
                    )
                axes.append(dim.name if dim.enabled else None)
            head = None
            if spec.head is not None:
                head_dim, position = spec.head
                dim = known.get(head_dim)
                if dim is None or not 0 <= position < dim.extent:
                    raise PlanError(f"{spec.name}: invalid head reference {spec.head}")
                head = (head_dim, position) if dim.enabled else None
            bindings.append(MaskBinding(spec.name, tuple(spec.shape), tuple(axes), head, spec.head_output, spec.buffer))
        return cls(prunable, bindings)

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------

    def dim(self, name: str) -> PrunableDim:
        try:
            return self._dims[name]
        except KeyError:
            raise UsageError(f"plan has no dimension {name!r}") from None

    def binding(self, tensor: str) -> MaskBinding:
        try:
            return self._bindings[tensor]
        except KeyError:
            raise UsageError(f"plan has no binding for tensor {tensor!r}") from None

    def enabled_dims(self) -> List[PrunableDim]:
        return [dim for dim in self.dims if dim.enabled]

    def maskable_bindings(self) -> List[MaskBinding]:
        return [b for b in self.bindings if b.maskable and not b.buffer]

    def maskable_count(self) -> int:
        """Parameters covered by at least one enabled gate"""
        return sum(b.size for b in self.maskable_bindings())

    def gate_parameters(self) -> Dict[str, Tensor]:
        """Enabled gate logits keyed for the optimizer"""
        return {f"{GATE_PREFIX}{dim.name}": dim.gate.log_alpha for dim in self.enabled_dims()}

    def load_gates(self, values: Mapping[str, np.ndarray]) -> None:
        """Overwrite gate logits (e.g. from a checkpoint)"""
        for name, data in values.items():
            gate = self.dim(name).gate
            data = np.asarray(data)
            if data.shape != gate.log_alpha.shape:
                raise DimensionError(f"load_gates({name})", gate.log_alpha.shape, data.shape)
            gate.log_alpha.data[...] = data

    # ------------------------------------------------------------------
    # samples
    # ------------------------------------------------------------------

    def sample(self, seed: int, step: int) -> Dict[str, GateSample]:
        """One hard-concrete draw per enabled gate, replayable from (seed, step)"""
        return {
            dim.name: sample_gate(dim.gate, gate_rng(seed, step, dim.name))
            for dim in self.enabled_dims()
        }

    def ones_samples(self) -> Dict[str, GateSample]:
        """Every gate frozen open"""
        return {dim.name: GateSample.fixed(np.ones(dim.extent)) for dim in self.enabled_dims()}

    def keep_indices(self) -> Dict[str, np.ndarray]:
        """
        Surviving indices per dimension after binarization

        A dimension left with no survivors keeps its single largest-logit index.
        Disabled dimensions keep everything.
        """
        keep = {}
        for dim in self.dims:
            if not dim.enabled:
                keep[dim.name] = np.arange(dim.extent)
                continue
            indices = np.flatnonzero(binarize(dim.gate))
            if indices.size == 0:
                indices = np.array([int(np.argmax(dim.gate.log_alpha.data))])
            keep[dim.name] = indices
        return keep

    def zero_survivors(self) -> List[str]:
        """Enabled dimensions whose binarized gate is all zero"""
        return [dim.name for dim in self.enabled_dims() if not np.any(binarize(dim.gate))]

    def binary_samples(self, warn: bool = True) -> Dict[str, GateSample]:
        """Frozen binary samples consistent with keep_indices()"""
        samples = {}
        keep = self.keep_indices()
        for name in self.zero_survivors() if warn else ():
            logger.warning(f"Dimension {name} binarized to zero survivors; keeping index {int(keep[name][0])}")
        for dim in self.enabled_dims():
            z = np.zeros(dim.extent)
            z[keep[dim.name]] = 1.0
            samples[dim.name] = GateSample.fixed(z)
        return samples

    def summary(self) -> Dict[str, Any]:
        """Serializable description for checkpoints and reports"""
        return {
            "dims": [
                {"name": dim.name, "extent": dim.extent, "enabled": dim.enabled, "kind": dim.kind}
                for dim in self.dims
            ],
            "bindings": [
                {
                    "tensor": b.tensor,
                    "axes": list(b.axes),
                    "head": list(b.head) if b.head else None,
                    "head_output": b.head_output,
                    "buffer": b.buffer,
                }
                for b in self.bindings
            ],
            "lambda": self.lambda_,
            "maskable": self.maskable_count(),
        }


def build_plan(model_config: ModelConfig, gate_config: Optional[GateConfig] = None) -> PrunePlan:
    """
    Plan for the speech model architecture

    model_d is declared but disabled unless gate_config.prune_model_d is set.
    """
    gate_config = gate_config or GateConfig()
    disabled = () if gate_config.prune_model_d else (MODEL_D,)
    plan = PrunePlan.from_layout(
        dimension_specs(model_config), parameter_layout(model_config), gate_config, disabled
    )
    logger.debug(
        f"Built prune plan: {len(plan.enabled_dims())}/{len(plan.dims)} gates enabled, "
        f"lambda={plan.lambda_}, maskable={plan.maskable_count()}"
    )
    return plan


def compose_mask(binding: MaskBinding, samples: Mapping[str, GateSample]) -> Tensor:
    """
    Outer product of the per-axis gate vectors, shaped like the bound tensor

    Ungated axes contribute ones. Head gates are not part of the composed mask.

    Raises:
        UsageError: a bound dimension has no sample
        DimensionError: a gate length differs from its axis extent
    """
    rank = len(binding.shape)
    mask: Optional[Tensor] = None
    for axis, dim in enumerate(binding.axes):
        if dim is None:
            continue
        if dim not in samples:
            raise UsageError(f"no gate sample for {dim} (needed by {binding.tensor})")
        z = samples[dim].z
        if z.shape != (binding.shape[axis],):
            raise DimensionError(f"compose_mask({binding.tensor})", binding.shape, z.shape)
        broadcast = [1] * rank
        broadcast[axis] = binding.shape[axis]
        factor = reshape(z, tuple(broadcast))
        mask = factor if mask is None else mask * factor
    ones = Tensor(np.ones(binding.shape))
    return ones if mask is None else mask * ones


def apply_masks(
    model: Any,
    plan: PrunePlan,
    samples: Mapping[str, GateSample]
) -> ParameterView:
    """
    Masked parameter view: every bound tensor becomes W * z

    Head gates scale each head's output projection, i.e. its summand in the
    multi-head sum. When model_d is gated its sample also weights layer-norm
    statistics.

    Args:
        model: SpeechModel, or a plain name -> tensor mapping
        plan: Plan built for the model's config
        samples: Gate sample per enabled dimension

    Returns:
        ParameterView for forward passes
    """
    tensors: Mapping[str, Tensor] = getattr(model, "tensors", model)
    masked = {}
    for name, tensor in tensors.items():
        binding = plan.binding(name)
        if not binding.maskable:
            masked[name] = tensor
            continue
        value = tensor
        if any(dim is not None for dim in binding.axes):
            value = value * compose_mask(binding, samples)
        if binding.head is not None and binding.head_output:
            head_dim, position = binding.head
            if head_dim not in samples:
                raise UsageError(f"no gate sample for {head_dim} (needed by {name})")
            value = value * getitem(samples[head_dim].z, position)
        masked[name] = value
    channel_weight = None
    if MODEL_D in samples:
        z = samples[MODEL_D].z
        # a frozen all-open gate is plain layer norm
        if z.requires_grad or not np.all(z.data == 1):
            channel_weight = z
    return ParameterView(masked, channel_weight)
