"""
Gate Service
Hard-concrete gates: sampling, inference binarization, polarization and the
L1 / expected-L0 penalties summed over a prune plan's composed masks.
"""

import zlib
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping, Optional

import numpy as np

from config.settings import GateConfig
from core.tensor import Tensor, as_tensor, clip, get_default_dtype, getitem, sigmoid, tsum
from utils.errors import SamplerError, UsageError

if TYPE_CHECKING:
    from services.prune_plan import PrunePlan

POLARIZATION_LOW = 0.05
POLARIZATION_HIGH = 0.95


@dataclass
class GateParam:
    """Learnable logits (log alpha) over one prunable dimension"""
    name: str
    log_alpha: Tensor
    config: GateConfig

    @classmethod
    def create(cls, name: str, extent: int, config: GateConfig) -> "GateParam":
        log_alpha = Tensor(np.full(extent, config.init_log_alpha), requires_grad=True, name=f"gate:{name}")
        return cls(name, log_alpha, config)

    @property
    def extent(self) -> int:
        return self.log_alpha.shape[0]


@dataclass
class GateSample:
    """
    One draw of a gate

    u holds the uniform noise, s the pre-stretch sigmoid and z the final gate.
    Frozen samples (binary masks, fine-tuning) are constants with no tape.
    """
    u: np.ndarray
    s: Tensor
    z: Tensor

    @classmethod
    def fixed(cls, values) -> "GateSample":
        z = Tensor(np.asarray(values))
        return cls(np.full(z.shape, 0.5), z, z)


def gate_rng(seed: int, step: int, name: str) -> np.random.Generator:
    """Generator keyed by (seed, step, gate name) so any step can be replayed"""
    return np.random.default_rng([int(seed), int(step), zlib.crc32(name.encode("utf-8"))])


def sample_gate(
    gate: GateParam,
    rng: Optional[np.random.Generator] = None,
    u: Optional[np.ndarray] = None
) -> GateSample:
    """
    Draw z = clip(gamma + sigmoid((log u - log(1-u) + log_alpha) / beta) (eta - gamma), 0, 1)

    Args:
        gate: Gate to sample
        rng: Source of the uniform noise (drawn from [eps, 1 - eps])
        u: Explicit uniform draws, overriding rng

    Returns:
        GateSample differentiable with respect to gate.log_alpha
    """
    config = gate.config
    if u is None:
        if rng is None:
            raise UsageError(f"sample_gate({gate.name}) needs an rng or explicit u")
        u = rng.uniform(config.eps, 1.0 - config.eps, size=gate.extent)
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (gate.extent,):
        raise UsageError(f"gate {gate.name}: expected {gate.extent} uniform draws, got shape {u.shape}")
    if not np.all((u > 0.0) & (u < 1.0)):
        raise SamplerError(f"gate {gate.name}: uniform draw outside (0, 1)")

    noise = as_tensor((np.log(u) - np.log1p(-u)).astype(gate.log_alpha.dtype))
    s = sigmoid((gate.log_alpha + noise) * (1.0 / config.beta))
    if config.gamma == 0.0 and config.eta == 1.0:
        z = s
    else:
        z = clip(s * (config.eta - config.gamma) + config.gamma, 0.0, 1.0)
    return GateSample(u, s, z)


def binarize(gate: GateParam) -> np.ndarray:
    """1 where sigmoid(log_alpha / beta) >= 0.5, i.e. where log_alpha >= 0"""
    return (gate.log_alpha.data >= 0).astype(get_default_dtype())


def keep_probability(gate: GateParam) -> np.ndarray:
    """sigmoid(log_alpha / beta) without recording"""
    x = gate.log_alpha.data.astype(np.float64) / gate.config.beta
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gate_polarization(gates: Iterable[GateParam]) -> float:
    """
    Fraction of gate probabilities strictly inside (0.05, 0.95)

    Raises:
        UsageError: if the gate set is empty
    """
    probabilities = [keep_probability(gate) for gate in gates]
    total = sum(p.size for p in probabilities)
    if total == 0:
        raise UsageError("gate polarization is undefined for an empty gate set")
    inside = sum(int(np.count_nonzero((p > POLARIZATION_LOW) & (p < POLARIZATION_HIGH))) for p in probabilities)
    return inside / total


def open_probability(gate: GateParam) -> Tensor:
    """
    Differentiable probability that a stretched gate is nonzero

    With gamma < 0 this is sigmoid(log_alpha - beta log(-gamma / eta)); without
    a stretch below zero the keep probability sigmoid(log_alpha / beta) is used.
    """
    config = gate.config
    if config.gamma < 0:
        return sigmoid(gate.log_alpha - config.beta * float(np.log(-config.gamma / config.eta)))
    return sigmoid(gate.log_alpha * (1.0 / config.beta))


def _factorized_l1(plan: "PrunePlan", vectors: Mapping[str, Tensor]) -> Tensor:
    """
    Sum over maskable tensors of ||z_1 ... z_n||_1

    Each composed mask is an outer product of nonnegative vectors, so its L1
    norm is the product of per-axis sums (ungated axes contribute their extent),
    times the head gate for per-head tensors.
    """
    total: Optional[Tensor] = None
    for binding in plan.maskable_bindings():
        factor: object = 1.0
        for axis, dim in enumerate(binding.axes):
            if dim is None:
                factor = factor * float(binding.shape[axis])
                continue
            if dim not in vectors:
                raise UsageError(f"no gate sample for {dim} (needed by {binding.tensor})")
            factor = tsum(vectors[dim]) * factor
        if binding.head is not None:
            head_dim, position = binding.head
            if head_dim not in vectors:
                raise UsageError(f"no gate sample for {head_dim} (needed by {binding.tensor})")
            factor = getitem(vectors[head_dim], position) * factor
        term = as_tensor(factor)
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def mask_l1(plan: "PrunePlan", samples: Mapping[str, GateSample]) -> Tensor:
    """
    L_reg: sum of L1 norms of every composed per-tensor mask

    Args:
        plan: Prune plan
        samples: Gate sample per enabled dimension

    Returns:
        Scalar tensor differentiable with respect to all log_alpha
    """
    return _factorized_l1(plan, {name: sample.z for name, sample in samples.items()})


def expected_l0(plan: "PrunePlan") -> Tensor:
    """Closed-form expected count of surviving masked parameters"""
    return _factorized_l1(plan, {dim.name: open_probability(dim.gate) for dim in plan.enabled_dims()})

