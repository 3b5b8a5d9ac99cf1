"""
Parameter Layout
Shapes and per-axis dimension roles of every tensor the speech model reads.

The layout is the ledger of which prunable dimension owns which tensor axis.
Model initialization, prune-plan construction and checkpoint validation all
read it, so a compacted config (with `extents` / `head_ids` filled in) yields
the compacted shapes through the same code.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from config.settings import ModelConfig

UNMASKED = "-"
MODEL_D = "model_d"


@dataclass(frozen=True)
class DimSpec:
    """One prunable dimension"""
    name: str
    extent: int
    kind: str


@dataclass(frozen=True)
class TensorSpec:
    """
    One tensor of the layout

    axes holds, per tensor axis, the name of the prunable dimension gating it
    or UNMASKED. head is (head-count dim name, position) for per-head tensors;
    head_output marks the tensor carrying the head's summand in the forward pass.
    Buffers are saved and masked but are not parameters.
    """
    name: str
    shape: Tuple[int, ...]
    axes: Tuple[Optional[str], ...]
    head: Optional[Tuple[str, int]] = None
    head_output: bool = False
    buffer: bool = False
    init: str = "normal"


def heads_dim(prefix: str) -> str:
    return f"{prefix}.heads"


def head_dk_dim(prefix: str, head: int) -> str:
    return f"{prefix}.head{head}.dk"


def ffn_dim(prefix: str) -> str:
    return f"{prefix}.ffn.df"


def adaptor_dim(layer: int) -> str:
    return f"adaptor.hidden{layer}"


def postnet_dim(layer: int) -> str:
    return f"postnet.hidden{layer}"


def dimension_specs(config: ModelConfig) -> List[DimSpec]:
    """Every prunable dimension of the architecture, in plan order"""
    dims = [DimSpec(MODEL_D, config.extent(MODEL_D, config.d), "model_d")]
    for prefix in config.layer_prefixes():
        heads = config.heads(prefix)
        dims.append(DimSpec(heads_dim(prefix), len(heads), "head_count"))
        for head in heads:
            name = head_dk_dim(prefix, head)
            dims.append(DimSpec(name, config.extent(name, config.head_dim), "head_dk"))
        dims.append(DimSpec(ffn_dim(prefix), config.extent(ffn_dim(prefix), config.d_f), "ffn_df"))
    for layer in range(config.adaptor_layers):
        name = adaptor_dim(layer)
        dims.append(DimSpec(name, config.extent(name, config.adaptor_hidden), "adaptor_hidden"))
    for layer in range(config.postnet_layers - 1):
        name = postnet_dim(layer)
        dims.append(DimSpec(name, config.extent(name, config.postnet_hidden), "postnet_hidden"))
    return dims


def parameter_layout(config: ModelConfig) -> List[TensorSpec]:
    """
    Ordered tensor specs for a model config

    Args:
        config: Model configuration (possibly compacted)

    Returns:
        List of TensorSpec in initialization order
    """
    extents = {dim.name: dim.extent for dim in dimension_specs(config)}
    d = extents[MODEL_D]
    k = config.kernel_size
    specs = [
        TensorSpec("embed.token", (config.vocab_size, d), (UNMASKED, MODEL_D), init="embedding"),
        TensorSpec("embed.speaker", (config.n_speakers, d), (UNMASKED, MODEL_D), init="embedding"),
        TensorSpec("pos_enc", (config.max_len, d), (UNMASKED, MODEL_D), buffer=True, init="sinusoid"),
    ]

    for prefix in config.layer_prefixes():
        count_dim = heads_dim(prefix)
        for position, head in enumerate(config.heads(prefix)):
            dk = head_dk_dim(prefix, head)
            width = extents[dk]
            ref = (count_dim, position)
            base = f"{prefix}.attn.head{head}"
            for proj in ("q", "k", "v"):
                specs.append(TensorSpec(f"{base}.w_{proj}", (d, width), (MODEL_D, dk), head=ref))
                specs.append(TensorSpec(f"{base}.b_{proj}", (width,), (dk,), head=ref, init="zeros"))
            specs.append(TensorSpec(f"{base}.w_o", (width, d), (dk, MODEL_D), head=ref, head_output=True))
        specs.append(TensorSpec(f"{prefix}.attn.b_o", (d,), (MODEL_D,), init="zeros"))
        specs.append(TensorSpec(f"{prefix}.ln1.scale", (d,), (MODEL_D,), init="ones"))
        specs.append(TensorSpec(f"{prefix}.ln1.shift", (d,), (MODEL_D,), init="zeros"))
        df = ffn_dim(prefix)
        specs.append(TensorSpec(f"{prefix}.ffn.w_u", (d, extents[df]), (MODEL_D, df)))
        specs.append(TensorSpec(f"{prefix}.ffn.b_u", (extents[df],), (df,), init="zeros"))
        specs.append(TensorSpec(f"{prefix}.ffn.w_d", (extents[df], d), (df, MODEL_D)))
        specs.append(TensorSpec(f"{prefix}.ffn.b_d", (d,), (MODEL_D,), init="zeros"))
        specs.append(TensorSpec(f"{prefix}.ln2.scale", (d,), (MODEL_D,), init="ones"))
        specs.append(TensorSpec(f"{prefix}.ln2.shift", (d,), (MODEL_D,), init="zeros"))

    previous, previous_extent = MODEL_D, d
    for layer in range(config.adaptor_layers):
        hidden = adaptor_dim(layer)
        width = extents[hidden]
        specs.append(TensorSpec(f"adaptor.conv{layer}.weight", (k, previous_extent, width), (UNMASKED, previous, hidden)))
        specs.append(TensorSpec(f"adaptor.conv{layer}.bias", (width,), (hidden,), init="zeros"))
        previous, previous_extent = hidden, width
    specs.append(TensorSpec("adaptor.head.weight", (previous_extent, 1), (previous, UNMASKED)))
    specs.append(TensorSpec("adaptor.head.bias", (1,), (UNMASKED,), init="zeros"))
    specs.append(TensorSpec("adaptor.proj.weight", (1, d), (UNMASKED, MODEL_D)))
    specs.append(TensorSpec("adaptor.proj.bias", (d,), (MODEL_D,), init="zeros"))

    specs.append(TensorSpec("out.weight", (d, config.n_mel), (MODEL_D, UNMASKED)))
    specs.append(TensorSpec("out.bias", (config.n_mel,), (UNMASKED,), init="zeros"))

    previous, previous_extent = UNMASKED, config.n_mel
    for layer in range(config.postnet_layers):
        last = layer == config.postnet_layers - 1
        hidden = UNMASKED if last else postnet_dim(layer)
        width = config.n_mel if last else extents[hidden]
        specs.append(TensorSpec(f"postnet.conv{layer}.weight", (k, previous_extent, width), (UNMASKED, previous, hidden)))
        specs.append(TensorSpec(f"postnet.conv{layer}.bias", (width,), (hidden,), init="zeros"))
        previous, previous_extent = hidden, width
    return specs


def parameter_shapes(config: ModelConfig, include_buffers: bool = True) -> Dict[str, Tuple[int, ...]]:
    """Name to shape mapping derived from the layout"""
    return {
        spec.name: spec.shape
        for spec in parameter_layout(config)
        if include_buffers or not spec.buffer
    }
