"""
Transformer Component
Post-norm transformer block and sinusoidal positional encoding
"""

from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence

import numpy as np

from components.attention import AttentionParams, mha
from components.feedforward import FfnParams, ffn
from core.functional import LAYER_NORM_EPS, layer_norm
from core.tensor import Tensor


@dataclass
class BlockParams:
    """Everything one encoder/decoder layer reads"""
    heads: List[AttentionParams]
    b_o: Optional[Tensor]
    ln1_scale: Tensor
    ln1_shift: Tensor
    ffn: FfnParams
    ln2_scale: Tensor
    ln2_shift: Tensor


def block_params(params: Mapping[str, Tensor], prefix: str, head_ids: Sequence[int]) -> BlockParams:
    """
    Gather a layer's tensors from a flat name -> tensor mapping

    Args:
        params: Parameter (or masked parameter) mapping
        prefix: Layer prefix such as "enc.0"
        head_ids: Surviving head ids of the layer
    """
    heads = []
    for head in head_ids:
        base = f"{prefix}.attn.head{head}"
        heads.append(AttentionParams(
            w_q=params[f"{base}.w_q"],
            w_k=params[f"{base}.w_k"],
            w_v=params[f"{base}.w_v"],
            w_o=params[f"{base}.w_o"],
            b_q=params[f"{base}.b_q"],
            b_k=params[f"{base}.b_k"],
            b_v=params[f"{base}.b_v"],
        ))
    return BlockParams(
        heads=heads,
        b_o=params[f"{prefix}.attn.b_o"],
        ln1_scale=params[f"{prefix}.ln1.scale"],
        ln1_shift=params[f"{prefix}.ln1.shift"],
        ffn=FfnParams(
            w_u=params[f"{prefix}.ffn.w_u"],
            w_d=params[f"{prefix}.ffn.w_d"],
            b_u=params[f"{prefix}.ffn.b_u"],
            b_d=params[f"{prefix}.ffn.b_d"],
        ),
        ln2_scale=params[f"{prefix}.ln2.scale"],
        ln2_shift=params[f"{prefix}.ln2.shift"],
    )


def transformer_block(
    block: BlockParams,
    x: Tensor,
    scale: float,
    key_bias: Optional[Tensor] = None,
    channel_weight: Optional[Tensor] = None,
    eps: float = LAYER_NORM_EPS
) -> Tensor:
    """
    X' = LN(MHA(X) + X); out = LN(FFN(X') + X')

    Args:
        block: Layer parameters
        x: Input (..., L, d)
        scale: Attention logit divisor
        key_bias: Optional padding bias for attention logits
        channel_weight: model_d gate; restricts layer-norm statistics to
            surviving residual channels
        eps: Layer-norm variance floor

    Returns:
        Tensor with the shape of x
    """
    attended = mha(block.heads, x, scale, block.b_o, key_bias)
    x = layer_norm(attended + x, block.ln1_scale, block.ln1_shift, eps, channel_weight)
    return layer_norm(ffn(block.ffn, x) + x, block.ln2_scale, block.ln2_shift, eps, channel_weight)


def sinusoidal_encoding(max_len: int, d: int) -> np.ndarray:
    """
    Fixed positional table; even channels sine, odd channels cosine

    Returns:
        float64 array (max_len, d)
    """
    positions = np.arange(max_len, dtype=np.float64)[:, None]
    channels = np.arange(d)
    rates = 1.0 / np.power(10000.0, (2 * (channels // 2)) / max(d, 1))
    angles = positions * rates[None, :]
    return np.where(channels % 2 == 0, np.sin(angles), np.cos(angles))
