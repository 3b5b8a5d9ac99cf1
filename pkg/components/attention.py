"""
Attention Component
Scaled dot-product self-attention and the multi-head sum built on it
"""

from dataclasses import dataclass
from typing import List, Optional

from core.functional import linear, softmax_rows
from core.tensor import Tensor, as_tensor, matmul
from utils.errors import DataError


@dataclass
class AttentionParams:
    """
    Parameters of one attention head

    w_q/w_k/w_v are (d, d_head); w_o is (d_head, d). Biases are optional so
    the bare formula can be exercised directly.
    """
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    b_q: Optional[Tensor] = None
    b_k: Optional[Tensor] = None
    b_v: Optional[Tensor] = None


def self_attention(
    head: AttentionParams,
    x: Tensor,
    scale: float,
    key_bias: Optional[Tensor] = None
) -> Tensor:
    """
    softmax(X W_Q (X W_K)^T / scale) X W_V for one head

    Args:
        head: Head parameters
        x: Input (..., L, d)
        scale: Logit divisor (square root of the unpruned head width)
        key_bias: Optional additive logit bias broadcast over query rows,
            e.g. large negatives on padded keys

    Returns:
        Tensor (..., L, d_head)
    """
    if x.shape[-2] == 0:
        raise DataError("self_attention: empty sequence")
    query = linear(x, head.w_q, head.b_q)
    key = linear(x, head.w_k, head.b_k)
    value = linear(x, head.w_v, head.b_v)
    logits = matmul(query, key.T) * (1.0 / scale)
    if key_bias is not None:
        logits = logits + as_tensor(key_bias)
    return matmul(softmax_rows(logits), value)


def mha(
    heads: List[AttentionParams],
    x: Tensor,
    scale: float,
    b_o: Optional[Tensor] = None,
    key_bias: Optional[Tensor] = None
) -> Tensor:
    """
    Sum over heads of SelfAtt_i(X) W_O^(i), plus the output bias

    A head gate, when masking is active, is already folded into that head's
    w_o, so it scales exactly one summand.
    """
    out = None
    for head in heads:
        term = matmul(self_attention(head, x, scale, key_bias), head.w_o)
        out = term if out is None else out + term
    if out is None:
        out = x * 0.0
    return out if b_o is None else out + b_o
