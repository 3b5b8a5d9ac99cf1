"""
Feed-Forward Component
Position-wise ReLU(X W_U + b_U) W_D + b_D
"""

from dataclasses import dataclass
from typing import Optional

from core.functional import linear
from core.tensor import Tensor


@dataclass
class FfnParams:
    w_u: Tensor
    w_d: Tensor
    b_u: Optional[Tensor] = None
    b_d: Optional[Tensor] = None


def ffn(params: FfnParams, x: Tensor) -> Tensor:
    """Up-projection, ReLU, down-projection over the last axis of x"""
    hidden = linear(x, params.w_u, params.b_u).relu()
    return linear(hidden, params.w_d, params.b_d)
