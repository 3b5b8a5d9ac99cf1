"""
Functional Ops
Composite network operations built from the differentiable primitives
"""

from typing import Optional

import numpy as np

from core.tensor import (
    Tensor,
    _record,
    as_tensor,
    getitem,
    matmul,
    pad_axis,
    tsum,
)
from utils.errors import DimensionError, NumericError

LAYER_NORM_EPS = 1e-5


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along one axis"""
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax received non-finite input")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    weights = np.exp(shifted)
    out = weights / np.sum(weights, axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _record(out, (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a matrix (last axis for batched input)"""
    return softmax(x, axis=-1)


def layer_norm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    eps: float = LAYER_NORM_EPS,
    channel_weight: Optional[Tensor] = None
) -> Tensor:
    """
    Layer normalization over the last axis

    Args:
        x: Input (..., n)
        scale: Affine scale (n,)
        shift: Affine shift (n,)
        eps: Variance floor
        channel_weight: Optional (n,) weights restricting the statistics to a
            channel subset; binary weights reproduce layer norm over the kept
            channels only

    Returns:
        Normalized tensor with the shape of x
    """
    if scale.shape != (x.shape[-1],) or shift.shape != (x.shape[-1],):
        raise DimensionError("layer_norm", x.shape, scale.shape)
    if channel_weight is None:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        variance = (centered * centered).mean(axis=-1, keepdims=True)
    else:
        total = tsum(channel_weight)
        mu = tsum(x * channel_weight, axis=-1, keepdims=True) / total
        centered = x - mu
        variance = tsum(centered * centered * channel_weight, axis=-1, keepdims=True) / total
    normalized = centered * (variance + eps) ** -0.5
    return normalized * scale + shift


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else out + bias


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Same-padded 1-D convolution along the sequence axis

    Args:
        x: Input (..., L, c_in)
        weight: Kernel (k, c_in, c_out), k odd
        bias: Optional (c_out,)

    Returns:
        Output (..., L, c_out)
    """
    taps, c_in, _ = weight.shape
    if taps % 2 != 1 or x.shape[-1] != c_in:
        raise DimensionError("conv1d", x.shape, weight.shape)
    half = taps // 2
    length = x.shape[-2]
    padded = pad_axis(x, -2, half, half)
    out = None
    for tap in range(taps):
        window = getitem(padded, (Ellipsis, slice(tap, tap + length), slice(None)))
        term = matmul(window, getitem(weight, tap))
        out = term if out is None else out + term
    return out if bias is None else out + bias


def masked_mse(prediction: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """
    Mean squared error over positions where mask is 1

    Args:
        prediction: (..., L[, c]) predictions
        target: Same shape as prediction
        mask: (..., L) validity mask broadcast over trailing channels
    """
    target = as_tensor(np.asarray(target, dtype=prediction.dtype))
    weights = np.asarray(mask, dtype=prediction.dtype)
    if prediction.ndim == weights.ndim + 1:
        count = weights.sum() * prediction.shape[-1]
        weights = weights[..., None]
    else:
        count = weights.sum()
    diff = prediction - target
    return tsum(diff * diff * as_tensor(weights)) * (1.0 / float(count))
