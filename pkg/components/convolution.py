"""
Convolution Stacks
1-D convolution stacks used by the variance adaptor and the post-net
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from core.functional import conv1d, linear
from core.tensor import Tensor, as_tensor, reshape


@dataclass
class ConvLayer:
    weight: Tensor
    bias: Optional[Tensor] = None


def conv_stack(
    layers: List[ConvLayer],
    x: Tensor,
    mask: Optional[np.ndarray] = None,
    activation: Optional[Callable[[Tensor], Tensor]] = None,
    activate_last: bool = True
) -> Tensor:
    """
    Apply same-padded convolutions in sequence

    Padded positions are zeroed before every convolution so they never leak
    into neighbouring valid frames.

    Args:
        layers: Convolution layers in order
        x: Input (..., L, c_in)
        mask: Optional (..., L) validity mask
        activation: Elementwise nonlinearity between layers
        activate_last: Whether the activation follows the final layer too
    """
    keep = None if mask is None else as_tensor(np.asarray(mask, dtype=x.dtype)[..., None])
    for index, layer in enumerate(layers):
        if keep is not None:
            x = x * keep
        x = conv1d(x, layer.weight, layer.bias)
        if activation is not None and (activate_last or index < len(layers) - 1):
            x = activation(x)
    return x


@dataclass
class AdaptorParams:
    """Conv stack predicting one auxiliary value per frame, then projecting it back"""
    convs: List[ConvLayer]
    head_weight: Tensor
    head_bias: Tensor
    proj_weight: Tensor
    proj_bias: Tensor


def variance_adaptor(
    params: AdaptorParams,
    x: Tensor,
    mask: Optional[np.ndarray] = None
) -> Tuple[Tensor, Tensor]:
    """
    Predict the auxiliary feature and add its projection to the hidden states

    Returns:
        (x + projection, aux) with aux shaped (..., L)
    """
    hidden = conv_stack(params.convs, x, mask, activation=lambda t: t.relu())
    aux = linear(hidden, params.head_weight, params.head_bias)
    x = x + linear(aux, params.proj_weight, params.proj_bias)
    return x, reshape(aux, aux.shape[:-1])


def postnet(layers: List[ConvLayer], mel: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Residual refinement: mel + convs(mel), tanh between layers"""
    return mel + conv_stack(layers, mel, mask, activation=lambda t: t.tanh(), activate_last=False)
