# Compute core: tensors, tape, ops, optimizers
from core.tensor import (
    Tensor,
    as_tensor,
    audit_precision,
    clip,
    embedding,
    get_default_dtype,
    grad,
    matmul,
    no_grad,
    precision,
    sigmoid,
)
from core.functional import conv1d, layer_norm, linear, masked_mse, softmax, softmax_rows
from core.optim import SGD, Adam, ParamGroup, build_optimizer
from core.gradcheck import GradCheckResult, check_gradients

__all__ = [
    "Tensor",
    "as_tensor",
    "audit_precision",
    "clip",
    "embedding",
    "get_default_dtype",
    "grad",
    "matmul",
    "no_grad",
    "precision",
    "sigmoid",
    "conv1d",
    "layer_norm",
    "linear",
    "masked_mse",
    "softmax",
    "softmax_rows",
    "SGD",
    "Adam",
    "ParamGroup",
    "build_optimizer",
    "GradCheckResult",
    "check_gradients",
]
