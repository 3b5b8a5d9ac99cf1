"""
Gradient Audit
Central finite differences against the tape's analytic gradients
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from core.tensor import Tensor, grad, no_grad


@dataclass
class GradCheckResult:
    """Outcome of one audit"""
    max_relative_error: float
    worst_parameter: str
    worst_index: Tuple[int, ...]
    checked: int

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_relative_error < tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def numerical_derivative(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    index: Tuple[int, ...],
    step: float = 1e-5
) -> float:
    """Central difference of fn() with respect to one coordinate of tensor"""
    original = tensor.data[index].copy()
    with no_grad():
        tensor.data[index] = original + step
        upper = fn().item()
        tensor.data[index] = original - step
        lower = fn().item()
    tensor.data[index] = original
    return (upper - lower) / (2 * step)


def check_gradients(
    fn: Callable[[], Tensor],
    params: Dict[str, Tensor],
    n_points: Optional[int] = 10,
    step: float = 1e-5,
    rng: Optional[np.random.Generator] = None
) -> GradCheckResult:
    """
    Compare analytic and numeric gradients

    Args:
        fn: Closure rebuilding the scalar loss from the current parameter values
        params: Named parameters to audit
        n_points: Coordinates sampled per parameter (None audits every coordinate)
        step: Finite-difference step
        rng: Generator used for coordinate sampling

    Returns:
        GradCheckResult with the worst relative error seen
    """
    rng = rng or np.random.default_rng(0)
    names = list(params)
    analytic = dict(zip(names, grad(fn(), [params[n] for n in names], allow_unused=True)))

    worst = GradCheckResult(0.0, "", (), 0)
    checked = 0
    for name in names:
        tensor = params[name]
        size = tensor.size
        if n_points is None or size <= n_points:
            flat = np.arange(size)
        else:
            flat = rng.choice(size, size=n_points, replace=False)
        for position in flat:
            index = np.unravel_index(int(position), tensor.shape)
            numeric = numerical_derivative(fn, tensor, index, step)
            error = relative_error(float(analytic[name][index]), numeric)
            checked += 1
            if error > worst.max_relative_error:
                worst = GradCheckResult(error, name, tuple(int(i) for i in index), 0)
    worst.checked = checked
    return worst
