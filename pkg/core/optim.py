"""
Optimizers
Adam and plain gradient descent over named parameter groups
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from core.tensor import Tensor


@dataclass
class ParamGroup:
    """Parameters sharing one learning rate"""
    name: str
    params: Dict[str, Tensor]
    lr: float


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


class SGD:
    """Plain gradient descent: p <- p - lr * g"""

    def __init__(self, groups: Sequence[ParamGroup]):
        self.groups = list(groups)

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        for group in self.groups:
            for name, param in group.params.items():
                if name in grads:
                    param.data -= group.lr * grads[name]


class Adam:
    """
    Adam with bias correction and a per-parameter step counter, so parameters
    that start training late still get a correctly scaled first update
    """

    def __init__(
        self,
        groups: Sequence[ParamGroup],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8
    ):
        self.groups = list(groups)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state: Dict[str, AdamState] = {}

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        """
        Update every parameter that has an entry in grads

        Args:
            grads: Mapping from parameter name to gradient array
        """
        for group in self.groups:
            for name, param in group.params.items():
                if name not in grads:
                    continue
                g = grads[name]
                state = self.state.get(name)
                if state is None:
                    state = AdamState(np.zeros_like(param.data), np.zeros_like(param.data))
                    self.state[name] = state
                state.t += 1
                state.m = self.beta1 * state.m + (1 - self.beta1) * g
                state.v = self.beta2 * state.v + (1 - self.beta2) * g * g
                m_hat = state.m / (1 - self.beta1 ** state.t)
                v_hat = state.v / (1 - self.beta2 ** state.t)
                param.data -= (group.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(param.data.dtype)


def build_optimizer(kind: str, groups: List[ParamGroup]):
    """Optimizer factory keyed by the training config's optimizer name"""
    if kind == "sgd":
        return SGD(groups)
    return Adam(groups)
