from __future__ import annotations

from typing import Mapping

import numpy as np

from .tensor import Tensor


class SGDMomentum:
    """Classical momentum with L2 decay folded into the gradient.

    ``v <- momentum * v + grad + weight_decay * p``; ``p <- p - lr * v``.
    """

    def __init__(self, params: Mapping[str, Tensor], momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = dict(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            sgd_momentum_step(p.data, g, self.velocity[k], lr, self.momentum, self.weight_decay)


def sgd_momentum_step(
    param: np.ndarray,
    grad: np.ndarray,
    velocity: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """In-place update of ``param`` and ``velocity``."""
    velocity *= momentum
    velocity += grad
    if weight_decay:
        velocity += weight_decay * param
    param -= lr * velocity
