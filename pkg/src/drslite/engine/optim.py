"""Momentum SGD and Adam for lists of parameter tensors.

Weight decay in SGD is classic L2 added to the gradient before the momentum
update.  Adam defaults to no weight decay.  Optimizer steps are the only
place parameter storage is replaced.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import ShapeError, Tensor

__all__ = ["SGD", "Adam", "decayed_lr"]


def decayed_lr(base: float, decay_epochs: Sequence[int], factor: float, epoch: int) -> float:
    """Learning rate after applying every decay whose epoch has been reached."""
    decays = sum(1 for d in decay_epochs if epoch >= d)
    return base * factor ** decays


class _Optimizer:
    kind = ""

    def __init__(self, params: Sequence[Tensor], lr: float):
        self.params = list(params)
        self.lr = float(lr)
        self.steps = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _resolve(self, grads: Optional[Sequence[np.ndarray]]) -> list[np.ndarray]:
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        grads = list(grads)
        if len(grads) != len(self.params):
            raise ShapeError(f"{self.kind}: got {len(grads)} gradients for {len(self.params)} parameters")
        for p, g in zip(self.params, grads):
            if g.shape != p.data.shape:
                raise ShapeError(f"{self.kind}: gradient shape {g.shape} != parameter shape {p.data.shape}")
        return grads


class SGD(_Optimizer):
    kind = "sgd"

    def __init__(self, params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Optional[Sequence[np.ndarray]] = None) -> None:
        grads = self._resolve(grads)
        for p, v, g in zip(self.params, self.velocity, grads):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.momentum:
                v *= self.momentum
                v += g
                update = v
            else:
                update = g
            p.data = p.data - self.lr * update
        self.steps += 1


class Adam(_Optimizer):
    kind = "adam"

    def __init__(self, params, lr: float, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Optional[Sequence[np.ndarray]] = None) -> None:
        grads = self._resolve(grads)
        self.steps += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1 ** self.steps
        bias2 = 1.0 - b2 ** self.steps
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / bias1
            v_hat = v / bias2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
