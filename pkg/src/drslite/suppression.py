"""Discriminative region suppression.

Caps each channel of a feature map at an upper bound tau = x_max * g, where
x_max is the channel's global maximum and g is a per-channel control value in
[0, 1].  Capping with an elementwise minimum shrinks the gap between the
strongest activations and their surroundings, which densifies the class
evidence downstream.

Control values come from either a constant (every channel suppressed to the
same fraction of its peak) or a small learnable head: sigmoid of a fully
connected layer over the channel means.  The learnable head trains jointly
with the classification objective, so it backs off suppression where it would
hurt classification.

Channels whose maximum is not positive are passed through unchanged;
otherwise a tau below x_max could *raise* values and break the
output-never-exceeds-input contract.  Networks built here place the module
after a ReLU, so that branch is normally dormant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import (
    EngineError,
    Tensor,
    add,
    full,
    fully_connected,
    global_avg_pool,
    global_max_pool,
    minimum,
    mul,
    reshape,
    sigmoid,
)
from .engine.gradcheck import TIE_MARGIN, CheckSpec

__all__ = ["DrsConfig", "extract_max", "control_constant", "control_learnable",
           "suppress", "drs_forward", "gradcheck_specs"]


@dataclass
class DrsConfig:
    """Configuration of one suppression site.

    ``constant`` mode needs ``delta`` in [0, 1]; ``learnable`` mode owns a
    K -> K fully connected controller (weight [K, K], bias [K]).
    """

    mode: str
    delta: Optional[float] = None
    weight: Optional[Tensor] = None
    bias: Optional[Tensor] = None

    @classmethod
    def constant(cls, delta: float) -> "DrsConfig":
        if not 0.0 <= delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {delta}")
        return cls(mode="constant", delta=float(delta))

    @classmethod
    def learnable(cls, channels: int, rng: np.random.Generator) -> "DrsConfig":
        limit = 1.0 / np.sqrt(channels)
        weight = Tensor(rng.uniform(-limit, limit, (channels, channels)).astype(np.float32),
                        requires_grad=True)
        bias = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        return cls(mode="learnable", weight=weight, bias=bias)

    def validate(self, channels: Optional[int] = None) -> None:
        if self.mode == "constant":
            if self.delta is None or not 0.0 <= self.delta <= 1.0:
                raise ValueError(f"constant mode requires delta in [0, 1], got {self.delta}")
        elif self.mode == "learnable":
            if self.weight is None or self.bias is None:
                raise ValueError("learnable mode requires controller weight and bias")
            k = self.weight.shape[0]
            if self.weight.shape != (k, k) or self.bias.shape != (k,):
                raise ValueError(f"controller shapes {self.weight.shape}/{self.bias.shape} are not KxK and K")
            if channels is not None and k != channels:
                raise ValueError(f"controller is sized for {k} channels, feature map has {channels}")
        else:
            raise ValueError(f"unknown suppression mode {self.mode!r}")


def extract_max(x: Tensor) -> Tensor:
    """Per-channel global maximum, shape [N, K, 1, 1]."""
    return global_max_pool(x)


def control_constant(channels: int, batch: int, cfg: DrsConfig, dtype=np.float32) -> Tensor:
    """Constant control values; excluded from the gradient tape."""
    if cfg.mode != "constant":
        raise EngineError(f"control_constant called with mode {cfg.mode!r}")
    cfg.validate()
    return full((batch, channels, 1, 1), cfg.delta, dtype=dtype)


def control_learnable(x: Tensor, cfg: DrsConfig) -> Tensor:
    """sigmoid(FC(channel means)): control values in (0, 1), shape [N, K, 1, 1]."""
    if cfg.mode != "learnable":
        raise EngineError(f"control_learnable called with mode {cfg.mode!r}")
    n, k = x.shape[0], x.shape[1]
    cfg.validate(channels=k)
    pooled = reshape(global_avg_pool(x), (n, k))
    return reshape(sigmoid(fully_connected(pooled, cfg.weight, cfg.bias)), (n, k, 1, 1))


def suppress(x: Tensor, g: Tensor) -> Tensor:
    """Cap x at tau = x_max * g per channel; non-positive-max channels pass through."""
    if g.shape[:2] != (x.shape[0], x.shape[1]):
        raise EngineError(f"control values {g.shape} do not match feature map {x.shape}")
    x_max = extract_max(x)
    tau = mul(x_max, g)
    # Channels with x_max <= 0 get an unreachable cap so min() returns x there;
    # the zero mask also blocks their gradient path into g and x_max.
    active = (x_max.data > 0).astype(x.dtype)
    unreachable = np.where(active > 0, 0, np.finfo(x.dtype).max).astype(x.dtype)
    cap = add(mul(tau, Tensor(active)), Tensor(unreachable))
    return minimum(x, cap)


def drs_forward(x: Tensor, cfg: DrsConfig) -> Tensor:
    """Full suppression pass: extract maxima, get control values, cap."""
    if cfg.mode == "constant":
        g = control_constant(x.shape[1], x.shape[0], cfg, dtype=x.dtype)
    elif cfg.mode == "learnable":
        g = control_learnable(x, cfg)
    else:
        raise EngineError(f"unknown suppression mode {cfg.mode!r}")
    return suppress(x, g)


def _learnable_guard(arrays: list[np.ndarray]) -> bool:
    """Keep the block away from min() ties and from the pass-through branch."""
    x, weight, bias = arrays
    n, k = x.shape[0], x.shape[1]
    flat = np.sort(x.reshape(n, k, -1), axis=2)
    x_max = flat[:, :, -1]
    if np.any(x_max <= TIE_MARGIN) or np.any(flat[:, :, -1] - flat[:, :, -2] <= TIE_MARGIN):
        return False
    pooled = x.reshape(n, k, -1).mean(axis=2)
    g = 1.0 / (1.0 + np.exp(-(pooled @ weight + bias)))
    tau = (x_max * g)[:, :, None, None]
    return bool(np.all(np.abs(x.reshape(n, k, -1) - tau.reshape(n, k, 1)) > TIE_MARGIN))


def _constant_guard(arrays: list[np.ndarray]) -> bool:
    x = arrays[0]
    n, k = x.shape[0], x.shape[1]
    flat = np.sort(x.reshape(n, k, -1), axis=2)
    x_max = flat[:, :, -1]
    if np.any(x_max <= TIE_MARGIN) or np.any(flat[:, :, -1] - flat[:, :, -2] <= TIE_MARGIN):
        return False
    tau = x_max * 0.55
    return bool(np.all(np.abs(x.reshape(n, k, -1) - tau[:, :, None]) > TIE_MARGIN))


def gradcheck_specs() -> list[CheckSpec]:
    """Gradient checks for the suppression block itself."""

    def learnable_block(x, weight, bias):
        return drs_forward(x, DrsConfig(mode="learnable", weight=weight, bias=bias))

    def constant_block(x):
        return drs_forward(x, DrsConfig.constant(0.55))

    return [
        CheckSpec("drs_learnable", learnable_block, ((2, 3, 4, 4), (3, 3), (3,)),
                  guard=_learnable_guard),
        CheckSpec("drs_constant", constant_block, ((2, 3, 4, 4),),
                  guard=_constant_guard),
    ]
