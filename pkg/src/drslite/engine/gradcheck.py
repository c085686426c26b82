"""Central-difference gradient checking.

Checks rebuild the operation under test in float64, backpropagate through a
random projection of the output, and compare every input element against a
central difference at step 1e-3.  The reported error is
``max |analytic - numeric| / max(1, |numeric|)``.

Operations with kinked points (minimum, relu, pooling) resample their inputs
until every comparison is at least ``TIE_MARGIN`` away from a tie.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import EngineError, Tape, Tensor, backward, mul, sum_all

__all__ = ["CheckSpec", "CheckResult", "grad_check", "standard_checks", "run_checks", "TIE_MARGIN"]

TIE_MARGIN = 1e-2
STEP = 1e-3


@dataclass
class CheckSpec:
    name: str
    fn: Callable[..., Tensor]
    shapes: tuple[tuple[int, ...], ...]
    guard: Optional[Callable[[list[np.ndarray]], bool]] = None
    low: float = -1.0
    high: float = 1.0


@dataclass
class CheckResult:
    name: str
    seed: int
    max_error: float

    def passed(self, tolerance: float = 1e-3) -> bool:
        return self.max_error < tolerance


def grad_check(fn, shapes, seed, *, step: float = STEP, guard=None,
               low: float = -1.0, high: float = 1.0, max_resample: int = 64) -> float:
    """Return the max relative error between tape gradients and central differences."""
    rng = np.random.default_rng(seed)
    for _ in range(max_resample):
        arrays = [rng.uniform(low, high, s) for s in shapes]
        if guard is None or guard(arrays):
            break
    else:
        raise EngineError(f"grad_check: no tie-free sample found in {max_resample} draws")

    probe = fn(*[Tensor(a) for a in arrays])
    proj = rng.uniform(-1.0, 1.0, probe.shape)

    inputs = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = sum_all(mul(fn(*inputs), Tensor(proj)))
        backward(loss, tape)

    def value() -> float:
        out = fn(*[Tensor(a) for a in arrays])
        return float((out.data * proj).sum())

    worst = 0.0
    for tensor, arr in zip(inputs, arrays):
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(arr)
        flat = arr.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            upper = value()
            flat[i] = orig - step
            lower = value()
            flat[i] = orig
            numeric = (upper - lower) / (2.0 * step)
            err = abs(aflat[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst


def _apart(a: np.ndarray, b: np.ndarray, margin: float = TIE_MARGIN) -> bool:
    return bool(np.all(np.abs(a - b) > margin))


def _away_from(a: np.ndarray, value: float, margin: float = TIE_MARGIN) -> bool:
    return bool(np.all(np.abs(a - value) > margin))


def _window_gaps_ok(x: np.ndarray, k: int, stride: int, margin: float = TIE_MARGIN) -> bool:
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    for nn in range(n):
        for cc in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    win = np.sort(x[nn, cc, oy * stride:oy * stride + k, ox * stride:ox * stride + k], axis=None)
                    if win[-1] - win[-2] <= margin:
                        return False
    return True


def _channel_gaps_ok(x: np.ndarray, margin: float = TIE_MARGIN) -> bool:
    flat = np.sort(x.reshape(x.shape[0], x.shape[1], -1), axis=2)
    return bool(np.all(flat[:, :, -1] - flat[:, :, -2] > margin))


def _composite(x, cw, cb, fw, fb):
    """conv -> relu -> GAP -> FC -> sigmoid -> BCE against a fixed target."""
    h = T.relu(T.conv2d(x, cw, cb, stride=1, padding=1))
    pooled = T.reshape(T.global_avg_pool(h), (x.shape[0], cw.shape[0]))
    scores = T.sigmoid(T.fully_connected(pooled, fw, fb))
    target = Tensor(_COMPOSITE_TARGET[: x.shape[0], : fw.shape[1]])
    return T.bce_loss(scores, target)


_COMPOSITE_TARGET = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])


def _composite_guard(arrays: list[np.ndarray]) -> bool:
    x, cw, cb = arrays[0], arrays[1], arrays[2]
    conv = T.conv2d(Tensor(x), Tensor(cw), Tensor(cb), stride=1, padding=1)
    return _away_from(conv.data, 0.0, TIE_MARGIN / 2)


def standard_checks() -> list[CheckSpec]:
    """Gradient checks for every differentiable engine operation."""
    bce_target = np.array([[0.0, 1.0, 1.0, 0.0], [1.0, 0.0, 1.0, 1.0]])
    return [
        CheckSpec("add", T.add, ((2, 3, 4), (2, 3, 4))),
        CheckSpec("add_broadcast", T.add, ((2, 3, 4, 4), (1, 3, 1, 1))),
        CheckSpec("mul", T.mul, ((2, 3, 4), (2, 3, 4))),
        CheckSpec("mul_broadcast", T.mul, ((2, 3, 4, 4), (2, 3, 1, 1))),
        CheckSpec("minimum", T.minimum, ((3, 5), (3, 5)),
                  guard=lambda a: _apart(a[0], a[1])),
        CheckSpec("minimum_broadcast", T.minimum, ((2, 3, 4, 4), (2, 3, 1, 1)),
                  guard=lambda a: _apart(a[0], a[1])),
        CheckSpec("relu", T.relu, ((3, 6),),
                  guard=lambda a: _away_from(a[0], 0.0)),
        CheckSpec("sigmoid", T.sigmoid, ((2, 7),)),
        CheckSpec("reshape", lambda x: T.reshape(x, (6, 4)), ((2, 3, 4),)),
        CheckSpec("sum_all", T.sum_all, ((2, 3, 4),)),
        CheckSpec("conv2d", lambda x, w, b: T.conv2d(x, w, b), ((1, 2, 5, 5), (3, 2, 3, 3), (3,))),
        CheckSpec("conv2d_stride_pad", lambda x, w, b: T.conv2d(x, w, b, stride=2, padding=1),
                  ((2, 2, 6, 6), (2, 2, 3, 3), (2,))),
        CheckSpec("maxpool2d", lambda x: T.maxpool2d(x, 2, 2), ((1, 2, 6, 6),),
                  guard=lambda a: _window_gaps_ok(a[0], 2, 2)),
        CheckSpec("maxpool2d_overlap", lambda x: T.maxpool2d(x, 3, 2), ((1, 2, 7, 7),),
                  guard=lambda a: _window_gaps_ok(a[0], 3, 2)),
        CheckSpec("global_avg_pool", T.global_avg_pool, ((2, 3, 4, 4),)),
        CheckSpec("global_max_pool", T.global_max_pool, ((2, 3, 4, 4),),
                  guard=lambda a: _channel_gaps_ok(a[0])),
        CheckSpec("fully_connected", T.fully_connected, ((3, 4), (4, 5), (5,))),
        CheckSpec("bce_loss", lambda p: T.bce_loss(p, Tensor(bce_target)), ((2, 4),),
                  low=0.05, high=0.95),
        CheckSpec("mse_loss", T.mse_loss, ((2, 4), (2, 4))),
        CheckSpec("composite_conv_gap_fc_bce", _composite,
                  ((2, 2, 6, 6), (3, 2, 3, 3), (3,), (3, 3), (3,)),
                  guard=_composite_guard),
    ]


def run_checks(specs: Sequence[CheckSpec], seeds: Sequence[int] = (0, 1, 2, 3, 4)) -> list[CheckResult]:
    results = []
    for spec in specs:
        for seed in seeds:
            err = grad_check(spec.fn, spec.shapes, seed, guard=spec.guard, low=spec.low, high=spec.high)
            results.append(CheckResult(spec.name, seed, err))
    return results
