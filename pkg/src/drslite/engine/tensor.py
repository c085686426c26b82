"""Minimal reverse-mode automatic differentiation over numpy storage.

A :class:`Tensor` wraps a float32 (or float64) array.  Operations executed
while a :class:`Tape` is active record a backward rule; :func:`backward`
replays the tape in reverse order and accumulates gradients into every
participating tensor with ``requires_grad``.  Outside a tape every operation
is a pure function of its inputs, so inference can run concurrently across
samples.

Storage and arithmetic default to float32.  Gradient checking rebuilds the
same graphs in float64; all operations preserve the dtype of their inputs.

Broadcasting is restricted to numpy's singleton-expansion rules and backward
rules sum gradients over broadcast axes.
"""

from __future__ import annotations

from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

__all__ = [
    "EngineError",
    "ShapeError",
    "Tensor",
    "Tape",
    "as_tensor",
    "full",
    "set_finite_checks",
    "add",
    "mul",
    "minimum",
    "relu",
    "sigmoid",
    "reshape",
    "sum_all",
    "conv2d",
    "maxpool2d",
    "global_avg_pool",
    "global_max_pool",
    "fully_connected",
    "bce_loss",
    "mse_loss",
    "backward",
]

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_CHECK_FINITE = False


class EngineError(Exception):
    """Invalid engine usage: non-scalar loss, off-tape tensors, bad modes."""


class ShapeError(EngineError):
    """Operand shapes violate an operation's contract."""


def set_finite_checks(enabled: bool) -> None:
    """Toggle NaN/Inf checking on every operation output (debug mode)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tensor:
    """N-dimensional array of reals, optionally participating in a tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def full(shape: Sequence[int], value: float, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(tuple(shape), value, dtype=dtype), requires_grad=requires_grad)


class _Node(NamedTuple):
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], tuple[Optional[np.ndarray], ...]]


class Tape:
    """Ordered record of operations; inputs of a node always precede it."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must be exited in reverse entry order"

    def __len__(self) -> int:
        return len(self._nodes)


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _finish(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise EngineError("non-finite values in operation output")
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        tape._nodes.append(_Node(inputs, out, backward_fn))
        return out
    return Tensor(data)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes that were expanded by broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _finish(out, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = a.data * b.data

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _finish(out, (a, b), backward_fn)


def minimum(a, b) -> Tensor:
    """Elementwise minimum; on exact ties the gradient routes entirely to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "minimum")
    out = np.minimum(a.data, b.data)

    def backward_fn(g):
        take_a = a.data <= b.data
        ga = _unbroadcast(np.where(take_a, g, 0), a.shape)
        gb = _unbroadcast(np.where(take_a, 0, g), b.shape)
        return ga, gb

    return _finish(out, (a, b), backward_fn)


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0)

    def backward_fn(g):
        return (g * (x.data > 0),)

    return _finish(out, (x,), backward_fn)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward_fn(g):
        return (g * out * (1.0 - out),)

    return _finish(out, (x,), backward_fn)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    out = x.data.reshape(shape)

    def backward_fn(g):
        return (g.reshape(x.shape),)

    return _finish(out, (x,), backward_fn)


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum()

    def backward_fn(g):
        return (np.full(x.shape, float(g), dtype=x.dtype),)

    return _finish(np.asarray(out), (x,), backward_fn)


def _im2col(padded: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Gather sliding windows into [N, C, kh, kw, ho, wo]."""
    n, c = padded.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=padded.dtype)
    for i in range(kh):
        ilim = i + (ho - 1) * stride + 1
        for j in range(kw):
            jlim = j + (wo - 1) * stride + 1
            cols[:, :, i, j] = padded[:, :, i:ilim:stride, j:jlim:stride]
    return cols


def conv2d(x, weight, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [N,Cin,H,W] with [Cout,Cin,kh,kw] plus bias [Cout]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input has {cin} channels but weight expects {cin_w}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {cout} output channels")
    if kh < 1 or kw < 1 or stride < 1 or padding < 0:
        raise ShapeError("conv2d: kernel and stride must be >= 1, padding >= 0")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: non-positive output size for input {h}x{w}, kernel {kh}x{kw}")

    if padding:
        padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        padded = x.data
    cols = _im2col(padded, kh, kw, stride, ho, wo)
    cols2 = cols.reshape(n, cin * kh * kw, ho * wo)
    w2 = weight.data.reshape(cout, cin * kh * kw)
    out = np.matmul(w2[None], cols2).reshape(n, cout, ho, wo) + bias.data.reshape(1, cout, 1, 1)

    def backward_fn(g):
        gflat = g.reshape(n, cout, ho * wo)
        gw = np.matmul(gflat, cols2.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        gb = g.sum(axis=(0, 2, 3))
        gcols = np.matmul(w2.T[None], gflat).reshape(n, cin, kh, kw, ho, wo)
        gpad = np.zeros_like(padded)
        for i in range(kh):
            ilim = i + (ho - 1) * stride + 1
            for j in range(kw):
                jlim = j + (wo - 1) * stride + 1
                gpad[:, :, i:ilim:stride, j:jlim:stride] += gcols[:, :, i, j]
        if padding:
            gx = gpad[:, :, padding:padding + h, padding:padding + w]
        else:
            gx = gpad
        return gx, gw, gb

    return _finish(out, (x, weight, bias), backward_fn)


def maxpool2d(x, k: int, stride: Optional[int] = None) -> Tensor:
    """Max over k*k windows; ties route to the first element in row-major scan."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d: expected 4-d input, got {x.shape}")
    stride = k if stride is None else stride
    if k < 1 or stride < 1:
        raise ShapeError("maxpool2d: window and stride must be >= 1")
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"maxpool2d: non-positive output size for input {h}x{w}, window {k}")

    windows = _im2col(x.data, k, k, stride, ho, wo).reshape(n, c, k * k, ho, wo)
    arg = windows.argmax(axis=2)
    out = np.take_along_axis(windows, arg[:, :, None], axis=2)[:, :, 0]

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        wi, wj = arg // k, arg % k
        oy, ox = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
        sy = oy[None, None] * stride + wi
        sx = ox[None, None] * stride + wj
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        np.add.at(gx, (ni, ci, sy, sx), g)
        return (gx,)

    return _finish(out, (x,), backward_fn)


def global_avg_pool(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward_fn(g):
        return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    return _finish(out, (x,), backward_fn)


def global_max_pool(x) -> Tensor:
    """Per-channel max over H*W; ties route to the first position in scan order."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_max_pool: expected 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    arg = flat.argmax(axis=2)
    out = np.take_along_axis(flat, arg[..., None], axis=2).reshape(n, c, 1, 1)

    def backward_fn(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g.reshape(n, c, 1), axis=2)
        return (gflat.reshape(x.shape),)

    return _finish(out, (x,), backward_fn)


def fully_connected(x, weight, bias) -> Tensor:
    """Affine map: [N,K] @ [K,M] + [M]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"fully_connected: expected 2-d input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"fully_connected: inner dimensions {x.shape[1]} and {weight.shape[0]} differ")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"fully_connected: bias shape {bias.shape} does not match {weight.shape[1]} outputs")
    out = x.data @ weight.data + bias.data

    def backward_fn(g):
        return g @ weight.data.T, x.data.T @ g, g.sum(axis=0)

    return _finish(out, (x, weight, bias), backward_fn)


def bce_loss(pred, target) -> Tensor:
    """Mean binary cross-entropy; predictions are clamped to [eps, 1-eps]."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"bce_loss: prediction shape {pred.shape} != target shape {target.shape}")
    eps = pred.dtype.type(1e-7)
    p = np.clip(pred.data, eps, 1 - eps)
    t = target.data
    per_elem = -(t * np.log(p) + (1 - t) * np.log1p(-p))
    count = per_elem.size

    def backward_fn(g):
        gp = g * (p - t) / (p * (1 - p)) / count
        return gp, None

    return _finish(np.asarray(per_elem.mean()), (pred, target), backward_fn)


def mse_loss(pred, target) -> Tensor:
    """Mean of squared differences."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred.data - target.data
    count = diff.size

    def backward_fn(g):
        gp = g * 2.0 * diff / count
        return gp, -gp

    return _finish(np.asarray(np.mean(diff * diff)), (pred, target), backward_fn)


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate gradients of ``loss`` into every requires_grad tensor on the tape.

    Tensors that participate in the tape but do not influence the loss receive
    zero gradients.  Repeated calls accumulate.
    """
    if loss.data.size != 1:
        raise EngineError("loss must be a scalar tensor")
    outputs = {id(node.output) for node in tape._nodes}
    if id(loss) not in outputs:
        raise EngineError("loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    participants: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape._nodes):
        for t in node.inputs:
            participants.setdefault(id(t), t)
        g = grads.get(id(node.output))
        if g is None:
            continue
        for t, ig in zip(node.inputs, node.backward(g)):
            if ig is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
    for key, t in participants.items():
        if not t.requires_grad:
            continue
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(t.data)
        t.grad = g if t.grad is None else t.grad + g
