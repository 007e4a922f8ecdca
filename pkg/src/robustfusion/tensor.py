"""Minimal reverse-mode autodiff over dense float64 arrays.

Only the handful of operations the fusion networks need are provided. Every
op takes and returns :class:`Tensor`; gradients flow back through closures
recorded on the outputs when :meth:`Tensor.backward` is called.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are structurally incompatible."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: Sequence["Tensor"] = (),
        _backward: Optional[Callable[[np.ndarray], None]] = None,
    ):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = tuple(_parents) if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Backpropagate from this tensor; ``grad`` defaults to ones."""
        if grad is None:
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        # interior nodes get fresh buffers; leaves accumulate across calls
        for node in order:
            if node._backward is not None:
                node.grad = None
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node.grad = None


def _check_image(x: Tensor, name: str = "input") -> None:
    if x.data.ndim != 3:
        raise ShapeError(f"{name} must be [C,H,W], got shape {x.shape}")


def same_padding(kernel: int, dilation: int) -> int:
    return dilation * (kernel - 1) // 2


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    dilation: int = 1,
    padding: str = "same",
) -> Tensor:
    """2-D cross-correlation of a [Cin,H,W] input with a [Cout,Cin,kh,kw] kernel."""
    _check_image(x)
    if kernel.data.ndim != 4:
        raise ShapeError(f"kernel must be [Cout,Cin,kh,kw], got {kernel.shape}")
    cout, cin, kh, kw = kernel.shape
    if x.shape[0] != cin:
        raise ShapeError(f"input has {x.shape[0]} channels, kernel expects {cin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("kernel extents must be odd")
    if stride < 1 or dilation < 1:
        raise ValueError("stride and dilation must be >= 1")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias must have shape ({cout},), got {bias.shape}")
    if padding == "same":
        pad_h, pad_w = same_padding(kh, dilation), same_padding(kw, dilation)
    elif padding == "valid":
        pad_h = pad_w = 0
    else:
        raise ValueError(f"unknown padding mode {padding!r}")

    _, h, w = x.shape
    out_h = (h + 2 * pad_h - dilation * (kh - 1) - 1) // stride + 1
    out_w = (w + 2 * pad_w - dilation * (kw - 1) - 1) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError("input too small for kernel")

    xp = np.pad(x.data, ((0, 0), (pad_h, pad_h), (pad_w, pad_w))) if (pad_h or pad_w) else x.data
    cols = np.empty((cin, kh, kw, out_h, out_w), dtype=DTYPE)
    h_span = stride * (out_h - 1) + 1
    w_span = stride * (out_w - 1) + 1
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation, j * dilation
            cols[:, i, j] = xp[:, r0 : r0 + h_span : stride, c0 : c0 + w_span : stride]
    cols2 = cols.reshape(cin * kh * kw, out_h * out_w)
    wmat = kernel.data.reshape(cout, -1)
    out = wmat @ cols2
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(cout, out_h, out_w)

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def _backward(g: np.ndarray) -> None:
        g2 = g.reshape(cout, -1)
        if kernel.requires_grad:
            kernel._accumulate((g2 @ cols2.T).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=1))
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape(cin, kh, kw, out_h, out_w)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    r0, c0 = i * dilation, j * dilation
                    dxp[:, r0 : r0 + h_span : stride, c0 : c0 + w_span : stride] += dcols[:, i, j]
            x._accumulate(dxp[:, pad_h : pad_h + h, pad_w : pad_w + w])

    return Tensor(out, _parents=parents, _backward=_backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def _backward(g):
        x._accumulate(g * mask)

    return Tensor(out, _parents=(x,), _backward=_backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add needs equal shapes, got {a.shape} and {b.shape}")

    def _backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return Tensor(a.data + b.data, _parents=(a, b), _backward=_backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack channels of ``a`` then ``b``."""
    _check_image(a, "a")
    _check_image(b, "b")
    if a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"spatial mismatch: {a.shape[1:]} vs {b.shape[1:]}")
    ca = a.shape[0]

    def _backward(g):
        if a.requires_grad:
            a._accumulate(g[:ca])
        if b.requires_grad:
            b._accumulate(g[ca:])

    return Tensor(np.concatenate([a.data, b.data], axis=0), _parents=(a, b), _backward=_backward)


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Align-corners linear interpolation weights, shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in), dtype=DTYPE)
    if n_out == 1 or n_in == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - frac
    m[rows, lo + 1] += frac
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    _check_image(x)
    if out_h < 1 or out_w < 1:
        raise ValueError("output extents must be >= 1")
    _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x
    ry = interp_matrix(h, out_h)
    rx = interp_matrix(w, out_w)
    out = ry @ (x.data @ rx.T)

    def _backward(g):
        x._accumulate(ry.T @ (g @ rx))

    return Tensor(out, _parents=(x,), _backward=_backward)


def resize_array(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Non-differentiable bilinear resize of a [C,H,W] array."""
    _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x.copy()
    return interp_matrix(h, out_h) @ (x @ interp_matrix(w, out_w).T)


def nearest_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize of the last two axes, sampling source pixel centres."""
    h, w = x.shape[-2:]
    rows = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(int), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(int), w - 1)
    return x[..., rows[:, None], cols[None, :]]


def avg_downsample(x: Tensor, factor: int) -> Tensor:
    _check_image(x)
    c, h, w = x.shape
    if factor < 1 or h % factor or w % factor:
        raise ShapeError(f"extents {h}x{w} not divisible by {factor}")
    if factor == 1:
        return x
    out = x.data.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))
    scale = 1.0 / (factor * factor)

    def _backward(g):
        x._accumulate(np.repeat(np.repeat(g, factor, axis=1), factor, axis=2) * scale)

    return Tensor(out, _parents=(x,), _backward=_backward)


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray, ignore_id: int = 255
) -> tuple[float, np.ndarray]:
    """Mean pixel cross-entropy and its gradient w.r.t. ``logits``.

    ``logits`` is [C,H,W], ``labels`` is [H,W] of ints. Pixels labelled
    ``ignore_id`` contribute neither loss nor gradient.
    """
    c = logits.shape[0]
    if labels.shape != logits.shape[1:]:
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    valid = labels != ignore_id
    count = int(valid.sum())
    if count == 0:
        raise ValueError("every pixel is ignored; mean loss undefined")
    if labels[valid].max() >= c or labels[valid].min() < 0:
        raise ValueError("label id out of range")

    shifted = logits - logits.max(axis=0, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=0)
    probs = exp / denom
    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(shifted, safe[None], axis=0)[0]
    nll = np.log(denom) - picked
    loss = float(nll[valid].sum() / count)

    grad = probs
    np.put_along_axis(grad, safe[None], np.take_along_axis(grad, safe[None], axis=0) - 1.0, axis=0)
    grad *= valid[None] / count
    return loss, grad


def cross_entropy(logits: Tensor, labels: np.ndarray, ignore_id: int = 255) -> Tensor:
    """Graph-connected wrapper of :func:`softmax_cross_entropy` (scalar output)."""
    loss, grad = softmax_cross_entropy(logits.data, labels, ignore_id)

    def _backward(g):
        logits._accumulate(grad * g)

    return Tensor(np.array(loss), _parents=(logits,), _backward=_backward)


def scale(x: Tensor, factor: float) -> Tensor:
    def _backward(g):
        x._accumulate(g * factor)

    return Tensor(x.data * factor, _parents=(x,), _backward=_backward)


def sum_scalars(terms: Sequence[Tensor]) -> Tensor:
    total = np.array(sum(float(t.data) for t in terms))

    def _backward(g):
        for t in terms:
            if t.requires_grad:
                t._accumulate(g)

    return Tensor(total, _parents=tuple(terms), _backward=_backward)


@dataclass
class ParamState:
    """A trainable tensor with its momentum buffer."""

    name: str
    value: Tensor
    velocity: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value.requires_grad = True
        if self.velocity is None:
            self.velocity = np.zeros_like(self.value.data)

    @property
    def gradient(self) -> np.ndarray:
        if self.value.grad is None:
            return np.zeros_like(self.value.data)
        return self.value.grad

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def zero_grad(self) -> None:
        self.value.grad = None


def sgd_step(
    params: Sequence[ParamState],
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 0.0001,
) -> None:
    """In-place momentum SGD with L2 weight decay; clears gradients."""
    for p in params:
        v = p.velocity
        v *= momentum
        v += p.gradient
        if weight_decay:
            v += weight_decay * p.value.data
        p.value.data -= lr * v
        p.zero_grad()


def poly_lr(base_lr: float, iteration: int, max_iter: int, power: float = 0.9) -> float:
    if max_iter <= 0:
        raise ValueError("max_iter must be positive")
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    return base_lr * (1.0 - iteration / max_iter) ** power
