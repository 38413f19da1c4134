"""Reverse-mode automatic differentiation over dense rank-4 tensors.

Every value is a (batch, channels, height, width) array. Each op records
its parents and a backward closure; ``backward()`` topologically sorts the
recorded graph (the tape) and walks it in reverse, accumulating gradients
into every ``requires_grad`` leaf. The op set is fixed: exactly what the
dual-branch network and the loss terms need, with no general broadcasting.

Precision is carried by the arrays themselves: float32 for training,
float64 for gradient verification. Mixed-precision graphs are rejected.
"""

from __future__ import annotations

import numpy as np

from . import kernels

__all__ = [
    "Tensor",
    "tensor",
    "backward",
    "conv2d",
    "maxpool2",
    "upconv2",
    "tanh",
    "sigmoid",
    "relu",
    "add",
    "sub",
    "mul",
    "scale",
    "shift",
    "square",
    "absval",
    "concat_channels",
    "split_channels",
    "global_avgpool",
    "global_maxpool",
    "channel_mean",
    "channel_max",
    "dense",
    "scalar_mul",
    "broadcast_mul_channel",
    "broadcast_mul_spatial",
    "masked_mean",
    "linear_op",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A node in the autodiff graph: value, gradient slot, dependencies."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        data = np.asarray(data)
        if data.dtype.type not in _FLOAT_DTYPES:
            data = data.astype(np.float32)
        if data.ndim != 4:
            raise ValueError(f"tensors are rank-4 (B,C,H,W), got shape {data.shape}")
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    """Wrap an array as a leaf tensor; 2-D (H,W) and 3-D (C,H,W) inputs are
    promoted to rank 4 with singleton leading axes."""
    arr = np.asarray(data, dtype=dtype)
    while arr.ndim < 4:
        arr = arr[None]
    return Tensor(arr, requires_grad=requires_grad)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _node(data, parents, backward_fn) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=requires,
        parents=tuple(parents) if requires else (),
        backward_fn=backward_fn if requires else None,
    )


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ValueError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable requires_grad leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward() requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    # Iterative post-order DFS builds the tape; reverse order is the pass.
    tape = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            tape.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape):
        if node._backward is not None:
            node._backward()


# ---------------------------------------------------------------------------
# Structural and arithmetic ops
# ---------------------------------------------------------------------------

def add(x: Tensor, y: Tensor) -> Tensor:
    _check_same(x, y, "add")
    out = _node(x.data + y.data, (x, y), None)

    def _bw():
        _accum(x, out.grad)
        _accum(y, out.grad)

    out._backward = _bw if out.requires_grad else None
    return out


def sub(x: Tensor, y: Tensor) -> Tensor:
    _check_same(x, y, "sub")
    out = _node(x.data - y.data, (x, y), None)

    def _bw():
        _accum(x, out.grad)
        _accum(y, -out.grad)

    out._backward = _bw if out.requires_grad else None
    return out


def mul(x: Tensor, y: Tensor) -> Tensor:
    _check_same(x, y, "mul")
    out = _node(x.data * y.data, (x, y), None)

    def _bw():
        _accum(x, out.grad * y.data)
        _accum(y, out.grad * x.data)

    out._backward = _bw if out.requires_grad else None
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    out = _node(x.data * c, (x,), None)

    def _bw():
        _accum(x, out.grad * c)

    out._backward = _bw if out.requires_grad else None
    return out


def shift(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    out = _node(x.data + c, (x,), None)

    def _bw():
        _accum(x, out.grad)

    out._backward = _bw if out.requires_grad else None
    return out


def square(x: Tensor) -> Tensor:
    out = _node(x.data * x.data, (x,), None)

    def _bw():
        _accum(x, 2.0 * x.data * out.grad)

    out._backward = _bw if out.requires_grad else None
    return out


def absval(x: Tensor) -> Tensor:
    """Elementwise |x|; subgradient at 0 is 0."""
    out = _node(np.abs(x.data), (x,), None)

    def _bw():
        _accum(x, np.sign(x.data) * out.grad)

    out._backward = _bw if out.requires_grad else None
    return out


def concat_channels(parts) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ValueError("concat_channels: empty input")
    base = parts[0]
    for p in parts[1:]:
        if p.shape[0] != base.shape[0] or p.shape[2:] != base.shape[2:]:
            raise ValueError(f"concat_channels: shape mismatch {p.shape} vs {base.shape}")
        if p.dtype != base.dtype:
            raise ValueError("concat_channels: dtype mismatch")
    out = _node(np.concatenate([p.data for p in parts], axis=1), parts, None)
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def _bw():
        for p, off in zip(parts, offsets):
            _accum(p, out.grad[:, off:off + p.shape[1]])

    out._backward = _bw if out.requires_grad else None
    return out


def split_channels(x: Tensor, sizes) -> tuple:
    sizes = tuple(int(s) for s in sizes)
    if sum(sizes) != x.shape[1]:
        raise ValueError(f"split_channels: sizes {sizes} do not sum to {x.shape[1]} channels")
    outs = []
    off = 0
    for size in sizes:
        lo = off
        out = _node(np.ascontiguousarray(x.data[:, lo:lo + size]), (x,), None)

        def _bw(out=out, lo=lo, size=size):
            g = np.zeros_like(x.data)
            g[:, lo:lo + size] = out.grad
            _accum(x, g)

        out._backward = _bw if out.requires_grad else None
        outs.append(out)
        off += size
    return tuple(outs)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)  # numerically stable form of (e^x - e^-x)/(e^x + e^-x)
    out = _node(y, (x,), None)

    def _bw():
        _accum(x, (1.0 - y * y) * out.grad)

    out._backward = _bw if out.requires_grad else None
    return out


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    y[~pos] = e / (1.0 + e)
    out = _node(y, (x,), None)

    def _bw():
        _accum(x, y * (1.0 - y) * out.grad)

    out._backward = _bw if out.requires_grad else None
    return out


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is 0."""
    out = _node(np.maximum(x.data, 0), (x,), None)

    def _bw():
        _accum(x, (x.data > 0) * out.grad)

    out._backward = _bw if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# Convolution / pooling (kernel-backed)
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b, padding: int) -> Tensor:
    """Cross-correlation with zero padding plus optional bias.

    w is (out_ch, in_ch, k, k) with odd k; padding (k-1)//2 preserves the
    spatial size.
    """
    O, Cin, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d: kernel must be square with odd size, got {w.shape}")
    if x.shape[1] != Cin:
        raise ValueError(f"conv2d: input has {x.shape[1]} channels, weight expects {Cin}")
    if b is not None and b.shape != (1, O, 1, 1):
        raise ValueError(f"conv2d: bias shape {b.shape} != (1, {O}, 1, 1)")
    bias = b.data[0, :, 0, 0] if b is not None else None
    y = kernels.conv2d_forward(x.data, w.data, bias, padding)
    parents = (x, w) if b is None else (x, w, b)
    out = _node(y, parents, None)

    def _bw():
        gx, gw, gb = kernels.conv2d_backward(
            x.data, w.data, out.grad, padding, with_bias=b is not None
        )
        _accum(x, gx)
        _accum(w, gw)
        if b is not None:
            _accum(b, gb[None, :, None, None])

    out._backward = _bw if out.requires_grad else None
    return out


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; gradient routes to the first max in
    row-major order within each block."""
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"maxpool2: spatial dims must be even, got {H}x{W}")
    y, idx = kernels.maxpool2_forward(x.data)
    out = _node(y, (x,), None)

    def _bw():
        _accum(x, kernels.maxpool2_backward(out.grad, idx))

    out._backward = _bw if out.requires_grad else None
    return out


def upconv2(x: Tensor, w: Tensor, b) -> Tensor:
    """2x2 transposed convolution, stride 2; doubles H and W.

    w is (in_ch, out_ch, 2, 2); the backward pass is the adjoint map.
    """
    Cin, O = w.shape[0], w.shape[1]
    if w.shape[2:] != (2, 2):
        raise ValueError(f"upconv2: kernel must be 2x2, got {w.shape}")
    if x.shape[1] != Cin:
        raise ValueError(f"upconv2: input has {x.shape[1]} channels, weight expects {Cin}")
    if b is not None and b.shape != (1, O, 1, 1):
        raise ValueError(f"upconv2: bias shape {b.shape} != (1, {O}, 1, 1)")
    bias = b.data[0, :, 0, 0] if b is not None else None
    y = kernels.upconv2_forward(x.data, w.data, bias)
    parents = (x, w) if b is None else (x, w, b)
    out = _node(y, parents, None)

    def _bw():
        gx, gw, gb = kernels.upconv2_backward(
            x.data, w.data, out.grad, with_bias=b is not None
        )
        _accum(x, gx)
        _accum(w, gw)
        if b is not None:
            _accum(b, gb[None, :, None, None])

    out._backward = _bw if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# Reductions and attention helpers
# ---------------------------------------------------------------------------

def global_avgpool(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    out = _node(x.data.mean(axis=(2, 3), keepdims=True), (x,), None)

    def _bw():
        _accum(x, np.broadcast_to(out.grad / (H * W), x.shape))

    out._backward = _bw if out.requires_grad else None
    return out


def global_maxpool(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    flat = x.data.reshape(B, C, H * W)
    arg = flat.argmax(axis=-1)  # first max in row-major order
    y = np.take_along_axis(flat, arg[..., None], axis=-1).reshape(B, C, 1, 1)
    out = _node(y, (x,), None)

    def _bw():
        g = np.zeros((B, C, H * W), dtype=x.data.dtype)
        np.put_along_axis(g, arg[..., None], out.grad.reshape(B, C, 1), axis=-1)
        _accum(x, g.reshape(B, C, H, W))

    out._backward = _bw if out.requires_grad else None
    return out


def channel_mean(x: Tensor) -> Tensor:
    C = x.shape[1]
    out = _node(x.data.mean(axis=1, keepdims=True), (x,), None)

    def _bw():
        _accum(x, np.broadcast_to(out.grad / C, x.shape))

    out._backward = _bw if out.requires_grad else None
    return out


def channel_max(x: Tensor) -> Tensor:
    arg = x.data.argmax(axis=1)[:, None]  # first max wins on ties
    y = np.take_along_axis(x.data, arg, axis=1)
    out = _node(y, (x,), None)

    def _bw():
        g = np.zeros_like(x.data)
        np.put_along_axis(g, arg, out.grad, axis=1)
        _accum(x, g)

    out._backward = _bw if out.requires_grad else None
    return out


def dense(x: Tensor, w: Tensor, b) -> Tensor:
    """Fully connected layer on (B, C, 1, 1) descriptors; w is (1, 1, out, in)."""
    if x.shape[2:] != (1, 1):
        raise ValueError(f"dense: expects (B, C, 1, 1) input, got {x.shape}")
    if w.shape[0] != 1 or w.shape[1] != 1:
        raise ValueError(f"dense: weight is stored (1, 1, out, in), got {w.shape}")
    out_f, in_f = w.shape[2], w.shape[3]
    if x.shape[1] != in_f:
        raise ValueError(f"dense: input has {x.shape[1]} features, weight expects {in_f}")
    w2 = w.data[0, 0]
    x2 = x.data[:, :, 0, 0]
    y2 = x2 @ w2.T
    if b is not None:
        if b.shape != (1, out_f, 1, 1):
            raise ValueError(f"dense: bias shape {b.shape} != (1, {out_f}, 1, 1)")
        y2 = y2 + b.data[0, :, 0, 0]
    parents = (x, w) if b is None else (x, w, b)
    out = _node(y2[:, :, None, None], parents, None)

    def _bw():
        g2 = out.grad[:, :, 0, 0]
        _accum(x, (g2 @ w2)[:, :, None, None])
        _accum(w, (g2.T @ x2)[None, None])
        if b is not None:
            _accum(b, g2.sum(axis=0)[None, :, None, None])

    out._backward = _bw if out.requires_grad else None
    return out


def scalar_mul(x: Tensor, s: Tensor) -> Tensor:
    """Multiply x by a learnable scalar tensor of shape (1, 1, 1, 1)."""
    if s.shape != (1, 1, 1, 1):
        raise ValueError(f"scalar_mul: scalar tensor must be (1,1,1,1), got {s.shape}")
    out = _node(x.data * s.data, (x, s), None)

    def _bw():
        _accum(x, out.grad * s.data)
        _accum(s, (out.grad * x.data).sum().reshape(1, 1, 1, 1))

    out._backward = _bw if out.requires_grad else None
    return out


def broadcast_mul_channel(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply x (B,C,H,W) by a per-channel gate (B,C,1,1)."""
    B, C, H, W = x.shape
    if gate.shape != (B, C, 1, 1):
        raise ValueError(f"broadcast_mul_channel: gate shape {gate.shape} != ({B},{C},1,1)")
    out = _node(x.data * gate.data, (x, gate), None)

    def _bw():
        _accum(x, out.grad * gate.data)
        _accum(gate, (out.grad * x.data).sum(axis=(2, 3), keepdims=True))

    out._backward = _bw if out.requires_grad else None
    return out


def broadcast_mul_spatial(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply x (B,C,H,W) by a per-location gate (B,1,H,W)."""
    B, C, H, W = x.shape
    if gate.shape != (B, 1, H, W):
        raise ValueError(f"broadcast_mul_spatial: gate shape {gate.shape} != ({B},1,{H},{W})")
    out = _node(x.data * gate.data, (x, gate), None)

    def _bw():
        _accum(x, out.grad * gate.data)
        _accum(gate, (out.grad * x.data).sum(axis=1, keepdims=True))

    out._backward = _bw if out.requires_grad else None
    return out


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of x over cells where mask is True; returns a (1,1,1,1) scalar.

    The mask is a constant: no gradient flows through it.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ValueError(f"masked_mean: mask shape {mask.shape} != {x.shape}")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("masked_mean: mask selects zero cells")
    val = x.data[mask].sum() / x.data.dtype.type(n)
    out = _node(np.full((1, 1, 1, 1), val, dtype=x.data.dtype), (x,), None)

    def _bw():
        g = out.grad.reshape(())[()] / x.data.dtype.type(n)
        _accum(x, np.where(mask, g, x.data.dtype.type(0.0)))

    out._backward = _bw if out.requires_grad else None
    return out


def linear_op(x: Tensor, fn, adjoint) -> Tensor:
    """Internal extension point for fixed linear maps (finite-difference
    stencils): fn computes y = A x, adjoint computes A^T g."""
    out = _node(fn(x.data), (x,), None)

    def _bw():
        _accum(x, adjoint(out.grad))

    out._backward = _bw if out.requires_grad else None
    return out
