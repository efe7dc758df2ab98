"""Minimal reverse-mode autodiff on numpy arrays.

A Tensor wraps an ndarray plus an optional gradient. Operations build a
DAG of parents and a per-node backward closure; ``backward(loss)`` walks
the graph in reverse topological order, accumulating into ``.grad`` with
+=. Accumulation is deliberate: calling backward twice doubles the
gradients, and callers zero grads between steps.

Float32 is the working precision; float64 graphs are used for
finite-difference verification. Broadcasting is limited to scalars and
per-channel bias reshapes done inside the ops; shapes otherwise match.
"""

from __future__ import annotations

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in _FLOAT_DTYPES else np.float32
        arr = np.asarray(arr, dtype=dtype)
        # ascontiguousarray would promote 0-d scalars to 1-d
        self.data = arr if arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # arithmetic sugar used by the losses
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def make_node(data, parents, backward) -> Tensor:
    """Result tensor wired into the graph if any parent needs gradients."""
    out = Tensor(data, dtype=data.dtype)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def backward(loss: Tensor) -> None:
    """Reverse-accumulate d(loss)/d(node) into every reachable leaf .grad.

    Interior node gradients are transient per call; leaf gradients add
    across calls, so running backward twice doubles them.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    # iterative postorder topological sort
    topo, visited, stack = [], set(), [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    for node in topo:
        if node._backward is not None:
            node.grad = None  # interior state from a previous pass must not replay
    loss.accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def stop_gradient(x: Tensor) -> Tensor:
    """A constant copy of x: gradient does not flow through it."""
    return Tensor(x.data, requires_grad=False, dtype=x.data.dtype)


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    scalar_b, scalar_a = b.data.ndim == 0, a.data.ndim == 0
    if not (scalar_a or scalar_b) and a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g.sum() if scalar_a and g.ndim else g)
        if b.requires_grad:
            b.accumulate(g.sum() if scalar_b and g.ndim else g)

    return make_node(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    scalar_b, scalar_a = b.data.ndim == 0, a.data.ndim == 0
    if not (scalar_a or scalar_b) and a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            ga = g * b.data
            a.accumulate(ga.sum() if scalar_a and ga.ndim else ga)
        if b.requires_grad:
            gb = g * a.data
            b.accumulate(gb.sum() if scalar_b and gb.ndim else gb)

    return make_node(out_data, (a, b), bwd)


def tsum(a: Tensor) -> Tensor:
    out_data = a.data.sum()

    def bwd(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g, a.data.shape).astype(a.data.dtype))

    return make_node(np.asarray(out_data), (a,), bwd)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out_data = a.data.mean()

    def bwd(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g / n, a.data.shape).astype(a.data.dtype))

    return make_node(np.asarray(out_data), (a,), bwd)


def getitem(a: Tensor, idx) -> Tensor:
    out_data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a.accumulate(full)

    return make_node(np.ascontiguousarray(out_data), (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.data.shape))

    return make_node(out_data, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out_data = np.where(mask, a.data, 0).astype(a.data.dtype)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * mask)

    return make_node(out_data, (a,), bwd)


def softmax_over_axes(a: Tensor, axes) -> Tensor:
    """Normalized exponential over ``axes`` jointly; other axes batch."""
    axes = tuple(axes) if isinstance(axes, (tuple, list)) else (axes,)
    shifted = a.data - a.data.max(axis=axes, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axes, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(y * (g - (g * y).sum(axis=axes, keepdims=True)))

    return make_node(y, (a,), bwd)


def mse_loss(a, b) -> Tensor:
    """Mean squared error over all elements; scalar output."""
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    if a.data.shape != b.data.shape:
        raise ValueError(f"mse shape mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    out_data = np.asarray((diff * diff).mean())
    n = diff.size

    def bwd(g):
        scale = g * 2.0 / n
        if a.requires_grad:
            a.accumulate(scale * diff)
        if b.requires_grad:
            b.accumulate(-scale * diff)

    return make_node(out_data, (a, b), bwd)
