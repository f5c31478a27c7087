"""Small define-by-run tensor engine with reverse-mode autodiff.

Only the operations the 1D U-Net and its training loop need are provided.
Data is float64 throughout. A result records its parents and a backward
closure only when gradients are enabled and some input requires them, so
sampling loops can run under :func:`no_grad` without building a tape.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64

_state = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, parents=(), op: str = ""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = parents
        self.backward_fn = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, op, backward_fn) -> Tensor:
    needs = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, op=op)
    if needs:
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# graph


@dataclass
class Graph:
    """Executed nodes reachable from an output, in topological order."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> Graph:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor, params=None) -> Graph:
    """Populate ``.grad`` on every tensor that ``loss`` depends on.

    If ``params`` is given their gradients are reset first and any parameter
    the loss does not reach ends up with an all-zero gradient.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        for p in params:
            p.grad = None
    graph = Graph.from_output(loss)
    if loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
        for node in reversed(graph.nodes):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
    return graph


# ---------------------------------------------------------------------------
# elementwise and reductions


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), "add", bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), "mul", bw)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), "neg", lambda g: _accumulate(a, -g))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _result(a.data.reshape(shape), (a,), "reshape", lambda g: _accumulate(a, g.reshape(a.shape)))


def tensor_sum(a: Tensor) -> Tensor:
    return _result(a.data.sum(), (a,), "sum", lambda g: _accumulate(a, np.broadcast_to(g, a.shape)))


def tensor_mean(a: Tensor) -> Tensor:
    n = a.size
    return _result(a.data.mean(), (a,), "mean", lambda g: _accumulate(a, np.broadcast_to(g / n, a.shape)))


def silu(x: Tensor) -> Tensor:
    d = x.data
    with np.errstate(over="ignore"):
        sig = 1.0 / (1.0 + np.exp(-d))

    def bw(g):
        _accumulate(x, g * sig * (1.0 + d * (1.0 - sig)))

    return _result(d * sig, (x,), "silu", bw)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(idx)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", bw)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        _accumulate(pred, g * 2.0 * diff / n)
        _accumulate(target, -g * 2.0 * diff / n)

    return _result(np.mean(diff * diff), (pred, target), "mse", bw)


# ---------------------------------------------------------------------------
# layers


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for x of shape [B, N] and weight [M, N]."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        if x.requires_grad:
            _accumulate(x, g @ weight.data)
        if weight.requires_grad:
            _accumulate(weight, g.T @ x.data)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))

    return _result(out, parents, "linear", bw)


def conv_output_length(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x [B, C_in, L] with weight [C_out, C_in, K]."""
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ShapeError(f"conv1d expects 3-d input and weight, got {x.shape} and {weight.shape}")
    B, C, L = x.shape
    O, C_w, K = weight.shape
    if C != C_w:
        raise ShapeError(f"conv1d: input has {C} channels but weight expects {C_w}")
    L_out = conv_output_length(L, K, stride, padding)
    if L_out < 1:
        raise ShapeError(f"conv1d: output length {L_out} for L={L}, K={K}, stride={stride}, padding={padding}")

    span = stride * (L_out - 1) + 1
    # channel-major padded copy, then im2col: cols[c*K + k, b*L_out + l] = xpad[c, b, l*stride + k]
    xt = np.zeros((C, B, L + 2 * padding), dtype=DTYPE)
    xt[:, :, padding : padding + L] = x.data.transpose(1, 0, 2)
    cols = np.empty((C, K, B, L_out), dtype=DTYPE)
    for k in range(K):
        cols[:, k] = xt[:, :, k : k + span : stride]
    cols = cols.reshape(C * K, B * L_out)
    w2 = weight.data.reshape(O, C * K)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(O, B, L_out).transpose(1, 0, 2))
    parents = [x, weight] + ([bias] if bias is not None else [])

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(O, B * L_out)
        if weight.requires_grad:
            _accumulate(weight, (g2 @ cols.T).reshape(O, C, K))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g2.sum(axis=1))
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(C, K, B, L_out)
            dxt = np.zeros((C, B, L + 2 * padding), dtype=DTYPE)
            for k in range(K):
                dxt[:, :, k : k + span : stride] += dcols[:, k]
            _accumulate(x, dxt[:, :, padding : padding + L].transpose(1, 0, 2))

    return _result(out, parents, "conv1d", bw)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    B, C, L = x.shape
    if groups < 1 or C % groups:
        raise ValueError(f"group_norm: {C} channels not divisible into {groups} groups")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"group_norm: affine parameters must have shape ({C},)")
    xg = x.data.reshape(B, groups, -1)
    mean = xg.mean(axis=2, keepdims=True)
    centered = xg - mean
    var = (centered * centered).mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (centered * inv).reshape(B, C, L)
    out = xhat * gamma.data[None, :, None] + beta.data[None, :, None]

    def bw(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=(0, 2)))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=(0, 2)))
        if x.requires_grad:
            dxhat = (g * gamma.data[None, :, None]).reshape(B, groups, -1)
            xh = xhat.reshape(B, groups, -1)
            dx = inv * (dxhat - dxhat.mean(axis=2, keepdims=True) - xh * (dxhat * xh).mean(axis=2, keepdims=True))
            _accumulate(x, dx.reshape(B, C, L))

    return _result(out, (x, gamma, beta), "group_norm", bw)


def upsample_nearest2(x: Tensor) -> Tensor:
    B, C, L = x.shape

    def bw(g):
        _accumulate(x, g.reshape(B, C, L, 2).sum(axis=3))

    return _result(np.repeat(x.data, 2, axis=2), (x,), "upsample2", bw)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


class Adam:
    """Adam with bias-corrected moments; updates parameter data in place."""

    def __init__(self, params, lr: float = 2e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(
            m=[np.zeros_like(p.data) for p in self.params],
            v=[np.zeros_like(p.data) for p in self.params],
            learning_rate=lr,
            beta1=beta1,
            beta2=beta2,
            epsilon=eps,
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        s = self.state
        s.step_count += 1
        c1 = 1.0 - s.beta1**s.step_count
        c2 = 1.0 - s.beta2**s.step_count
        for p, m, v in zip(self.params, s.m, s.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * (g * g)
            p.data -= s.learning_rate * (m / c1) / (np.sqrt(v / c2) + s.epsilon)
