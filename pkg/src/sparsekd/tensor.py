"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation allocates a fresh output array and, while gradient recording
is enabled, remembers its parents plus a closure that routes the output
gradient back to them.  ``backward`` walks the recorded graph once, in
reverse topological order.  Repeated ``backward`` calls accumulate into
``grad``; call :func:`zero_grads` (or set ``grad = None``) between steps.

All math is double precision and purely numpy-deterministic: identical
inputs give bitwise-identical outputs.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .errors import ContractError, ShapeError

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (e.g. teacher forward)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """n-dimensional float64 array with an optional gradient of equal shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same data, cut off from the recorded graph."""
        return Tensor(self.data, requires_grad=False)

    def copy(self) -> "Tensor":
        t = Tensor(self.data.copy(), requires_grad=self.requires_grad)
        return t

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar used throughout the encoder and losses.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result; record parents only when a gradient can flow."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every recorded tensor reachable from ``loss``.

    ``loss`` must be a scalar produced by a recorded computation.  Gradients
    accumulate across calls.
    """
    if loss.size != 1:
        raise ContractError(
            f"backward requires a scalar loss, got shape {loss.shape}"
        )
    # Iterative DFS topological sort: graphs are deep at long sequence counts.
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise / broadcasting arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _node(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(out, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    out = a.data * c

    def bwd(g):
        _accumulate(a, g * c)

    return _node(out, (a,), bwd)


# ---------------------------------------------------------------------------
# matrix product and layout ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Stacked matrix product with numpy broadcasting on leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    return _node(out, (a, b), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def bwd(g):
        _accumulate(a, g.reshape(a.shape))

    return _node(out, (a,), bwd)


def permute(a: Tensor, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)

    def bwd(g):
        _accumulate(a, np.transpose(g, inv))

    return _node(out, (a,), bwd)


def transpose_last2(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.swapaxes(a.data, -1, -2)

    def bwd(g):
        _accumulate(a, np.swapaxes(g, -1, -2))

    return _node(out, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum())

    def bwd(g):
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _node(out, (a,), bwd)


def tmean(a: Tensor) -> Tensor:
    a = as_tensor(a)
    n = a.size
    out = np.asarray(a.data.mean())

    def bwd(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape).copy())

    return _node(out, (a,), bwd)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared elementwise differences over *all* elements."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    out = np.asarray(np.mean(diff * diff))

    def bwd(g):
        d = (2.0 / n) * diff * g
        _accumulate(a, d)
        _accumulate(b, -d)

    return _node(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

@numba.vectorize(["float64(float64)"], cache=True)
def _erf(x):  # pragma: no cover - trivial numba shim
    return math.erf(x)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _std_normal_cdf(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + _erf(x * _INV_SQRT2))


def gelu(a: Tensor) -> Tensor:
    """Exact x * Phi(x) with Phi the standard normal CDF (not the tanh fit)."""
    a = as_tensor(a)
    cdf = _std_normal_cdf(a.data)
    out = a.data * cdf

    def bwd(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
        _accumulate(a, g * (cdf + a.data * pdf))

    return _node(out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bwd(g):
        _accumulate(a, g * (1.0 - out * out))

    return _node(out, (a,), bwd)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise (last axis) softmax, stabilized by max subtraction."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        _accumulate(a, out * (g - dot))

    return _node(out, (a,), bwd)


def log_softmax_rows(a: Tensor) -> Tensor:
    """Row-wise log softmax in the stabilized form x - max - log(sum exp)."""
    a = as_tensor(a)
    m = a.data.max(axis=-1, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def bwd(g):
        soft = np.exp(out)
        _accumulate(a, g - soft * g.sum(axis=-1, keepdims=True))

    return _node(out, (a,), bwd)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Per-row normalization over the last axis (variance with 1/h divisor)."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    h = a.shape[-1]
    if gamma.shape != (h,) or beta.shape != (h,):
        raise ShapeError(
            f"layer_norm: params {gamma.shape}/{beta.shape} do not match last axis {h}"
        )
    if eps < 0:
        raise ContractError("layer_norm: eps must be >= 0")
    mean = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def bwd(g):
        _accumulate(beta, g.reshape(-1, h).sum(axis=0))
        _accumulate(gamma, (g * xhat).reshape(-1, h).sum(axis=0))
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accumulate(a, inv_std * (dxhat - m1 - xhat * m2))

    return _node(out, (a, gamma, beta), bwd)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; draws its keep mask from ``rng``."""
    a = as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout: p must be in [0, 1), got {p}")
    if p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    out = a.data * keep

    def bwd(g):
        _accumulate(a, g * keep)

    return _node(out, (a,), bwd)


# ---------------------------------------------------------------------------
# gather / indexing ops
# ---------------------------------------------------------------------------

def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather ``table[ids]`` with scatter-add gradient to the table."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    out = table.data[ids]

    def bwd(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, table.shape[-1]))

    return _node(out, (table,), bwd)


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-d tensor by integer index."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    out = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, idx, g)

    return _node(out, (a,), bwd)


def first_token(a: Tensor) -> Tensor:
    """Select position 0 along axis 1: (batch, seq, h) -> (batch, h)."""
    a = as_tensor(a)
    out = a.data[:, 0, :].copy()

    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, 0, :] = g
        _accumulate(a, full)

    return _node(out, (a,), bwd)


def nll(log_probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log likelihood of integer targets under row log-probs."""
    log_probs = as_tensor(log_probs)
    targets = np.asarray(targets)
    n = targets.shape[0]
    if log_probs.data.ndim != 2 or log_probs.shape[0] != n:
        raise ShapeError(
            f"nll: log_probs {log_probs.shape} vs targets {targets.shape}"
        )
    rows = np.arange(n)
    out = np.asarray(-log_probs.data[rows, targets].mean())

    def bwd(g):
        d = np.zeros_like(log_probs.data)
        d[rows, targets] = -g / n
        _accumulate(log_probs, d)

    return _node(out, (log_probs,), bwd)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Softmax cross-entropy against integer class labels."""
    return nll(log_softmax_rows(logits), targets)
