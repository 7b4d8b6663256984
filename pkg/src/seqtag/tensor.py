"""Dense tensors with reverse-mode automatic differentiation.

Everything is backed by float64 numpy arrays. A Tensor produced by an
operation remembers its parents and a backward closure; ``backward()`` on a
scalar walks that web of parent links once, in reverse topological order,
accumulating gradients into every gradient-tracked leaf. Leaves allocate a
zero gradient buffer up front, so an unused leaf reads as all-zero after
backward, and repeated backward calls accumulate until ``zero_grad``.

Broadcasting is deliberately narrow: elementwise ops accept equal shapes or
a trailing-shape operand expanded over leading axes (the ``(l, d) + (d,)``
bias pattern). Anything else raises ShapeError naming the op and shapes.

Softmax and logsumexp subtract the row max before exponentiating; the
un-scaled attention mode produces large logits and relies on it.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

DTYPE = np.float64

# Additive mask value: large enough that exp(NEG_INF - rowmax) underflows to
# exactly 0.0 in float64, small enough that arithmetic stays finite.
NEG_INF = -1e9


class Tensor:
    """A dense n-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"


def _node(data: np.ndarray, parents: Sequence[Tensor],
          bwd: Callable[[np.ndarray], None], op: str) -> Tensor:
    """Build an interior graph node; constant-folds when no parent tracks gradients."""
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    if any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = bwd
    else:
        t.requires_grad = False
        t._parents = ()
        t._backward = None
    t._op = op
    return t


def _acc(t: Tensor, g: np.ndarray) -> None:
    """Accumulate a gradient contribution into ``t.grad``."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(root: Tensor) -> None:
    """Populate gradients of every tracked leaf reachable from a scalar root."""
    if root.data.size != 1:
        raise ContractError(f"backward: root must be a scalar, got shape {root.shape}")
    if not root.requires_grad:
        raise ContractError("backward: root does not track gradients")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    _acc(root, np.ones_like(root.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out the leading axes a trailing-shape operand was expanded over."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


def _conform(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape:
        return
    if b.ndim < a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    if a.ndim < b.ndim and b.shape[b.ndim - a.ndim:] == a.shape:
        return
    raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} do not conform")


def add(a: Tensor, b: Tensor) -> Tensor:
    _conform("add", a.data, b.data)
    out = a.data + b.data

    def bwd(g: np.ndarray) -> None:
        _acc(a, _reduce_to(g, a.shape))
        _acc(b, _reduce_to(g, b.shape))

    return _node(out, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _conform("sub", a.data, b.data)
    out = a.data - b.data

    def bwd(g: np.ndarray) -> None:
        _acc(a, _reduce_to(g, a.shape))
        _acc(b, _reduce_to(-g, b.shape))

    return _node(out, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _conform("mul", a.data, b.data)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g: np.ndarray) -> None:
        _acc(a, _reduce_to(g * bd, a.shape))
        _acc(b, _reduce_to(g * ad, b.shape))

    return _node(out, (a, b), bwd, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = a.data * c

    def bwd(g: np.ndarray) -> None:
        _acc(a, g * c)

    return _node(out, (a,), bwd, "scale")


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ShapeError(f"matmul: only 1-d/2-d operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def bwd(g: np.ndarray) -> None:
        if ad.ndim == 2 and bd.ndim == 2:
            _acc(a, g @ bd.T)
            _acc(b, ad.T @ g)
        elif ad.ndim == 2 and bd.ndim == 1:
            _acc(a, np.outer(g, bd))
            _acc(b, ad.T @ g)
        elif ad.ndim == 1 and bd.ndim == 2:
            _acc(a, bd @ g)
            _acc(b, np.outer(ad, g))
        else:
            _acc(a, g * bd)
            _acc(b, g * ad)

    return _node(out, (a, b), bwd, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
    out = a.data.T

    def bwd(g: np.ndarray) -> None:
        _acc(a, g.T)

    return _node(out, (a,), bwd, "transpose")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}")
    out = a.data.reshape(shape)
    orig = a.shape

    def bwd(g: np.ndarray) -> None:
        _acc(a, g.reshape(orig))

    return _node(out, (a,), bwd, "reshape")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    dim = a.data.shape[axis]
    if start < 0 or length < 1 or start + length > dim:
        raise ShapeError(
            f"narrow: slice [{start}:{start + length}) out of range for axis {axis} of {a.shape}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx]

    def bwd(g: np.ndarray) -> None:
        gp = np.zeros_like(a.data)
        gp[idx] = g
        _acc(a, gp)

    return _node(out, (a,), bwd, "narrow")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    datas = [t.data for t in tensors]
    base = list(datas[0].shape)
    for d in datas[1:]:
        other = list(d.shape)
        if len(other) != len(base) or any(
                o != b for i, (o, b) in enumerate(zip(other, base)) if i != axis):
            raise ShapeError(
                f"concat: shape {d.shape} incompatible with {datas[0].shape} along axis {axis}")
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]

    def bwd(g: np.ndarray) -> None:
        offset = 0
        for t, s in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + s)
            _acc(t, g[tuple(idx)])
            offset += s

    return _node(out, tuple(tensors), bwd, "concat")


def split(a: Tensor, n_parts: int, axis: int = -1) -> list[Tensor]:
    """Split into ``n_parts`` equal chunks along ``axis``."""
    axis = axis % a.data.ndim
    dim = a.data.shape[axis]
    if n_parts < 1 or dim % n_parts != 0:
        raise ShapeError(f"split: axis {axis} of {a.shape} not divisible into {n_parts} parts")
    width = dim // n_parts
    return [narrow(a, axis, i * width, width) for i in range(n_parts)]


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = a.data * mask

    def bwd(g: np.ndarray) -> None:
        _acc(a, g * mask)

    return _node(out, (a,), bwd, "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g: np.ndarray) -> None:
        _acc(a, g * out * (1.0 - out))

    return _node(out, (a,), bwd, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g: np.ndarray) -> None:
        _acc(a, g * (1.0 - out * out))

    return _node(out, (a,), bwd, "tanh")


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def bwd(g: np.ndarray) -> None:
        _acc(a, np.broadcast_to(g, a.shape))

    return _node(out, (a,), bwd, "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.mean())

    def bwd(g: np.ndarray) -> None:
        _acc(a, np.broadcast_to(g / n, a.shape))

    return _node(out, (a,), bwd, "mean")


def softmax_lastdim(a: Tensor) -> Tensor:
    x = a.data
    if x.ndim < 1:
        raise ShapeError("softmax_lastdim: scalar input has no last axis")
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g: np.ndarray) -> None:
        inner = (g * out).sum(axis=-1, keepdims=True)
        _acc(a, out * (g - inner))

    return _node(out, (a,), bwd, "softmax_lastdim")


def logsumexp_lastdim(a: Tensor) -> Tensor:
    x = a.data
    if x.ndim < 1:
        raise ShapeError("logsumexp_lastdim: scalar input has no last axis")
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=-1, keepdims=True)
    out = (np.log(s) + m).reshape(x.shape[:-1])
    soft = e / s

    def bwd(g: np.ndarray) -> None:
        _acc(a, soft * np.expand_dims(g, -1))

    return _node(out, (a,), bwd, "logsumexp_lastdim")


def max_pool_over_axis(a: Tensor, axis: int = 0) -> Tensor:
    x = a.data
    axis = axis % x.ndim
    if x.shape[axis] == 0:
        raise ShapeError(f"max_pool_over_axis: empty axis {axis} in shape {a.shape}")
    out = x.max(axis=axis)
    arg = np.expand_dims(x.argmax(axis=axis), axis)

    def bwd(g: np.ndarray) -> None:
        gp = np.zeros_like(x)
        np.put_along_axis(gp, arg, np.expand_dims(g, axis), axis)
        _acc(a, gp)

    return _node(out, (a,), bwd, "max_pool_over_axis")


def embedding_lookup(matrix: Tensor, indices: np.ndarray) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"embedding_lookup: indices must be 1-d, got shape {idx.shape}")
    n_rows = matrix.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise LookupError(
            f"embedding_lookup: index out of range for table with {n_rows} rows")
    out = matrix.data[idx]

    def bwd(g: np.ndarray) -> None:
        gm = np.zeros_like(matrix.data)
        np.add.at(gm, idx, g)
        _acc(matrix, gm)

    return _node(out, (matrix,), bwd, "embedding_lookup")


def gather(a: Tensor, flat_indices: np.ndarray, shape: tuple[int, ...]) -> Tensor:
    """Pick elements of the flattened tensor and lay them out as ``shape``."""
    idx = np.asarray(flat_indices, dtype=np.int64).ravel()
    if int(np.prod(shape)) != idx.size:
        raise ShapeError(f"gather: {idx.size} indices cannot fill shape {tuple(shape)}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.size):
        raise LookupError(f"gather: flat index out of range for {a.data.size} elements")
    flat = a.data.ravel()
    out = flat[idx].reshape(shape)

    def bwd(g: np.ndarray) -> None:
        gf = np.zeros(a.data.size, dtype=DTYPE)
        np.add.at(gf, idx, g.ravel())
        _acc(a, gf.reshape(a.shape))

    return _node(out, (a,), bwd, "gather")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.data.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias shapes {gain.shape}/{bias.shape} do not match last dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = xhat * gain.data + bias.data
    gd = gain.data

    def bwd(g: np.ndarray) -> None:
        _acc(gain, _reduce_to(g * xhat, gain.shape))
        _acc(bias, _reduce_to(g, bias.shape))
        dxhat = g * gd
        term = dxhat - dxhat.mean(axis=-1, keepdims=True) \
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        _acc(x, inv_std * term)

    return _node(out, (x, gain, bias), bwd, "layer_norm")


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None,
            training: bool) -> Tensor:
    """Inverted dropout: identity in evaluation mode, scaled by 1/keep in training."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ContractError("dropout: training mode requires an rng")
    keep = 1.0 - rate
    mask = (rng.random(a.shape) < keep).astype(DTYPE) / keep
    out = a.data * mask

    def bwd(g: np.ndarray) -> None:
        _acc(a, g * mask)

    return _node(out, (a,), bwd, "dropout")


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor,
               epsilon: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be deterministic (dropout disabled) and scalar-valued. The
    relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-10)
    taken over all elements of ``x``.
    """
    if not (1e-8 <= epsilon <= 1e-4):
        raise ContractError(f"grad_check: epsilon {epsilon} outside [1e-8, 1e-4]")
    if not x.requires_grad:
        raise ContractError("grad_check: x must track gradients")

    x.zero_grad()
    out = f(x)
    if out.data.size != 1:
        raise ContractError(f"grad_check: f returned shape {out.shape}, expected a scalar")
    backward(out)
    analytic = x.grad.copy()

    numeric = np.zeros_like(x.data)
    for idx in np.ndindex(x.data.shape):
        orig = x.data[idx]
        x.data[idx] = orig + epsilon
        fp = float(f(x).data.reshape(()))
        x.data[idx] = orig - epsilon
        fm = float(f(x).data.reshape(()))
        x.data[idx] = orig
        numeric[idx] = (fp - fm) / (2.0 * epsilon)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-10)
    return float(np.max(np.abs(analytic - numeric) / denom))
