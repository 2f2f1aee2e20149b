"""Small dense-tensor engine with reverse-mode differentiation.

Tensors wrap numpy arrays. Every differentiable op records its parents and a
backward closure; ``Tensor.backward`` walks the resulting DAG in reverse
topological order and accumulates gradients. Layers (Linear, LayerNorm,
multi-head attention, ...) and the AdamW optimizer live here too, since every
model module builds on them.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

_DTYPE = np.float32
_GRAD_ENABLED = True


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


def get_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype new tensors are created with (float32/float64)."""
    global _DTYPE
    old = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = old


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype or _DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __pow__(self, p: float):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def _topo_order(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, a.shape), _unbroadcast(-g * out / bd, b.shape)), "div")


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return _make(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),), "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, so large |x| cannot overflow
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid(x)
    return _make(x * s, (a,), lambda g: (g * (s + x * s * (1.0 - s)),), "silu")


def relu(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.maximum(x, 0), (a,), lambda g: (g * (x > 0),), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, (a,), backward, "gelu")


# ---------------------------------------------------------------- reductions / shape


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[x] for x in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    shape, dtype = a.shape, a.data.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows ``a[index]`` along axis 0."""
    index = np.asarray(index, dtype=np.int64)
    shape, dtype = a.shape, a.data.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), backward, "take_rows")


def segment_sum(a: Tensor, segment_ids: np.ndarray, n_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``n_segments`` buckets (rows are added in index order)."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    out = np.zeros((n_segments,) + a.shape[1:], dtype=a.data.dtype)
    np.add.at(out, segment_ids, a.data)
    return _make(out, (a,), lambda g: (g[segment_ids],), "segment_sum")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        if ga is not None:
            ga = _unbroadcast(ga, a.shape)
        if gb is not None:
            gb = _unbroadcast(gb, b.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), backward, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    # -inf is a legal additive mask value; NaN and +inf are not
    if np.isnan(xd).any() or np.isposinf(xd).any():
        raise FloatingPointError("softmax got non-finite input")
    shifted = xd - np.max(xd, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    shifted = xd - np.max(xd, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return _make(out, (x,), lambda g: (g - p * np.sum(g, axis=axis, keepdims=True),), "log_softmax")


def conv1d_k1(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Kernel-size-1 convolution over a ``len x c_in`` sequence: ``x @ w + b``."""
    if x.shape[-1] != w.shape[0] or w.shape[1] != b.shape[-1]:
        raise ShapeError(f"conv1d_k1 channel mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    return add(matmul(x, w), b)


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        n = xd.shape[-1]
        gm = g.mean(axis=-1, keepdims=True)
        gx = g * xhat
        return (inv * (g - gm - xhat * gx.sum(axis=-1, keepdims=True) / n),)

    out = _make(xhat, (x,), backward, "layer_norm")
    if gain is not None:
        out = mul(out, gain)
    if bias is not None:
        out = add(out, bias)
    return out


def cross_entropy(logits: Tensor, targets, pad_id: int | None = None) -> Tensor:
    """Mean negative log-likelihood over non-pad positions.

    ``logits`` is ``n x V`` (leading dims are flattened). An all-pad batch
    gives a loss of 0 with zero gradient.
    """
    V = logits.shape[-1]
    flat = logits.data.reshape(-1, V)
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape[0] != flat.shape[0]:
        raise ShapeError(f"cross_entropy: {flat.shape[0]} logits rows vs {t.shape[0]} targets")
    keep = np.ones_like(t, dtype=bool) if pad_id is None else t != pad_id
    if np.any((t[keep] < 0) | (t[keep] >= V)):
        raise IndexError(f"cross_entropy: target id out of range [0, {V})")
    count = int(keep.sum())
    shifted = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.nonzero(keep)[0]
    if count == 0:
        loss = np.zeros((), dtype=flat.dtype)
    else:
        loss = np.asarray(-logp[rows, t[rows]].sum() / count, dtype=flat.dtype)
    shape = logits.shape

    def backward(g):
        grad = np.zeros_like(flat)
        if count:
            p = np.exp(logp[rows])
            p[np.arange(len(rows)), t[rows]] -= 1.0
            grad[rows] = p * (g / count)
        return (grad.reshape(shape),)

    return _make(loss, (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------- rotary embedding


def rope_tables(positions: np.ndarray, d_head: int, base: float = 10000.0):
    if d_head % 2:
        raise ConfigError(f"rotary embedding needs an even head dim, got {d_head}")
    positions = np.asarray(positions, dtype=np.float64)
    theta = base ** (-np.arange(0, d_head, 2, dtype=np.float64) / d_head)
    ang = positions[:, None] * theta[None, :]
    cos = np.repeat(np.cos(ang), 2, axis=-1)
    sin = np.repeat(np.sin(ang), 2, axis=-1)
    return cos.astype(_DTYPE), sin.astype(_DTYPE)


def _rot_pairs(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    out[..., 0::2] = -x[..., 1::2]
    out[..., 1::2] = x[..., 0::2]
    return out


def rope_apply(x: Tensor, positions, base: float = 10000.0) -> Tensor:
    """Rotate channel pairs (2i, 2i+1) of ``x[..., len, d_head]`` by ``p * base^(-2i/d_head)``."""
    cos, sin = rope_tables(positions, x.shape[-1], base)
    cos = cos.astype(x.data.dtype)
    sin = sin.astype(x.data.dtype)
    out = x.data * cos + _rot_pairs(x.data) * sin
    return _make(out, (x,), lambda g: (g * cos - _rot_pairs(g * sin),), "rope")


# ---------------------------------------------------------------- modules


class Module:
    """Parameter container; parameters are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                if val.name == "param":
                    yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if strict and missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def set_trainable(self, flag: bool) -> None:
        for _, p in self.named_parameters():
            p.requires_grad = flag

    def n_params(self) -> int:
        return sum(p.data.size for p in self.parameters())


def param(arr) -> Tensor:
    t = Tensor(arr, requires_grad=True)
    t.name = "param"
    return t


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = param(rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y if self.bias is None else add(y, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = param(np.ones(d))
        self.bias = param(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator):
        self.weight = param(rng.normal(0.0, 0.02, size=(n, d)))

    def __call__(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        flat = take_rows(self.weight, ids.reshape(-1))
        return reshape(flat, ids.shape + (self.weight.shape[1],))


class MLP(Module):
    """Stack of Linear layers with an activation between (and optionally after) them."""

    def __init__(self, dims: Sequence[int], rng: np.random.Generator, act=silu, final_act: bool = False):
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.act = act
        self.final_act = final_act

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1 or self.final_act:
                x = self.act(x)
        return x


def causal_mask(n: int) -> np.ndarray:
    """Additive mask: 0 on and below the diagonal, -inf above."""
    m = np.zeros((n, n), dtype=_DTYPE)
    m[np.triu_indices(n, 1)] = -np.inf
    return m


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None,
                         return_weights: bool = False):
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))) * scale
    if mask is not None:
        scores = add(scores, Tensor(mask, dtype=scores.dtype))
    w = softmax(scores, axis=-1)
    out = matmul(w, v)
    return (out, w) if return_weights else out


class MultiHeadAttention(Module):
    """Per-head scaled dot-product attention, heads concatenated then projected.

    Inputs are ``(batch, len, d)``; ``mask`` is additive and broadcastable to
    ``(batch, heads, len_q, len_k)``. With ``rope`` set, queries and keys are
    rotated by their positions before scoring.
    """

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator, rope: bool = False):
        if d % n_heads:
            raise ConfigError(f"model dim {d} is not divisible by {n_heads} heads")
        self.d, self.n_heads, self.d_head = d, n_heads, d // n_heads
        if rope and self.d_head % 2:
            raise ConfigError(f"rotary embedding needs an even head dim, got {self.d_head}")
        self.rope = rope
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return transpose(reshape(x, (b, n, self.n_heads, self.d_head)), (0, 2, 1, 3))

    def __call__(self, xq: Tensor, xkv: Tensor, mask: np.ndarray | None = None, return_weights: bool = False):
        q = self._split(self.wq(xq))
        k = self._split(self.wk(xkv))
        v = self._split(self.wv(xkv))
        if self.rope:
            q = rope_apply(q, np.arange(q.shape[2]))
            k = rope_apply(k, np.arange(k.shape[2]))
        out, w = scaled_dot_attention(q, k, v, mask, return_weights=True)
        b, _, n, _ = out.shape
        out = reshape(transpose(out, (0, 2, 1, 3)), (b, n, self.d))
        out = self.wo(out)
        return (out, w) if return_weights else out


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int, mask=None, rope: bool = False,
                         wo: Tensor | None = None) -> Tensor:
    """Functional attention over already-projected ``q, k, v`` of shape ``(len, d)``.

    Splits into heads, applies optional rotary embedding, attends, concatenates
    and (if ``wo`` is given) applies the output projection.
    """
    d = q.shape[-1]
    if d % n_heads:
        raise ConfigError(f"model dim {d} is not divisible by {n_heads} heads")
    dh = d // n_heads

    def split(x):
        return transpose(reshape(x, (x.shape[0], n_heads, dh)), (1, 0, 2))

    qh, kh, vh = split(q), split(k), split(v)
    if rope:
        qh = rope_apply(qh, np.arange(qh.shape[1]))
        kh = rope_apply(kh, np.arange(kh.shape[1]))
    out = scaled_dot_attention(qh, kh, vh, mask)
    out = reshape(transpose(out, (1, 0, 2)), (q.shape[0], d))
    return matmul(out, wo) if wo is not None else out


def sinusoidal_embedding(values, dim: int, base: float = 10000.0) -> np.ndarray:
    """Standard sin/cos features of scalar ``values`` -> ``len(values) x dim``."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = base ** (-np.arange(half, dtype=np.float64) / max(half, 1))
    ang = values[:, None] * freqs[None, :]
    out = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if dim % 2:
        out = np.concatenate([out, np.zeros((len(values), 1))], axis=1)
    return out.astype(_DTYPE)


# ---------------------------------------------------------------- optimizer


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: Iterable[Tensor], lr: float = 5e-4, weight_decay: float = 1e-5,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.weight_decay, self.betas, self.eps = lr, weight_decay, betas, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, grads: Sequence[np.ndarray] | None = None) -> None:
        if grads is None:
            grads = [p.grad for p in self.params]
        if len(grads) != len(self.params) or any(g is None for g in grads):
            raise ContractError("adamw_step: every parameter needs a gradient")
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def state_arrays(self, prefix: str = "opt") -> dict[str, np.ndarray]:
        out = {f"{prefix}.step": np.array([self.step_count], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m.{i}"] = m
            out[f"{prefix}.v.{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "opt") -> None:
        self.step_count = int(arrays[f"{prefix}.step"][0])
        for i, p in enumerate(self.params):
            self.m[i] = np.asarray(arrays[f"{prefix}.m.{i}"], dtype=p.data.dtype).reshape(p.shape).copy()
            self.v[i] = np.asarray(arrays[f"{prefix}.v.{i}"], dtype=p.data.dtype).reshape(p.shape).copy()


def adamw_step(params: Sequence[Tensor], grads: Sequence[np.ndarray] | None, state: AdamW) -> None:
    state.step(grads)


# ---------------------------------------------------------------- gradient check


def finite_difference_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                            floor: float = 1e-3, max_coords: int | None = None,
                            rng: np.random.Generator | None = None) -> float:
    """Compare backward gradients of scalar ``f()`` with central differences.

    ``f`` is re-evaluated after each in-place perturbation of a parameter
    coordinate. Returns the max over coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    Meant to run under ``precision(np.float64)``.
    """
    for p in params:
        p.grad = None
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        with no_grad():
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(f().data)
                flat[i] = orig - eps
                fm = float(f().data)
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                ana = float(ga.reshape(-1)[i])
                err = abs(ana - num) / max(abs(ana), abs(num), floor)
                worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
