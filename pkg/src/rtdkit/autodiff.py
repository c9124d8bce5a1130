"""Reverse-mode automatic differentiation over numpy arrays.

The primitive set is deliberately closed: exactly the operations a
post-layer-norm transformer encoder and its training objectives need.
Every primitive that runs while a :class:`Tape` is active records a node
holding the inputs and a vector-Jacobian-product closure; :func:`backward`
replays the tape in reverse and accumulates gradients per parameter.

Arrays passed as plain numpy values (token ids, attention masks, labels)
are treated as constants and receive no gradient.  Training runs in
float32; float64 inputs flow through unchanged, which is what the
finite-difference checks rely on.

A tape is single-writer: one forward/backward pass per tape, from one
thread.  Concurrent passes need separate tapes.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "ShapeError",
    "Tensor",
    "Parameter",
    "Tape",
    "backward",
    "add",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "gelu",
    "softmax",
    "layer_norm",
    "dropout",
    "embedding",
    "select_token",
    "gather_positions",
    "cross_entropy",
    "binary_cross_entropy",
    "masked_mean",
    "numeric_gradient",
]

# Python floats: numpy scalar constants would upcast float32 activations
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Operand shapes do not conform for the named operation."""


class Tensor:
    """An n-dimensional float array, possibly attached to the active tape."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


class Parameter(Tensor):
    """A named, trainable tensor.

    ``no_decay`` flags biases and layer-norm gains/biases, which are exempt
    from decoupled weight decay.
    """

    __slots__ = ("name", "no_decay")

    def __init__(self, data, name: str, no_decay: bool = False, dtype=None):
        super().__init__(data, dtype=dtype)
        self.name = name
        self.no_decay = no_decay

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: tuple, vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)


def _record(out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> None:
    if _ACTIVE_TAPES:
        _ACTIVE_TAPES[-1]._nodes.append(_Node(out, tuple(inputs), vjp))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _const(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def backward(tape: Tape, loss: Tensor, params: Mapping[str, Parameter]) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every parameter.

    Parameters unreachable from the loss map to zero arrays of matching
    shape.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    for node in reversed(tape._nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or inp is None:
                continue
            acc = grads.get(id(inp))
            grads[id(inp)] = gi if acc is None else acc + gi
    return {
        name: grads.get(id(p), np.zeros_like(p.data))
        for name, p in params.items()
    }


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    """Broadcasting elementwise add; ``b`` may be a constant array."""
    bd = _const(b)
    try:
        out_data = a.data + bd
    except ValueError:
        raise ShapeError(f"add: shapes {a.data.shape} and {bd.shape} do not broadcast") from None
    out = Tensor(out_data)
    if isinstance(b, Tensor):
        def vjp(g):
            return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)
        _record(out, (a, b), vjp)
    else:
        def vjp(g):
            return (_unbroadcast(g, a.data.shape),)
        _record(out, (a,), vjp)
    return out


def mul(a: Tensor, b) -> Tensor:
    """Broadcasting elementwise multiply; ``b`` may be a constant array."""
    bd = _const(b)
    try:
        out_data = a.data * bd
    except ValueError:
        raise ShapeError(f"mul: shapes {a.data.shape} and {bd.shape} do not broadcast") from None
    out = Tensor(out_data)
    if isinstance(b, Tensor):
        ad = a.data
        def vjp(g):
            return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)
        _record(out, (a, b), vjp)
    else:
        def vjp(g):
            return (_unbroadcast(g * bd, a.data.shape),)
        _record(out, (a,), vjp)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)
    _record(out, (a,), lambda g: (g * c,))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching rules over leading axes."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape} do not conform")
    try:
        out_data = ad @ bd
    except ValueError:
        raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape} do not conform") from None
    out = Tensor(out_data)

    def vjp(g):
        ga = _unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape)
        gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape)
        return ga, gb

    _record(out, (a, b), vjp)
    return out


def transpose(a: Tensor, axes: tuple) -> Tensor:
    out = Tensor(a.data.transpose(axes))
    inv = tuple(np.argsort(axes))
    _record(out, (a,), lambda g: (g.transpose(inv),))
    return out


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.data.shape
    out = Tensor(a.data.reshape(shape))
    _record(out, (a,), lambda g: (g.reshape(old),))
    return out


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, exact (erf) form."""
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = Tensor(x * phi)

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (phi + x * pdf),)

    _record(out, (a,), vjp)
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    _record(out, (a,), vjp)
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Per-position normalization over the last axis with learned gain/bias."""
    x = a.data
    n = x.shape[-1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise ShapeError(
            f"layer_norm: input {x.shape} needs gain/bias ({n},), "
            f"got {gain.data.shape} and {bias.data.shape}"
        )
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = Tensor(xhat * gain.data + bias.data)

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        dx = inv_std / n * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return dx, dgain, dbias

    _record(out, (a, gain, bias), vjp)
    return out


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in train mode (evaluation skips it)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: probability {p} outside [0, 1)")
    if p == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p).astype(a.dtype) / np.asarray(1.0 - p, a.dtype)
    out = Tensor(a.data * keep)
    _record(out, (a,), lambda g: (g * keep,))
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: ``out[...] = table[ids[...]]``."""
    ids = np.asarray(ids)
    vocab = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(np.argwhere((ids < 0) | (ids >= vocab)).flat[0])
        raise IndexError(f"embedding: id out of range [0, {vocab}) at flat position {bad}")
    out = Tensor(table.data[ids])

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
        return (gt,)

    _record(out, (table,), vjp)
    return out


def select_token(a: Tensor, position: int) -> Tensor:
    """Pick one time step from a [batch, time, ...] activation."""
    out = Tensor(a.data[:, position])

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[:, position] = g
        return (ga,)

    _record(out, (a,), vjp)
    return out


def gather_positions(a: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Pick (row, col) pairs from a [batch, time, ...] activation.

    ``rows`` and ``cols`` are equal-length integer arrays; the result stacks
    the selected positions along a new leading axis.
    """
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    if rows.shape != cols.shape or rows.ndim != 1:
        raise ShapeError(f"gather_positions: rows {rows.shape} vs cols {cols.shape}")
    out = Tensor(a.data[rows, cols])

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, cols), g)
        return (ga,)

    _record(out, (a,), vjp)
    return out


def _prepare_mask(mask, shape, dtype):
    if mask is None:
        m = np.ones(shape, dtype=dtype)
    else:
        m = np.asarray(mask).astype(dtype)
        if m.shape != shape:
            raise ShapeError(f"mask shape {m.shape} does not match {shape}")
    count = m.sum()
    return m, count


def cross_entropy(logits: Tensor, labels: np.ndarray, mask=None) -> Tensor:
    """Mean categorical cross-entropy from logits.

    ``logits`` has classes on the last axis, ``labels`` holds integer class
    ids for the leading axes, and ``mask`` (same shape as ``labels``)
    selects which positions enter the mean.
    """
    x = logits.data
    labels = np.asarray(labels)
    if labels.shape != x.shape[:-1]:
        raise ShapeError(f"cross_entropy: labels {labels.shape} vs logits {x.shape}")
    m, count = _prepare_mask(mask, labels.shape, x.dtype)
    if count == 0:
        raise ValueError("cross_entropy: mask selects no positions")
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    picked = np.take_along_axis(shifted, labels[..., None], axis=-1)[..., 0]
    out = Tensor(((lse - picked) * m).sum() / count)

    def vjp(g):
        probs = np.exp(shifted - lse[..., None])
        grid = np.indices(labels.shape)
        probs[(*grid, labels)] -= 1.0
        return (probs * (m * (g / count))[..., None],)

    _record(out, (logits,), vjp)
    return out


def binary_cross_entropy(logits: Tensor, labels: np.ndarray, mask=None) -> Tensor:
    """Mean binary cross-entropy from logits against {0, 1} labels."""
    x = logits.data
    z = np.asarray(labels).astype(x.dtype)
    if z.shape != x.shape:
        raise ShapeError(f"binary_cross_entropy: labels {z.shape} vs logits {x.shape}")
    m, count = _prepare_mask(mask, x.shape, x.dtype)
    if count == 0:
        raise ValueError("binary_cross_entropy: mask selects no positions")
    per = np.maximum(x, 0.0) - x * z + np.log1p(np.exp(-np.abs(x)))
    out = Tensor((per * m).sum() / count)

    def vjp(g):
        sig = 1.0 / (1.0 + np.exp(-x))
        return ((sig - z) * m * (g / count),)

    _record(out, (logits,), vjp)
    return out


def masked_mean(a: Tensor, mask=None) -> Tensor:
    """Mean of the elements selected by ``mask``."""
    m, count = _prepare_mask(mask, a.data.shape, a.dtype)
    if count == 0:
        raise ValueError("masked_mean: mask selects no positions")
    out = Tensor((a.data * m).sum() / count)
    _record(out, (a,), lambda g: (m * (g / count),))
    return out


# ---------------------------------------------------------------------------
# Verification helper
# ---------------------------------------------------------------------------

def numeric_gradient(fn: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``fn()`` with respect to ``x`` in place.

    ``fn`` must recompute the scalar from the current contents of ``x``.
    Use float64 arrays; float32 rounding swamps the h**2 truncation term.
    """
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
