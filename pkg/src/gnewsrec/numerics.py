"""Dense tensors with reverse-mode gradients, layer primitives and Adam.

Every differentiable op returns a :class:`Tensor` holding a closure that
pushes the output gradient back into its parents.  Calling
:meth:`Tensor.backward` on a scalar walks the recorded graph in reverse
topological order.
"""

from __future__ import annotations

import json
import struct
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "DegenerateInputError",
    "NonFiniteGradientError",
    "ParameterStore",
    "as_tensor",
    "concat",
    "stack",
    "take_rows",
    "place_rows",
    "dense",
    "conv1d",
    "max_pool_over_time",
    "masked_softmax",
    "masked_mean",
    "dropout",
    "lstm_cell",
    "adam_step",
    "make_rng",
    "save_checkpoint",
    "load_checkpoint",
]


class ShapeError(ValueError):
    """Operand shapes do not conform to the operation's contract."""


class DegenerateInputError(ValueError):
    """Input is too short or empty for the requested operation."""


class NonFiniteGradientError(FloatingPointError):
    """A gradient contains NaN or Inf; the optimizer step was not applied."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out the axes numpy broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), name: str = ""):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = None
        self.name = name

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self) -> tuple:
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

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack_ = [(self, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack_.append((p, False))
        self._accum(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        out = Tensor(self.data + other.data, _parents=(self, other))
        if out.requires_grad:
            def _bw(g):
                self._accum(_unbroadcast(g, self.shape))
                other._accum(_unbroadcast(g, other.shape))
            out._backward = _bw
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other, self.dtype))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        out = Tensor(self.data * other.data, _parents=(self, other))
        if out.requires_grad:
            def _bw(g):
                self._accum(_unbroadcast(g * other.data, self.shape))
                other._accum(_unbroadcast(g * self.data, other.shape))
            out._backward = _bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        out = Tensor(self.data / other.data, _parents=(self, other))
        if out.requires_grad:
            def _bw(g):
                self._accum(_unbroadcast(g / other.data, self.shape))
                other._accum(_unbroadcast(-g * self.data / other.data**2, other.shape))
            out._backward = _bw
        return out

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        if self.shape[-1] != other.shape[0 if other.ndim == 1 else -2]:
            raise ShapeError(f"matmul: {self.shape} @ {other.shape}")
        out = Tensor(self.data @ other.data, _parents=(self, other))
        if out.requires_grad:
            a, b = self.data, other.data

            def _bw(g):
                if b.ndim == 1:
                    self._accum(_unbroadcast(np.multiply.outer(g, b), self.shape))
                    other._accum((a * g[..., None]).reshape(-1, b.shape[0]).sum(axis=0))
                    return
                ga = g if a.ndim > 1 else g[None, :]
                aa = a if a.ndim > 1 else a[None, :]
                self._accum(_unbroadcast(ga @ np.swapaxes(b, -1, -2), aa.shape).reshape(self.shape))
                gb = np.swapaxes(aa, -1, -2) @ ga
                other._accum(_unbroadcast(gb, other.shape))
            out._backward = _bw
        return out

    def __getitem__(self, idx) -> "Tensor":
        out = Tensor(self.data[idx], _parents=(self,))
        if out.requires_grad:
            basic = all(isinstance(i, (slice, int, type(Ellipsis)))
                        for i in (idx if isinstance(idx, tuple) else (idx,)))

            def _bw(g):
                full = np.zeros_like(self.data)
                if basic:       # views never repeat an element
                    full[idx] = g
                else:
                    np.add.at(full, idx, g)
                self._accum(full)
            out._backward = _bw
        return out

    # -- reductions and reshapes -------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,))
        if out.requires_grad:
            def _bw(g):
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(g, self.shape))
            out._backward = _bw
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g.reshape(self.shape))
        return out

    def transpose(self, *axes) -> "Tensor":
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        out = Tensor(self.data.transpose(axes), _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g.transpose(inv))
        return out

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    # -- elementwise nonlinearities -----------------------------------------
    def relu(self) -> "Tensor":
        mask = self.data > 0
        out = Tensor(self.data * mask, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * mask)
        return out

    def tanh(self) -> "Tensor":
        t = np.tanh(self.data)
        out = Tensor(t, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * (1.0 - t * t))
        return out

    def sigmoid(self) -> "Tensor":
        s = _sigmoid(self.data)
        out = Tensor(s, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * s * (1.0 - s))
        return out

    def exp(self) -> "Tensor":
        e = np.exp(self.data)
        out = Tensor(e, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * e)
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g / self.data)
        return out

    def clip(self, lo: float, hi: float) -> "Tensor":
        inside = (self.data >= lo) & (self.data <= hi)
        out = Tensor(np.clip(self.data, lo, hi), _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * inside)
        return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors))
    if out.requires_grad:
        bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

        def _bw(g):
            for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
                t._accum(piece)
        out._backward = _bw
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis), _parents=tuple(tensors))
    if out.requires_grad:
        def _bw(g):
            for i, t in enumerate(tensors):
                t._accum(np.take(g, i, axis=axis))
        out._backward = _bw
    return out


def take_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: ``out[...] = table[ids[...]]``; gradients scatter-add back."""
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[ids], _parents=(table,))
    if out.requires_grad:
        def _bw(g):
            full = np.zeros_like(table.data)
            np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
            table._accum(full)
        out._backward = _bw
    return out


def place_rows(n: int, idx, rows: Tensor) -> Tensor:
    """Zero matrix of ``n`` rows with ``rows`` written at positions ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    data = np.zeros((n,) + rows.shape[1:], dtype=rows.dtype)
    data[idx] = rows.data
    out = Tensor(data, _parents=(rows,))
    if out.requires_grad:
        out._backward = lambda g: rows._accum(g[idx])
    return out


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ weight.T + bias``; weight is [out, in]."""
    x = as_tensor(x)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"dense: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
    out = x @ weight.T
    return out + bias if bias is not None else out


def conv1d(x: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """Valid 1-D convolution over the sequence axis.

    ``x`` is [..., len, k], ``filters`` is [f, win, k]; the result is
    [..., len - win + 1, f].
    """
    x = as_tensor(x)
    f, win, k = filters.shape
    if x.shape[-1] != k:
        raise ShapeError(f"conv1d: input channels {x.shape[-1]} != filter channels {k}")
    length = x.shape[-2]
    if length < win:
        raise DegenerateInputError(f"conv1d: sequence length {length} shorter than window {win}")
    out_len = length - win + 1
    windows = concat([x[..., i:i + out_len, :] for i in range(win)], axis=-1)
    return windows @ filters.reshape(f, win * k).T + bias


def max_pool_over_time(x: Tensor, mask=None) -> Tensor:
    """Column max over the sequence axis (-2); ``mask`` marks valid positions."""
    if x.shape[-2] == 0:
        raise DegenerateInputError("max_pool_over_time: empty sequence")
    data = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise DegenerateInputError("max_pool_over_time: a sequence has no valid positions")
        data = np.where(mask[..., None], data, -np.inf)
    arg = np.argmax(data, axis=-2)[..., None, :]
    out = Tensor(np.take_along_axis(x.data, arg, axis=-2)[..., 0, :], _parents=(x,))
    if out.requires_grad:
        def _bw(g):
            full = np.zeros_like(x.data)
            np.put_along_axis(full, arg, g[..., None, :], axis=-2)
            x._accum(full)
        out._backward = _bw
    return out


def masked_softmax(scores: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; masked-out entries get exactly zero weight.

    A row with no valid entry returns all zeros.
    """
    s = scores.data
    valid = np.ones(s.shape, dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, bool), s.shape)
    shifted = np.where(valid, s, -np.inf)
    top = shifted.max(axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(valid, np.exp(np.where(valid, s - top, 0.0)), 0.0)
    z = e.sum(axis=-1, keepdims=True)
    a = np.divide(e, z, out=np.zeros_like(e), where=z > 0)
    out = Tensor(a, _parents=(scores,))
    if out.requires_grad:
        out._backward = lambda g: scores._accum(a * (g - (g * a).sum(axis=-1, keepdims=True)))
    return out


def masked_mean(x: Tensor, mask) -> Tensor:
    """Mean over axis -2 of ``x`` [..., n, D] counting only ``mask`` rows; empty → 0."""
    mask = np.asarray(mask, dtype=x.dtype)
    count = mask.sum(axis=-1, keepdims=True)
    weights = np.divide(mask, count, out=np.zeros_like(mask), where=count > 0)
    return (x * Tensor(weights[..., None])).sum(axis=-2)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * Tensor(keep)


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, params: dict) -> tuple[Tensor, Tensor]:
    """One LSTM step; ``params`` holds ``W`` [4D, D], ``U`` [4D, D], ``b`` [4D].

    Gate order in the stacked matrices is input, forget, cell, output.
    """
    W, U, b = params["W"], params["U"], params["b"]
    d = h_prev.shape[-1]
    if W.shape[0] != 4 * d or U.shape != (4 * d, d):
        raise ShapeError(f"lstm_cell: hidden size {d} does not match W {W.shape}, U {U.shape}")
    z = dense(x, W, b) + dense(h_prev, U)
    i = z[..., 0:d].sigmoid()
    f = z[..., d:2 * d].sigmoid()
    g = z[..., 2 * d:3 * d].tanh()
    o = z[..., 3 * d:4 * d].sigmoid()
    c = f * c_prev + i * g
    h = o * c.tanh()
    return h, c


# -- parameters and optimisation ------------------------------------------

def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator derived deterministically from ``seed`` and an optional key path."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


class ParameterStore:
    """Named trainable arrays plus their Adam moments and the shared step counter."""

    def __init__(self, seed: int = 0, std: float = 0.1, dtype=np.float64):
        self.std = std
        self.dtype = np.dtype(dtype)
        self.rng = make_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.decay: dict[str, bool] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, shape: Iterable[int], init: str = "normal", decay: bool = True) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        if init == "normal":
            value = self.rng.normal(0.0, self.std, size=shape)
        elif init == "zeros":
            value = np.zeros(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(value.astype(self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        self.decay[name] = decay
        self.m[name] = np.zeros(shape, dtype=self.dtype)
        self.v[name] = np.zeros(shape, dtype=self.dtype)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def values(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, arr in values.items():
            p = self.params[k]
            if p.shape != arr.shape:
                raise ShapeError(f"{k}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = np.array(arr, dtype=self.dtype)

    def penalty(self) -> float:
        """Sum of squared entries over decayed (weight-matrix) parameters."""
        return float(sum((p.data**2).sum() for k, p in self.params.items() if self.decay[k]))


def adam_step(store: ParameterStore, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, l2: float = 0.0) -> None:
    """Apply one Adam update with bias correction, then clear gradients.

    The L2 penalty ``l2 * ||w||^2`` enters as the extra gradient ``2 * l2 * w``
    on decayed parameters only.
    """
    grads = {}
    bad = []
    for name, p in store.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            bad.append(name)
        grads[name] = g
    if bad:
        store.zero_grad()
        raise NonFiniteGradientError(f"non-finite gradient in {', '.join(bad)}; step skipped")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in store.params.items():
        g = grads[name]
        if l2 and store.decay[name]:
            g = g + 2.0 * l2 * p.data
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    store.zero_grad()


# -- checkpoint file -------------------------------------------------------

_MAGIC = b"GNEWSREC-CKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write ``name -> array`` as a versioned header plus raw little-endian payload."""
    entries = []
    payload = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dt = arr.dtype.newbyteorder("<")
        raw = arr.astype(dt, copy=False).tobytes(order="C")
        entries.append({"name": name, "dtype": dt.str, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({"version": CHECKPOINT_VERSION, "meta": meta or {}, "entries": entries},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for raw in payload:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(_MAGIC)
    version, hlen = struct.unpack_from("<IQ", blob, pos)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += struct.calcsize("<IQ")
    header = json.loads(blob[pos:pos + hlen])
    base = pos + hlen
    arrays = {}
    for e in header["entries"]:
        start = base + e["offset"]
        arr = np.frombuffer(blob[start:start + e["nbytes"]], dtype=np.dtype(e["dtype"]))
        arrays[e["name"]] = arr.reshape(e["shape"]).copy()
    return arrays, header["meta"]
