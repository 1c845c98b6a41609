"""Reverse-mode differentiation over numpy arrays.

A ``Tensor`` records the operation that produced it; ``backward`` walks the
recorded graph once in reverse topological order and accumulates gradients
into leaf tensors.  Only the operator set this package needs is provided:
elementwise arithmetic, reductions, sparse spatial stencils, 2D convolution,
matmul/softmax for attention, concatenation and a few activations.
"""
from __future__ import annotations

import contextlib
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    ChecksumMismatch,
    EmptyGrads,
    GraphConsumed,
    ManifestMalformed,
    NonDeterministicFunction,
    ShapeMismatch,
    ValidationError,
)

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "_parents", "_backward", "_consumed", "name")

    __array_priority__ = 1000  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.is_leaf = True
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._consumed = False
        self.name = name

    # -- basics ---------------------------------------------------------
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
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic -----------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


ArrayLike = "Tensor | np.ndarray | float"


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def data_of(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _needs_graph(*xs) -> bool:
    return _GRAD_ENABLED and any(isinstance(x, Tensor) and x.requires_grad for x in xs)


def _make(data: np.ndarray, parents: Sequence, backward: Callable) -> Tensor:
    """Wrap a forward result, recording ``backward`` if any parent is tracked."""
    out = Tensor(data)
    if _needs_graph(*parents):
        out.requires_grad = True
        out.is_leaf = False
        out._parents = tuple(p if isinstance(p, Tensor) else Tensor(np.asarray(p)) for p in parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------

def add(a, b) -> Tensor:
    ad, bd = data_of(a), data_of(b)
    return _make(ad + bd, (a, b), lambda g: (_unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)))


def sub(a, b) -> Tensor:
    ad, bd = data_of(a), data_of(b)
    return _make(ad - bd, (a, b), lambda g: (_unbroadcast(g, ad.shape), _unbroadcast(-g, bd.shape)))


def mul(a, b) -> Tensor:
    ad, bd = data_of(a), data_of(b)
    return _make(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    ad, bd = data_of(a), data_of(b)
    out = ad / bd
    return _make(out, (a, b), lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def power(a, exponent: float) -> Tensor:
    ad = data_of(a)
    out = ad ** exponent
    return _make(out, (a,), lambda g: (g * exponent * ad ** (exponent - 1),))


def square(a) -> Tensor:
    ad = data_of(a)
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def exp(a) -> Tensor:
    out = np.exp(data_of(a))
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    ad = data_of(a)
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sin(a) -> Tensor:
    ad = data_of(a)
    return _make(np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def cos(a) -> Tensor:
    ad = data_of(a)
    return _make(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),))


def tanh(a) -> Tensor:
    out = np.tanh(data_of(a))
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    out = _sigmoid_np(data_of(a))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    ad = data_of(a)
    return _make(np.maximum(ad, 0.0), (a,), lambda g: (g * (ad > 0),))


def silu(a) -> Tensor:
    ad = data_of(a)
    s = _sigmoid_np(ad)
    return _make(ad * s, (a,), lambda g: (g * (s + ad * s * (1.0 - s)),))


_SOFTPLUS_LINEAR = 30.0


def _softplus_np(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    safe = np.minimum(x, _SOFTPLUS_LINEAR)
    return np.where(x > _SOFTPLUS_LINEAR, x, np.log1p(np.exp(safe)))


def softplus(a) -> Tensor:
    ad = data_of(a)
    return _make(_softplus_np(ad), (a,), lambda g: (g * _sigmoid_np(ad),))


def softplus_pos(raw):
    """Map an unconstrained real to a strictly positive one.

    Returns a float for float input and a Tensor for Tensor input.  Above 30
    the identity branch is used, which also avoids overflow in ``exp``.
    """
    if isinstance(raw, Tensor):
        return softplus(raw)
    out = _softplus_np(raw)
    return float(out) if out.ndim == 0 else out


def inverse_softplus(y: float) -> float:
    if y <= 0:
        raise ValidationError(f"softplus is strictly positive, cannot invert {y}")
    if y > _SOFTPLUS_LINEAR:
        return float(y)
    return float(np.log(np.expm1(y)))


# -- shape / reductions ---------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    ad = data_of(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, ad.shape).copy(),)

    return _make(np.asarray(ad.sum(axis=axis, keepdims=keepdims)), (a,), back)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    ad = data_of(a)
    n = ad.size if axis is None else np.prod([ad.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    ad = data_of(a)
    return _make(ad.reshape(shape), (a,), lambda g: (g.reshape(ad.shape),))


def swapaxes(a, i: int, j: int) -> Tensor:
    ad = data_of(a)
    return _make(np.swapaxes(ad, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def broadcast_to(a, shape) -> Tensor:
    ad = data_of(a)
    return _make(np.broadcast_to(ad, shape).copy(), (a,), lambda g: (_unbroadcast(g, ad.shape),))


def getitem(a, index) -> Tensor:
    ad = data_of(a)

    def back(g):
        full = np.zeros_like(ad)
        np.add.at(full, index, g)
        return (full,)

    return _make(ad[index], (a,), back)


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    datas = [data_of(x) for x in xs]
    sizes = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(np.concatenate(datas, axis=axis), tuple(xs), back)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    datas = [data_of(x) for x in xs]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(datas)))

    return _make(np.stack(datas, axis=axis), tuple(xs), back)


# -- linear algebra -------------------------------------------------------

def matmul(a, b) -> Tensor:
    ad, bd = data_of(a), data_of(b)

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2) if bd.ndim > 1 else np.multiply.outer(g, bd)
        gb = np.swapaxes(ad, -1, -2) @ g if ad.ndim > 1 else np.multiply.outer(ad, g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), back)


def softmax(a, axis: int = -1) -> Tensor:
    ad = data_of(a)
    z = ad - ad.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def linop(a, op, op_t=None) -> Tensor:
    """Apply a fixed (sparse or dense) matrix to the last axis of ``a``.

    ``op`` has shape (m, n); the input's last axis must have length n.
    ``op_t`` is an optional precomputed transpose used for the backward pass.
    """
    ad = data_of(a)
    n = op.shape[1]
    if ad.shape[-1] != n:
        raise ShapeMismatch(f"operator expects trailing size {n}, got {ad.shape[-1]}")
    lead = ad.shape[:-1]
    flat = ad.reshape(-1, n)
    out = np.asarray(op @ flat.T).T.reshape(lead + (op.shape[0],))
    opt = op.T if op_t is None else op_t

    def back(g):
        gf = g.reshape(-1, op.shape[0])
        return (np.asarray(opt @ gf.T).T.reshape(ad.shape),)

    return _make(out, (a,), back)


def conv2d(x, w, b=None) -> Tensor:
    """Same-size 2D cross-correlation with zero padding.

    x: (B, Cin, H, W); w: (Cout, Cin, k, k) with odd k; b: (Cout,).
    """
    xd, wd = data_of(x), data_of(w)
    B, cin, H, W = xd.shape
    cout, cin_w, k, k2 = wd.shape
    if cin != cin_w or k != k2 or k % 2 == 0:
        raise ShapeMismatch(f"conv2d: input {xd.shape} incompatible with kernel {wd.shape}")
    r = k // 2
    N = B * H * W
    # columns laid out as (Cin * k * k, B * H * W) so both passes are single GEMMs
    if r:
        xp = np.pad(xd, ((0, 0), (0, 0), (r, r), (r, r)))
        patches = np.stack([xp[:, :, i:i + H, j:j + W] for i in range(k) for j in range(k)], axis=0)
        cols = patches.transpose(2, 0, 1, 3, 4).reshape(cin * k * k, N)
    else:
        cols = xd.transpose(1, 0, 2, 3).reshape(cin, N)
    w2 = wd.reshape(cout, cin * k * k)
    out = w2 @ cols
    if b is not None:
        out += data_of(b)[:, None]
    out = out.reshape(cout, B, H, W).transpose(1, 0, 2, 3)

    def back(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(cout, N)
        gw = (g2 @ cols.T).reshape(wd.shape)
        gcols = w2.T @ g2
        if r:
            gcols = gcols.reshape(cin, k * k, B, H, W)
            gxp = np.zeros((B, cin, H + 2 * r, W + 2 * r))
            idx = 0
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + H, j:j + W] += gcols[:, idx].transpose(1, 0, 2, 3)
                    idx += 1
            gx = gxp[:, :, r:r + H, r:r + W]
        else:
            gx = gcols.reshape(cin, B, H, W).transpose(1, 0, 2, 3)
        grads = [gx, gw]
        if b is not None:
            grads.append(g2.sum(axis=1))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, back)


# -- backward -------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node._consumed:
            raise GraphConsumed("graph already consumed by a previous backward(); re-run the forward pass")
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into every tracked leaf's ``grad``.

    The recorded graph is released afterwards; calling again on the same
    loss raises GraphConsumed.
    """
    if not isinstance(loss, Tensor):
        raise ValidationError("backward() needs a Tensor")
    if loss._consumed:
        raise GraphConsumed("backward() already ran on this graph")
    if not loss.requires_grad:
        loss._consumed = True
        return
    order = _topo(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data) if grad is None else grad}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in order:
        if not node.is_leaf:
            node._consumed = True
            node._backward = None
            node._parents = ()
    loss._consumed = True


# -- parameters -----------------------------------------------------------

class ParamSet:
    """Named learnable tensors with gradient slots."""

    def __init__(self, entries: dict[str, np.ndarray] | None = None):
        self._entries: dict[str, Tensor] = {}
        self.step = 0
        for name, values in (entries or {}).items():
            self.add(name, values)

    def add(self, name: str, values) -> Tensor:
        if name in self._entries:
            raise ValidationError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True, name=name)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def zero_grads(self) -> None:
        for t in self._entries.values():
            t.grad = np.zeros_like(t.data)

    def clear_grads(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def values(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._entries.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            if k not in self._entries:
                raise ValidationError(f"unknown parameter {k!r}")
            if self._entries[k].shape != np.shape(v):
                raise ShapeMismatch(f"{k}: expected {self._entries[k].shape}, got {np.shape(v)}")
            self._entries[k].data = np.array(v, dtype=np.float64)

    def merge(self, other: "ParamSet") -> None:
        for name, t in other.items():
            if name in self._entries:
                raise ValidationError(f"duplicate parameter {name!r}")
            self._entries[name] = t

    def count(self) -> int:
        return int(sum(t.data.size for t in self._entries.values()))

    # serialisation: JSON manifest + little-endian float64 blob
    def to_bytes(self) -> tuple[dict, bytes]:
        entries, chunks, offset = [], [], 0
        for name, t in self._entries.items():
            raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
            entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
        blob = b"".join(chunks)
        manifest = {
            "format": "paramset/v1",
            "dtype": "f64",
            "byte_order": "little",
            "step": self.step,
            "entries": entries,
            "sha256": hashlib.sha256(blob).hexdigest(),
        }
        return manifest, blob

    @classmethod
    def from_bytes(cls, manifest: dict, blob: bytes) -> "ParamSet":
        try:
            if manifest.get("dtype") != "f64" or manifest.get("byte_order") != "little":
                raise ManifestMalformed("paramset blobs must be little-endian f64")
            if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
                raise ChecksumMismatch("parameter blob checksum mismatch")
            ps = cls()
            for e in manifest["entries"]:
                shape = tuple(e["shape"])
                chunk = blob[e["offset"]:e["offset"] + e["nbytes"]]
                if len(chunk) != 8 * int(np.prod(shape, dtype=np.int64)):
                    raise ShapeMismatch(f"{e['name']}: blob length does not match shape {shape}")
                ps.add(e["name"], np.frombuffer(chunk, dtype="<f8").reshape(shape))
            ps.step = int(manifest.get("step", 0))
        except KeyError as exc:
            raise ManifestMalformed(f"missing manifest field {exc}") from None
        return ps

    def save(self, path: str | os.PathLike, extra: dict | None = None) -> None:
        """Write ``<path>.json`` + ``<path>.bin`` atomically (temp + rename)."""
        manifest, blob = self.to_bytes()
        if extra:
            manifest["extra"] = extra
        path = Path(path)
        blob_path = path.with_suffix(".bin")
        manifest["blob"] = blob_path.name
        atomic_write(blob_path, blob)
        atomic_write(path.with_suffix(".json"), json.dumps(manifest, indent=2, sort_keys=True).encode())

    @classmethod
    def load(cls, path: str | os.PathLike) -> tuple["ParamSet", dict]:
        path = Path(path)
        try:
            manifest = json.loads(path.with_suffix(".json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ManifestMalformed(f"cannot read parameter manifest: {exc}") from None
        blob = (path.parent / manifest.get("blob", path.with_suffix(".bin").name)).read_bytes()
        return cls.from_bytes(manifest, blob), manifest.get("extra", {})


def atomic_write(path: str | os.PathLike, payload: bytes) -> None:
    from .errors import CheckpointWriteFailure

    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        with contextlib.suppress(OSError):
            tmp.unlink()
        raise CheckpointWriteFailure(f"could not write {path}: {exc}") from exc


# -- optimiser ------------------------------------------------------------

@dataclass
class CosineSchedule:
    total_steps: int
    min_lr: float = 0.0

    def __call__(self, base_lr: float, step: int) -> float:
        frac = min(step, self.total_steps) / max(self.total_steps, 1)
        return self.min_lr + 0.5 * (base_lr - self.min_lr) * (1.0 + math.cos(math.pi * frac))


@dataclass
class ExponentialSchedule:
    """lr * 2^(-step / half_life): the same trajectory whatever the step budget."""

    half_life: float

    def __call__(self, base_lr: float, step: int) -> float:
        return base_lr * 0.5 ** (step / self.half_life)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0  # decoupled (AdamW) when > 0
    schedule: CosineSchedule | ExponentialSchedule | None = None
    no_decay: tuple[str, ...] = ()  # parameter names exempt from weight decay
    lr_scale: dict[str, float] = field(default_factory=dict)  # per-parameter multipliers
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        if self.schedule is None:
            return self.lr
        return self.schedule(self.lr, self.step)


def adam_step(params: ParamSet, state: AdamState) -> None:
    if all(t.grad is None for _, t in params.items()):
        raise EmptyGrads("no gradients populated; run backward() first")
    lr = state.current_lr()
    state.step += 1
    params.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        lr_t = lr * state.lr_scale.get(name, 1.0)
        if state.weight_decay and name not in state.no_decay:
            t.data = t.data - lr_t * state.weight_decay * t.data
        t.data = t.data - lr_t * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_grad_norm(params: ParamSet, max_norm: float) -> float:
    """Rescale all gradients so their joint l2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(t.grad * t.grad)) for _, t in params.items() if t.grad is not None))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for _, t in params.items():
            if t.grad is not None:
                t.grad = t.grad * scale
    return total


# -- gradient verification ------------------------------------------------

@dataclass
class GradcheckReport:
    errors: dict[str, float]
    rtol: float
    h: float

    @property
    def max_rel_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.rtol

    def __str__(self) -> str:
        lines = [f"{name:40s} rel_err={err:.3e}" for name, err in self.errors.items()]
        lines.append(f"max rel_err={self.max_rel_error:.3e} rtol={self.rtol:g} -> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _scalar(value) -> float:
    d = data_of(value)
    if d.size != 1:
        raise ShapeMismatch(f"gradcheck needs a scalar function, got shape {d.shape}")
    return float(d.reshape(()))


def gradcheck(
    f: Callable[[ParamSet], Tensor],
    params: ParamSet,
    h: float = 1e-4,
    rtol: float = 1e-4,
    max_coords: int = 256,
    seed: int = 0,
    names: Iterable[str] | None = None,
    atol: float = 1e-10,
) -> GradcheckReport:
    """Compare reverse-mode gradients with central finite differences.

    The error for one parameter entry is ``max|analytic - numeric|`` divided
    by the larger of the two gradients' max-norms, so coordinates with
    vanishing derivatives do not blow up the ratio.  Entries whose analytic
    and numeric gradients are both below ``atol`` count as exact.
    """
    if not h > 0:
        raise ValidationError(f"finite-difference step must be positive, got {h}")
    for name, t in params.items():
        if t.data.dtype != np.float64:
            raise ValidationError(f"gradcheck requires float64, {name} is {t.data.dtype}")
    with no_grad():
        base1 = _scalar(f(params))
        base2 = _scalar(f(params))
    if base1 != base2:
        raise NonDeterministicFunction(f"f differs between identical evaluations: {base1!r} vs {base2!r}")

    params.zero_grads()
    loss = f(params)
    backward(loss)
    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    for name in (names if names is not None else params.names()):
        t = params[name]
        analytic = t.grad.reshape(-1)
        n = t.data.size
        coords = np.arange(n) if n <= max_coords else np.sort(rng.choice(n, size=max_coords, replace=False))
        flat = t.data.reshape(-1)
        numeric = np.empty(len(coords))
        with no_grad():
            for i, c in enumerate(coords):
                orig = flat[c]
                flat[c] = orig + h
                fp = _scalar(f(params))
                flat[c] = orig - h
                fm = _scalar(f(params))
                flat[c] = orig
                numeric[i] = (fp - fm) / (2.0 * h)
        a = analytic[coords]
        scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        errors[name] = float(np.abs(a - numeric).max(initial=0.0) / scale) if scale > atol else 0.0
    return GradcheckReport(errors=errors, rtol=rtol, h=h)
