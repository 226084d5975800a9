"""Dense float32 tensors with reverse-mode autodiff, a seeded RNG, and FFT1 tensor files.

Everything else in the package is built on this module. The design is a
vectorized micrograd: each op computes its result eagerly with numpy and
records a backward closure on the output node. Calling ``backward`` on a
scalar loss walks the recorded graph once in reverse topological order,
accumulates gradients, writes them into the ``grad`` buffer of trainable
leaves, and frees the graph.

Shape discipline is strict: no broadcasting except scalar-with-tensor.
Frame/batch axes are always explicit (``tile_leading`` exists for the one
place replication is needed). Mismatched extents raise ``ShapeError``
instead of silently broadcasting.
"""

from __future__ import annotations

import hashlib
import struct
from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A float32 ndarray plus an optional gradient buffer and tape hooks.

    Tensors are immutable after construction except for the designated
    in-place optimizer update (``adam_step``) and grad buffer writes.
    """

    __slots__ = ("data", "grad", "trainable", "name", "_parents", "_backward")

    def __init__(self, data, trainable: bool = False, name: str = "",
                 _parents: tuple = (), _backward=None):
        arr = np.asarray(data, dtype=np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.trainable = trainable
        self.name = name
        self._parents = _parents if _GRAD_ENABLED else ()
        self._backward = _backward if _GRAD_ENABLED else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, trainable={self.trainable})"

    # Operator sugar. Scalars are the only permitted implicit broadcast.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_const(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def _out(data, parents, backward, name="") -> Tensor:
    if _GRAD_ENABLED:
        return Tensor(data, _parents=parents, _backward=backward, name=name)
    return Tensor(data)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: extents {a.shape} vs {b.shape} do not match")


# ---------------------------------------------------------------------------
# RNG

class Rng:
    """Counter-based seeded generator (Philox) with derivable child streams.

    Identical seed and call sequence produce an identical stream. There is
    no global RNG anywhere in the package; every consumer receives an Rng.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def child(self, label: str) -> "Rng":
        """Derive an independent stream from a string label, deterministically."""
        digest = hashlib.blake2b(
            f"{self.seed}:{label}".encode(), digest_size=8
        ).digest()
        return Rng(int.from_bytes(digest, "little"))

    def standard_normal(self, shape: Sequence[int]) -> np.ndarray:
        return self._gen.standard_normal(size=tuple(shape)).astype(np.float32)

    def uniform(self, low: float, high: float, shape: Sequence[int] = ()) -> np.ndarray:
        return self._gen.uniform(low, high, size=tuple(shape)).astype(np.float32)

    def integers(self, low: int, high: int, shape: Sequence[int] = ()):
        out = self._gen.integers(low, high, size=tuple(shape) or None)
        return out

    def choice_index(self, n: int) -> int:
        return int(self._gen.integers(0, n))


def randn(rng: Rng, shape: Sequence[int]) -> Tensor:
    """I.i.d. standard-normal tensor of the given shape."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s <= 0 for s in shape):
        raise ShapeError(f"randn: extents must all be positive, got {shape}")
    return Tensor(rng.standard_normal(shape))


# ---------------------------------------------------------------------------
# Elementwise and reduction ops

def add(a: Tensor, b) -> Tensor:
    a = _as_const(a)
    if np.isscalar(b) or (isinstance(b, np.ndarray) and b.ndim == 0):
        data = a.data + np.float32(b)

        def bw(g, acc):
            acc(a, g)

        return _out(data, (a,), bw)
    b = _as_const(b)
    if a.ndim == 0 or b.ndim == 0:
        pass  # scalar tensor against anything is the one permitted broadcast
    else:
        _check_same_shape(a, b, "add")
    data = a.data + b.data

    def bw(g, acc):
        acc(a, g if a.shape == data.shape else np.sum(g, dtype=np.float32))
        acc(b, g if b.shape == data.shape else np.sum(g, dtype=np.float32))

    return _out(data, (a, b), bw)


def sub(a: Tensor, b) -> Tensor:
    return add(a, neg(_as_const(b)) if isinstance(b, Tensor) else -np.float32(b))


def neg(a: Tensor) -> Tensor:
    a = _as_const(a)

    def bw(g, acc):
        acc(a, -g)

    return _out(-a.data, (a,), bw)


def mul(a: Tensor, b) -> Tensor:
    a = _as_const(a)
    if np.isscalar(b) or (isinstance(b, np.ndarray) and b.ndim == 0):
        s = np.float32(b)
        data = a.data * s

        def bw(g, acc):
            acc(a, g * s)

        return _out(data, (a,), bw)
    b = _as_const(b)
    if a.ndim != 0 and b.ndim != 0:
        _check_same_shape(a, b, "mul")
    data = a.data * b.data

    def bw(g, acc):
        ga = g * b.data
        gb = g * a.data
        acc(a, ga if a.shape == data.shape else np.sum(ga, dtype=np.float32))
        acc(b, gb if b.shape == data.shape else np.sum(gb, dtype=np.float32))

    return _out(data, (a, b), bw)


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x); smooth activation used in the small MLPs."""
    a = _as_const(a)
    # sigmoid via the tanh identity: stable for arbitrarily large |x|
    sig = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    data = a.data * sig

    def bw(g, acc):
        acc(a, g * (sig * (1.0 + a.data * (1.0 - sig))))

    return _out(data.astype(np.float32), (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    a = _as_const(a)
    data = np.sum(a.data, dtype=np.float32)

    def bw(g, acc):
        acc(a, np.full(a.shape, g, dtype=np.float32))

    return _out(data, (a,), bw)


def mean_all(a: Tensor) -> Tensor:
    a = _as_const(a)
    n = a.size
    data = np.mean(a.data, dtype=np.float32)

    def bw(g, acc):
        acc(a, np.full(a.shape, g / n, dtype=np.float32))

    return _out(data, (a,), bw)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error, the training loss carrier."""
    _check_same_shape(a, b, "mse")
    d = sub(a, b)
    return mean_all(mul(d, d))


# ---------------------------------------------------------------------------
# Structural ops

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _as_const(a)
    shape = tuple(int(s) for s in shape)
    data = a.data.reshape(shape)

    def bw(g, acc):
        acc(a, g.reshape(a.shape))

    return _out(data, (a,), bw)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    a = _as_const(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.ascontiguousarray(np.transpose(a.data, axes))

    def bw(g, acc):
        acc(a, np.ascontiguousarray(np.transpose(g, inv)))

    return _out(data, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_const(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g, acc):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            acc(t, np.ascontiguousarray(g[tuple(idx)]))

    return _out(data, tuple(tensors), bw)


def index_select(a: Tensor, axis: int, indices: Sequence[int]) -> Tensor:
    """Gather rows along an axis; gradient scatter-adds (supports repeats)."""
    a = _as_const(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("index_select: indices must be one-dimensional")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise ShapeError(
            f"index_select: index out of range for extent {a.shape[axis]}"
        )
    data = np.take(a.data, idx, axis=axis)

    def bw(g, acc):
        ga = np.zeros(a.shape, dtype=np.float32)
        np.add.at(ga, tuple([slice(None)] * axis + [idx]), g)
        acc(a, ga)

    return _out(data, (a,), bw)


def tile_leading(a: Tensor, n: int) -> Tensor:
    """Replicate along a new leading axis; the explicit stand-in for broadcasting."""
    a = _as_const(a)
    data = np.broadcast_to(a.data, (n,) + a.shape).copy()

    def bw(g, acc):
        acc(a, np.sum(g, axis=0, dtype=np.float32))

    return _out(data, (a,), bw)


def add_lastdim(x: Tensor, b: Tensor) -> Tensor:
    """Add a [d] vector along the last axis of x (documented broadcast op)."""
    x, b = _as_const(x), _as_const(b)
    if b.shape != (x.shape[-1],):
        raise ShapeError(f"add_lastdim: {b.shape} against last axis of {x.shape}")
    data = x.data + b.data

    def bw(g, acc):
        acc(x, g)
        acc(b, np.sum(g, axis=tuple(range(g.ndim - 1)), dtype=np.float32))

    return _out(data, (x, b), bw)


# ---------------------------------------------------------------------------
# Linear algebra and attention primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product on the trailing two axes, batched over equal leading axes."""
    a, b = _as_const(a), _as_const(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul: operands must have at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner extents disagree ({a.shape} @ {b.shape})"
        )
    if a.ndim != b.ndim and not (a.ndim == 2 or b.ndim == 2):
        raise ShapeError(
            f"matmul: leading axes must match explicitly ({a.shape} @ {b.shape})"
        )
    if a.ndim == b.ndim and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(
            f"matmul: batch extents disagree ({a.shape} @ {b.shape})"
        )
    data = np.matmul(a.data, b.data)

    def bw(g, acc):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        # collapse batch axes that came from a 2D operand against a batched one
        while ga.ndim > a.ndim:
            ga = np.sum(ga, axis=0, dtype=np.float32)
        while gb.ndim > b.ndim:
            gb = np.sum(gb, axis=0, dtype=np.float32)
        acc(a, ga)
        acc(b, gb)

    return _out(data, (a, b), bw)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Row-wise softmax on the last axis, stabilized by max subtraction."""
    x = _as_const(x)
    if x.shape[-1] < 1:
        raise ShapeError("softmax_lastdim: last extent must be >= 1")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax_lastdim: non-finite input")
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=-1, keepdims=True)
    y = y.astype(np.float32)

    def bw(g, acc):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        acc(x, (y * (g - dot)).astype(np.float32))

    return _out(y, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _as_const(x), _as_const(gain), _as_const(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias must have extent ({d},), got {gain.shape}/{bias.shape}"
        )
    mu = np.mean(x.data, axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (xc * rstd).astype(np.float32)
    y = xhat * gain.data + bias.data

    def bw(g, acc):
        gg = g * gain.data
        # d xhat: standard layernorm backward over the last axis
        m1 = np.mean(gg, axis=-1, keepdims=True)
        m2 = np.mean(gg * xhat, axis=-1, keepdims=True)
        gx = (gg - m1 - xhat * m2) * rstd
        acc(x, gx.astype(np.float32))
        red = tuple(range(x.ndim - 1))
        acc(gain, np.sum(g * xhat, axis=red, dtype=np.float32))
        acc(bias, np.sum(g, axis=red, dtype=np.float32))

    return _out(y.astype(np.float32), (x, gain, bias), bw)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the trailing two axes."""
    q, k, v = _as_const(q), _as_const(k), _as_const(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: q/k key extents disagree ({q.shape} vs {k.shape})")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: k/v sequence extents disagree ({k.shape} vs {v.shape})")
    scale = 1.0 / float(np.sqrt(q.shape[-1]))
    scores = mul(matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))), scale)
    return matmul(softmax_lastdim(scores), v)


# ---------------------------------------------------------------------------
# Backward pass

def backward(loss: Tensor) -> None:
    """Populate grad buffers of every trainable tensor reachable from ``loss``.

    The loss must be scalar. The recorded graph is freed afterwards; grads
    on non-trainable nodes are never materialized past the traversal.
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=np.float32)}

    def acc(node: Tensor, g: np.ndarray) -> None:
        key = id(node)
        if key in grads:
            grads[key] = grads[key] + g
        else:
            grads[key] = np.asarray(g, dtype=np.float32)

    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.trainable:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is not None:
            node._backward(g, acc)
        # free the tape as we go
        node._parents = ()
        node._backward = None


# ---------------------------------------------------------------------------
# Optimizer

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class AdamState:
    """First/second moment buffers keyed by parameter identity."""

    def __init__(self):
        self.step = 0
        self.m: dict[int, np.ndarray] = {}
        self.v: dict[int, np.ndarray] = {}


def adam_step(params: Iterable[Tensor], state: AdamState, lr: float) -> None:
    """Standard Adam update, in place. Parameters without a grad are skipped."""
    params = list(params)
    state.step += 1
    t = state.step
    b1c = 1.0 - ADAM_BETA1 ** t
    b2c = 1.0 - ADAM_BETA2 ** t
    for p in params:
        if p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ShapeError(
                f"adam_step: grad shape {p.grad.shape} vs param {p.data.shape}"
            )
        key = id(p)
        m = state.m.get(key)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[key]
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * p.grad
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (p.grad * p.grad)
        state.m[key] = m
        state.v[key] = v
        mhat = m / b1c
        vhat = v / b2c
        p.data -= (lr * mhat / (np.sqrt(vhat) + ADAM_EPS)).astype(np.float32)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def global_grad_norm(params: Iterable[Tensor]) -> float:
    sq = 0.0
    for p in params:
        if p.grad is not None:
            sq += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(sq))


def clip_global_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Scale all grads so their joint L2 norm is at most ``max_norm``."""
    params = list(params)
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0:
        scale = np.float32(max_norm / norm)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


# ---------------------------------------------------------------------------
# FFT1 tensor file format
#
# magic "FFT1" | u32 rank | rank x u32 extents | little-endian f32 payload.

FFT1_MAGIC = b"FFT1"


def write_fft1(path, array) -> None:
    arr = array.data if isinstance(array, Tensor) else np.asarray(array, dtype=np.float32)
    arr = np.ascontiguousarray(arr.astype("<f4"))
    with open(path, "wb") as f:
        f.write(FFT1_MAGIC)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def read_fft1(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FFT1_MAGIC:
            raise ValueError(f"{path}: not an FFT1 file (magic {magic!r})")
        (rank,) = struct.unpack("<I", f.read(4))
        shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
        payload = f.read()
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


# ---------------------------------------------------------------------------
# Finite-difference oracle used by the test suite's gradchecks

def numeric_gradient(fn, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array.

    ``fn`` receives float64 perturbations; reference implementations should
    evaluate in float64 so the difference quotient is not drowned by
    single-precision roundoff.
    """
    x = np.asarray(x, dtype=np.float64).copy()
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn(x)
        flat[i] = orig - h
        lo = fn(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * h)
    return g
