"""Small numpy tensor library with tape-based reverse-mode differentiation.

Ops are recorded on the active :class:`Tape` only when one is open and at
least one input requires a gradient, so inference code runs tape-free::

    with Tape() as tape:
        loss = mean(relu(matmul(x, w)))
        tape.backward(loss)
    sgd_step([w], [w.grad], lr=0.01)

Every op has its backward rule registered in :data:`BACKWARD` by name.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32
_dtype = [DEFAULT_DTYPE]
_active: list["Tape"] = []

BACKWARD: dict[str, Callable] = {}


class NumericError(ArithmeticError):
    """A forward value or gradient became NaN or infinite."""


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are created with."""
    _dtype.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _dtype.pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != _dtype[-1]:
            arr = arr.astype(_dtype[-1])
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive applications for one backward pass."""

    def __init__(self):
        self.records: list[tuple[str, tuple[Tensor, ...], Tensor, object]] = []

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError("backward() needs a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for name, inputs, out, ctx in reversed(self.records):
            g = out.grad
            if g is None:
                continue
            grads = BACKWARD[name](ctx, g)
            for inp, gi in zip(inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                gi = np.asarray(gi, dtype=inp.data.dtype)
                if gi.shape != inp.shape:
                    raise ValueError(f"{name} backward produced {gi.shape}, expected {inp.shape}")
                if inp.grad is None:
                    inp.grad = gi.copy()
                else:
                    inp.grad = inp.grad + gi
        for _, _, out, _ in self.records:
            if out.grad is not None and not np.all(np.isfinite(out.grad)):
                raise NumericError("non-finite gradient")


def _check(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced a non-finite value")
    return arr


def _emit(name: str, data: np.ndarray, inputs: tuple[Tensor, ...], ctx=None) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _check(data, name)
    out.grad = None
    out.name = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    if out.requires_grad and _active:
        _active[-1].records.append((name, inputs, out, ctx))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (trailing-aligned broadcasting only)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _same_trailing(a: tuple, b: tuple, op: str) -> None:
    try:
        np.broadcast_shapes(a, b)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a} and {b}") from None


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_trailing(a.shape, b.shape, "add")
    return _emit("add", a.data + b.data, (a, b), (a.shape, b.shape))


def _add_bw(ctx, g):
    sa, sb = ctx
    return _unbroadcast(g, sa), _unbroadcast(g, sb)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_trailing(a.shape, b.shape, "sub")
    return _emit("sub", a.data - b.data, (a, b), (a.shape, b.shape))


def _sub_bw(ctx, g):
    sa, sb = ctx
    return _unbroadcast(g, sa), -_unbroadcast(g, sb)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_trailing(a.shape, b.shape, "mul")
    return _emit("mul", a.data * b.data, (a, b), (a.data, b.data))


def _mul_bw(ctx, g):
    a, b = ctx
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _emit("scale", x.data * x.data.dtype.type(c), (x,), c)


def _scale_bw(c, g):
    return (g * g.dtype.type(c),)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _emit("relu", np.where(mask, x.data, 0).astype(x.data.dtype), (x,), mask)


def _relu_bw(mask, g):
    return (np.where(mask, g, 0),)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """tanh approximation of GELU."""
    x = as_tensor(x)
    v = x.data
    t = np.tanh(_GELU_C * (v + 0.044715 * v ** 3))
    return _emit("gelu", 0.5 * v * (1 + t), (x,), (v, t))


def _gelu_bw(ctx, g):
    v, t = ctx
    dt = (1 - t * t) * _GELU_C * (1 + 3 * 0.044715 * v * v)
    return (g * (0.5 * (1 + t) + 0.5 * v * dt),)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    v = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(v.dtype)
    return _emit("sigmoid", out, (x,), out)


def _sigmoid_bw(p, g):
    return (g * p * (1 - p),)


def log(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _emit("log", out, (x,), x.data)


def _log_bw(v, g):
    return (g / v,)


def clamp(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    mask = (x.data >= lo) & (x.data <= hi)
    return _emit("clamp", np.clip(x.data, lo, hi), (x,), mask)


def _clamp_bw(mask, g):
    return (np.where(mask, g, 0),)


def astype(x, dtype) -> Tensor:
    """Change precision; gradients flow back in the input's dtype."""
    x = as_tensor(x)
    return _emit("astype", x.data.astype(dtype), (x,), x.data.dtype)


def _astype_bw(dtype, g):
    return (g.astype(dtype),)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _emit("matmul", np.matmul(a.data, b.data), (a, b), (a.data, b.data))


def _matmul_bw(ctx, g):
    a, b = ctx
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


# -- normalisation ----------------------------------------------------------

LAYER_NORM_EPS = 1e-5


def layer_norm(x, gamma, beta, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise over the last axis: ``gamma * (x - mean) / sqrt(var + eps) + beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(f"layer_norm: gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return _emit("layer_norm", xhat * gamma.data + beta.data, (x, gamma, beta), (xhat, inv, gamma.data))


def _layer_norm_bw(ctx, g):
    xhat, inv, gamma = ctx
    gx_hat = g * gamma
    gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
    lead = tuple(range(g.ndim - 1))
    return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", p, (x,), (p, axis))


def _softmax_bw(ctx, g):
    p, axis = ctx
    return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    return _emit("log_softmax", out, (x,), (out, axis))


def _log_softmax_bw(ctx, g):
    out, axis = ctx
    return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)


# -- indexing and shape -----------------------------------------------------

def embedding_lookup(table, index) -> Tensor:
    """Rows of ``table`` selected by the integer array ``index``."""
    table = as_tensor(table)
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ValueError(f"embedding index out of range [0, {table.shape[0]})")
    return _emit("embedding_lookup", table.data[index], (table,), (index, table.shape))


def _embedding_bw(ctx, g):
    index, shape = ctx
    gt = np.zeros(shape, dtype=g.dtype)
    np.add.at(gt, index.reshape(-1), g.reshape(-1, shape[-1]))
    return (gt,)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ValueError(f"concat: {exc}") from None
    sizes = [t.shape[axis] for t in ts]
    return _emit("concat", out, ts, (np.cumsum(sizes)[:-1], axis))


def _concat_bw(ctx, g):
    cuts, axis = ctx
    return tuple(np.split(g, cuts, axis=axis))


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    return _emit("reshape", x.data.reshape(shape), (x,), x.shape)


def _reshape_bw(shape, g):
    return (g.reshape(shape),)


def transpose(x, axes: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    return _emit("transpose", np.transpose(x.data, axes), (x,), axes)


def _transpose_bw(axes, g):
    return (np.transpose(g, np.argsort(axes)),)


# -- reductions -------------------------------------------------------------
# Full reductions accumulate in float64; the scalar result stays float64.

def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    if axis is None:
        out = np.asarray(np.sum(x.data, dtype=np.float64))
    else:
        out = x.data.sum(axis=axis)
    return _emit("sum", out, (x,), (x.shape, axis))


def _sum_bw(ctx, g):
    shape, axis = ctx
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, shape),)


def mean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        out = np.asarray(np.sum(x.data, dtype=np.float64) / x.data.size)
        count = x.data.size
    else:
        out = x.data.mean(axis=axis)
        count = x.shape[axis]
    return _emit("mean", out, (x,), (x.shape, axis, count))


def _mean_bw(ctx, g):
    shape, axis, count = ctx
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / count, shape),)


BACKWARD.update({
    "add": _add_bw,
    "sub": _sub_bw,
    "mul": _mul_bw,
    "scale": _scale_bw,
    "relu": _relu_bw,
    "gelu": _gelu_bw,
    "sigmoid": _sigmoid_bw,
    "log": _log_bw,
    "clamp": _clamp_bw,
    "astype": _astype_bw,
    "matmul": _matmul_bw,
    "layer_norm": _layer_norm_bw,
    "softmax": _softmax_bw,
    "log_softmax": _log_softmax_bw,
    "embedding_lookup": _embedding_bw,
    "concat": _concat_bw,
    "reshape": _reshape_bw,
    "transpose": _transpose_bw,
    "sum": _sum_bw,
    "mean": _mean_bw,
})


# -- optimisation and verification -------------------------------------------

def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], lr: float) -> Sequence[Tensor]:
    """Plain SGD, in place: ``p <- p - lr * g``.  ``None`` gradients are skipped."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        p.data -= (p.data.dtype.type(lr) * g).astype(p.data.dtype)
    return params


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-3,
              n_coords: int = 32, seed: int = 0, dtype=np.float64) -> float:
    """Largest relative error between tape and central-difference gradients.

    ``fn`` rebuilds a scalar loss from ``params`` on every call.  Both the
    tape pass and the finite differences run at ``dtype`` (float64 by
    default, so float32 rounding does not swamp the comparison); the
    parameters are restored afterwards.  Coordinates are drawn at random,
    ``n_coords`` per parameter tensor (all of them if the tensor is smaller).
    """
    if not 1e-6 <= eps <= 1e-2:
        raise ValueError("eps should lie in [1e-6, 1e-2]")
    saved = [(p.data, p.grad, p.requires_grad) for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    try:
        with precision(dtype):
            for p in params:
                p.data = p.data.astype(dtype)
                p.grad = None
                p.requires_grad = True
            with Tape() as tape:
                loss = fn()
                tape.backward(loss)
            analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

            def value() -> float:
                v = fn().data
                if not np.all(np.isfinite(v)):
                    raise NumericError("non-finite loss during gradcheck")
                return float(v)

            for p, ga in zip(params, analytic):
                flat = p.data.reshape(-1)
                k = min(n_coords, flat.size)
                for i in rng.choice(flat.size, size=k, replace=False):
                    orig = flat[i]
                    flat[i] = orig + eps
                    fp = value()
                    flat[i] = orig - eps
                    fm = value()
                    flat[i] = orig
                    num = (fp - fm) / (2 * eps)
                    a = float(ga.reshape(-1)[i])
                    denom = max(abs(a), abs(num))
                    if denom == 0.0:
                        continue
                    worst = max(worst, abs(a - num) / max(denom, 1e-8))
    finally:
        for p, (data, grad, req) in zip(params, saved):
            p.data, p.grad, p.requires_grad = data, grad, req
    return worst


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)
