"""Dense float64 tensors with reverse-mode automatic differentiation.

Records operations on an explicit tape (a context manager); the backward pass
replays the tape in reverse construction order, which is a valid topological
order by construction.  Tensors are immutable after creation except for the
``grad`` slot, and gradients accumulate additively across fan-out.

Typical use::

    with Tape() as tape:
        loss = model_loss(...)
    tape.backward(loss)
    # parameters now hold .grad

Outside a Tape (or under ``no_grad()``) the same ops run without recording.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager

import numpy as np

from .backend import kernels
from .errors import ContractError, ShapeError

_SQRT1_2 = math.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_state = threading.local()


def _current_tape():
    return getattr(_state, "tape", None)


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable recording inside the block (evaluation mode)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tape:
    """Ordered record of operations for one backward pass.

    Confined to the thread that opened it; nested tapes shadow outer ones.
    """

    def __init__(self):
        self.nodes = []  # (output tensor, backward closure)
        self._outer = None

    def __enter__(self):
        self._outer = _current_tape()
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._outer
        return False

    def backward(self, loss: "Tensor") -> None:
        """Populate gradients of loss w.r.t. every recorded requires_grad tensor."""
        if loss.data.size != 1:
            raise ContractError(
                f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ContractError("loss is not connected to this tape")
        loss.grad = np.ones_like(loss.data)
        for out, bwd in reversed(self.nodes[: loss._idx + 1]):
            if out.grad is not None:
                bwd(out.grad)


def backward(loss: "Tensor") -> None:
    """Run the backward pass of the tape that produced ``loss``."""
    if loss._tape is None:
        raise ContractError("loss is not connected to a tape")
    loss._tape.backward(loss)


class Tensor:
    """N-dimensional float64 array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_idx")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._tape = None
        self._idx = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._tape = None
        t._idx = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}{flag})"

    # operator sugar; all real work happens in the module-level functions
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor) or not np.isscalar(other):
            raise TypeError("tensor division is only supported by scalars")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64))


def _record(out: Tensor, inputs, bwd, _op: str) -> None:
    tape = _current_tape()
    if tape is None or not _grad_enabled():
        return
    if not any(t.requires_grad for t in inputs):
        return
    out.requires_grad = True
    out._tape = tape
    out._idx = len(tape.nodes)
    tape.nodes.append((out, bwd))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)  # own a copy; += below is safe
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / linear algebra ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor._wrap(a.data + b.data)
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    _record(out, (a, b), bwd, "add")
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor._wrap(a.data - b.data)
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}") from None

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    _record(out, (a, b), bwd, "sub")
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor._wrap(a.data * b.data)
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None
    ad, bd = a.data, b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * bd, a.shape))
        _accum(b, _unbroadcast(g * ad, b.shape))

    _record(out, (a, b), bwd, "mul")
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor._wrap(a.data @ b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        _accum(a, g @ bd.swapaxes(-1, -2))
        _accum(b, ad.swapaxes(-1, -2) @ g)

    _record(out, (a, b), bwd, "matmul")
    return out


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(a.data.reshape(shape))
    old = a.shape

    def bwd(g):
        _accum(a, g.reshape(old))

    _record(out, (a,), bwd, "reshape")
    return out


def transpose(a: Tensor, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    out = Tensor._wrap(np.transpose(a.data, axes))
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accum(a, np.transpose(g, inv))

    _record(out, (a,), bwd, "transpose")
    return out


def roll(a: Tensor, shifts, axes) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(np.roll(a.data, shifts, axes))
    neg = tuple(-s for s in np.atleast_1d(shifts))

    def bwd(g):
        _accum(a, np.roll(g, neg, axes))

    _record(out, (a,), bwd, "roll")
    return out


def tsum(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(a.data.sum(axis=axis))
    shape = a.shape

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), shape))

    _record(out, (a,), bwd, "sum")
    return out


def tmean(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def tabs(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(np.abs(a.data))
    sgn = np.sign(a.data)

    def bwd(g):
        _accum(a, g * sgn)

    _record(out, (a,), bwd, "abs")
    return out


def softmax(x: Tensor, axis: int) -> Tensor:
    x = _as_tensor(x)
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ContractError(f"softmax axis {axis} out of range for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._wrap(s)

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        _accum(x, s * (g - dot))

    _record(out, (x,), bwd, "softmax")
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean/unit variance, then scale and shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor._wrap(xhat * gamma.data + beta.data)
    gdat = gamma.data

    def bwd(g):
        red = tuple(range(g.ndim - 1))
        _accum(gamma, (g * xhat).sum(axis=red))
        _accum(beta, g.sum(axis=red))
        gx = g * gdat
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        _accum(x, inv * (gx - m1 - xhat * m2))

    _record(out, (x, gamma, beta), bwd, "layer_norm")
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF gelu: x * Phi(x)."""
    x = _as_tensor(x)
    phi = 0.5 * (1.0 + kernels.erf(x.data * _SQRT1_2))
    out = Tensor._wrap(x.data * phi)
    xd = x.data

    def bwd(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
        _accum(x, g * (phi + xd * pdf))

    _record(out, (x,), bwd, "gelu")
    return out


def conv2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Valid cross-correlation of x [Cin,H,W] with kernels w [Cout,Cin,k,k]."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: need x [C,H,W] and w [O,C,k,k], got {x.shape} and {w.shape}")
    cin, H, W = x.shape
    cout, wcin, k, k2 = w.shape
    if wcin != cin or k != k2:
        raise ShapeError(f"conv2d: kernel {w.shape} does not match input {x.shape}")
    if k > H or k > W:
        raise ContractError(f"conv2d: kernel {k} larger than input {H}x{W}")
    if (H - k) % stride or (W - k) % stride:
        raise ContractError(
            f"conv2d: input {H}x{W} minus kernel {k} not divisible by stride {stride}")
    out = Tensor._wrap(kernels.conv2d_forward(x.data, w.data, stride))
    xd, wd = x.data, w.data

    def bwd(g):
        _accum(x, kernels.conv2d_backward_x(g, wd, stride, H, W))
        _accum(w, kernels.conv2d_backward_w(g, xd, stride, k))

    _record(out, (x, w), bwd, "conv2d")
    return out


def pad2d(x: Tensor, p: int) -> Tensor:
    """Zero-pad the last two axes by p on every side."""
    x = _as_tensor(x)
    width = [(0, 0)] * (x.data.ndim - 2) + [(p, p), (p, p)]
    out = Tensor._wrap(np.pad(x.data, width))

    def bwd(g):
        sl = (slice(None),) * (g.ndim - 2) + (slice(p, g.shape[-2] - p),
                                              slice(p, g.shape[-1] - p))
        _accum(x, g[sl])

    _record(out, (x,), bwd, "pad2d")
    return out


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Apply a [D,E] linear map to the last axis of x."""
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1]))
    y = matmul(flat, w)
    if b is not None:
        y = add(y, b)
    return reshape(y, lead + (w.shape[-1],))


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def check_gradients(f, inputs, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the given tensors to a scalar Tensor.  The relative error per
    entry uses a max(1, |analytic|) denominator.  Inputs must have
    requires_grad set; their data is perturbed in place and restored.
    """
    if not 0.0 < h <= 1e-2:
        raise ContractError(f"step size h={h} outside (0, 1e-2]")
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        out = f(*inputs)
        if out.data.size != 1:
            raise ContractError("check_gradients needs a scalar-valued program")
        tape.backward(out)
    analytic = [
        np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs
    ]
    for t in inputs:
        t.grad = None

    def evaluate() -> float:
        with no_grad():
            return float(f(*inputs).data.reshape(()))

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = evaluate()
            flat[i] = orig - h
            fm = evaluate()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            err = abs(gflat[i] - num) / max(1.0, abs(gflat[i]))
            worst = max(worst, err)
    return worst
