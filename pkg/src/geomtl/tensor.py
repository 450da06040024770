"""Dense NCHW tensors with reverse-mode automatic differentiation.

The op set is sized for a small convolutional encoder/decoder and for
scalar loss algebra: conv2d, relu, maxpool2d, upsample_nearest,
concat_channels, add, softmax_channels, softplus, elementwise arithmetic,
log/exp/sum/mean, and clamp_min. Values are float32 or float64 numpy
arrays (float64 by default, so gradient checks are exact enough);
extended precision passes through untouched where the platform has it,
which finite-difference oracles use to keep subtraction noise below
their tolerance.

Every op records its inputs and a backward closure; `backward` on a
scalar root replays the closures in exact reverse creation order and
accumulates gradients into every `requires_grad` leaf it reaches.
"""

from __future__ import annotations

import itertools
import threading
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class NonFiniteError(ValueError):
    """A tensor holds NaN or Inf."""


class GraphError(RuntimeError):
    """Backward invoked on an unusable root (non-scalar, detached, or spent)."""


_FLOAT_DTYPES = (np.float32, np.float64, np.longdouble)
_seq_counter = itertools.count()
# per thread so one thread's evaluation cannot stop another's recording
_grad_state = threading.local()


class no_grad:
    """Context manager that suspends graph recording (used for evaluation)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _grad_state.enabled = False
        return self

    def __exit__(self, *exc):
        _grad_state.enabled = self._prev
        return False


def grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "_spent")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            # ascontiguousarray would flatten 0-d scalars to 1-d, so gate it
            arr = np.ascontiguousarray(arr)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor holds non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._seq = next(_seq_counter)
        self._spent = False

    @classmethod
    def _op(cls, data: np.ndarray, parents: tuple, backward_fn) -> "Tensor":
        """Wrap an op result. `backward_fn(out)` reads out.grad and
        accumulates into the parents; the graph edge is pruned entirely
        when no gradient can flow."""
        t = object.__new__(cls)
        t.data = data
        t.grad = None
        t._seq = next(_seq_counter)
        t._spent = False
        if grad_enabled() and any(p.requires_grad for p in parents):
            t.requires_grad = True
            t._parents = parents
            t._backward = lambda: backward_fn(t)
        else:
            t.requires_grad = False
            t._parents = ()
            t._backward = None
        return t

    # ---- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        return (f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, "
                f"requires_grad={self.requires_grad})")

    def zero_grad(self):
        self.grad = None

    def _accum(self, contrib: np.ndarray, own: bool):
        # own=True promises contrib is freshly allocated and never reused by
        # the caller, so it may be adopted and mutated in place later.
        if not isinstance(contrib, np.ndarray):
            contrib = np.asarray(contrib)  # 0-d math yields numpy scalars
            own = True
        if self.grad is None:
            self.grad = contrib if own else contrib.copy()
        else:
            np.add(self.grad, contrib, out=self.grad)

    # ---- elementwise / scalar arithmetic --------------------------------

    def _check_operand(self, other) -> "Tensor | None":
        """Return the Tensor operand, None for a python scalar, or raise."""
        if isinstance(other, Tensor):
            if (other.data.shape != self.data.shape
                    and other.data.shape != () and self.data.shape != ()):
                raise ShapeError(
                    f"operand shapes differ: {self.data.shape} vs {other.data.shape}")
            if other.data.dtype != self.data.dtype:
                raise ShapeError(
                    f"operand dtypes differ: {self.data.dtype} vs {other.data.dtype}")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return None
        raise TypeError(f"unsupported operand type {type(other).__name__}")

    def __add__(self, other):
        o = self._check_operand(other)
        if o is None:
            c = self.data.dtype.type(other)

            def backward_fn(out, a=self):
                a._accum(out.grad, own=False)

            return Tensor._op(self.data + c, (self,), backward_fn)

        def backward_fn(out, a=self, b=o):
            g = out.grad
            if a.requires_grad:
                a._accum(_reduce_to(g, a.data.shape), own=g.shape != a.data.shape)
            if b.requires_grad:
                b._accum(_reduce_to(g, b.data.shape), own=g.shape != b.data.shape)

        return Tensor._op(self.data + o.data, (self, o), backward_fn)

    def __radd__(self, other):
        return self.__add__(other)

    def __mul__(self, other):
        o = self._check_operand(other)
        if o is None:
            c = self.data.dtype.type(other)

            def backward_fn(out, a=self, c=c):
                a._accum(out.grad * c, own=True)

            return Tensor._op(self.data * c, (self,), backward_fn)

        def backward_fn(out, a=self, b=o):
            g = out.grad
            if a.requires_grad:
                a._accum(_reduce_to(g * b.data, a.data.shape), own=True)
            if b.requires_grad:
                b._accum(_reduce_to(g * a.data, b.data.shape), own=True)

        return Tensor._op(self.data * o.data, (self, o), backward_fn)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return self.__mul__(-1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return self.__add__(other.__neg__())
        return self.__add__(-other)

    def __rsub__(self, other):
        return self.__neg__().__add__(other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self.__mul__(other.reciprocal())
        return self.__mul__(1.0 / other)

    def reciprocal(self) -> "Tensor":
        def backward_fn(out, a=self):
            a._accum(-out.grad * out.data * out.data, own=True)

        return Tensor._op(1.0 / self.data, (self,), backward_fn)

    def log(self) -> "Tensor":
        if np.any(self.data <= 0):
            raise ValueError("log requires strictly positive values")

        def backward_fn(out, a=self):
            a._accum(out.grad / a.data, own=True)

        return Tensor._op(np.log(self.data), (self,), backward_fn)

    def exp(self) -> "Tensor":
        def backward_fn(out, a=self):
            a._accum(out.grad * out.data, own=True)

        return Tensor._op(np.exp(self.data), (self,), backward_fn)

    def clamp_min(self, floor: float) -> "Tensor":
        """max(x, floor) elementwise; gradient is zero where the floor bites."""
        mask = self.data > floor

        def backward_fn(out, a=self, mask=mask):
            a._accum(out.grad * mask, own=True)

        return Tensor._op(np.maximum(self.data, self.data.dtype.type(floor)),
                          (self,), backward_fn)

    def sum(self) -> "Tensor":
        def backward_fn(out, a=self):
            a._accum(np.full(a.data.shape, out.grad, dtype=a.data.dtype), own=True)

        return Tensor._op(np.asarray(self.data.sum(), dtype=self.data.dtype),
                          (self,), backward_fn)

    def mean(self) -> "Tensor":
        n = self.data.size

        def backward_fn(out, a=self, n=n):
            a._accum(np.full(a.data.shape, out.grad / n, dtype=a.data.dtype), own=True)

        return Tensor._op(np.asarray(self.data.mean(), dtype=self.data.dtype),
                          (self,), backward_fn)

    def backward(self):
        backward(self)


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    # only scalar<->array mixing is allowed by the binary ops
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum(), dtype=g.dtype)
    raise ShapeError(f"cannot reduce gradient of shape {g.shape} to {shape}")


def backward(root: Tensor) -> None:
    """Reverse pass from a scalar produced through the graph.

    Populates `.grad` on every requires_grad leaf that contributed to the
    root. The recorded graph and intermediate grads are released as the
    pass consumes them; a second backward on the same root raises.
    """
    if root.data.size != 1:
        raise GraphError(f"backward root must be scalar, got shape {root.data.shape}")
    if root._spent:
        raise GraphError("backward already ran for this root; rebuild the graph first")
    if root._backward is None:
        raise GraphError("root is detached from any recorded graph")

    nodes = []
    stack = [root]
    seen = {id(root)}
    while stack:
        t = stack.pop()
        nodes.append(t)
        for p in t._parents:
            if p._backward is not None and id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    nodes.sort(key=lambda t: t._seq, reverse=True)

    root.grad = np.ones_like(root.data)
    for t in nodes:
        fn = t._backward
        t._backward = None
        t._parents = ()
        t._spent = True
        fn()
        t.grad = None


# ---- layer ops ----------------------------------------------------------


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what} holds non-finite values")


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    """Return (cols, out_h, out_w); cols has shape (N, Ho, Wo, C*k*k)."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho, wo, c * k * k)
    return cols, ho, wo


def _corr2d_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stride-1 valid cross-correlation of x (N,C,H,W) with w (Cout,C,k,k)."""
    k = w.shape[2]
    cols, ho, wo = _im2col(x, k, 1, 0)
    out = cols.reshape(-1, cols.shape[-1]) @ w.reshape(w.shape[0], -1).T
    return np.ascontiguousarray(out.reshape(x.shape[0], ho, wo, w.shape[0]).transpose(0, 3, 1, 2))


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1,
           padding: str = "same") -> Tensor:
    """2-D convolution (cross-correlation), NCHW, square kernels.

    "same" padding keeps the spatial grid at stride 1 and requires an odd
    kernel; "valid" uses no padding. Differentiable w.r.t. input, kernel,
    and bias.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be N,C,H,W, got {x.data.shape}")
    if kernel.data.ndim != 4 or kernel.data.shape[2] != kernel.data.shape[3]:
        raise ShapeError(f"conv2d kernel must be Cout,Cin,k,k, got {kernel.data.shape}")
    cout, cin, k, _ = kernel.data.shape
    if x.data.shape[1] != cin:
        raise ShapeError(f"input channels {x.data.shape[1]} do not match kernel Cin {cin}")
    if bias.data.shape != (cout,):
        raise ShapeError(f"bias shape {bias.data.shape} must be ({cout},)")
    if padding not in ("same", "valid"):
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    if padding == "same" and k % 2 == 0:
        raise ShapeError("same padding requires an odd kernel extent")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    _check_finite(x.data, "conv2d input")
    _check_finite(kernel.data, "conv2d kernel")
    _check_finite(bias.data, "conv2d bias")

    pad = (k - 1) // 2 if padding == "same" else 0
    n, _, h, w_in = x.data.shape
    if h + 2 * pad < k or w_in + 2 * pad < k:
        raise ShapeError("input smaller than kernel")
    cols, ho, wo = _im2col(x.data, k, stride, pad)
    flat = cols.reshape(-1, cin * k * k) @ kernel.data.reshape(cout, -1).T
    flat += bias.data
    out_data = np.ascontiguousarray(flat.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def backward_fn(out, x=x, kernel=kernel, bias=bias, cols=cols,
                    stride=stride, pad=pad, k=k, h=h, w_in=w_in):
        g = out.grad
        n, cout, ho, wo = g.shape
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        if bias.requires_grad:
            bias._accum(gm.sum(axis=0), own=True)
        if kernel.requires_grad:
            gw = gm.T @ cols.reshape(-1, cols.shape[-1])
            kernel._accum(gw.reshape(kernel.data.shape), own=True)
        if x.requires_grad:
            # gradient to the input is a full correlation of the (dilated)
            # upstream gradient with the spatially flipped kernel
            if stride > 1:
                gd = np.zeros((n, cout, (ho - 1) * stride + 1, (wo - 1) * stride + 1),
                              dtype=g.dtype)
                gd[:, :, ::stride, ::stride] = g
            else:
                gd = g
            wt = np.ascontiguousarray(kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            full = _corr2d_valid(
                np.pad(gd, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1))), wt)
            hp, wp = h + 2 * pad, w_in + 2 * pad
            if full.shape[2] != hp or full.shape[3] != wp:
                canvas = np.zeros((n, x.data.shape[1], hp, wp), dtype=g.dtype)
                canvas[:, :, : full.shape[2], : full.shape[3]] = full
                full = canvas
            x._accum(np.ascontiguousarray(full[:, :, pad: pad + h, pad: pad + w_in]),
                     own=True)

    return Tensor._op(out_data, (x, kernel, bias), backward_fn)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient 0 at the kink."""
    mask = x.data > 0

    def backward_fn(out, x=x, mask=mask):
        x._accum(out.grad * mask, own=True)

    return Tensor._op(np.maximum(x.data, 0), (x,), backward_fn)


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x), computed stably; keeps regression outputs positive."""
    out_data = np.maximum(x.data, 0) + np.log1p(np.exp(-np.abs(x.data)))

    def backward_fn(out, x=x):
        z = x.data
        sig = np.empty_like(z)
        pos = z >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        sig[~pos] = ez / (1.0 + ez)
        x._accum(out.grad * sig, own=True)

    return Tensor._op(out_data, (x,), backward_fn)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; ties route to the first element in
    row-major window order."""
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d needs even spatial dims, got {h}x{w}")
    v = np.ascontiguousarray(
        x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    ).reshape(n, c, h // 2, w // 2, 4)
    idx = v.argmax(axis=-1)
    out_data = np.ascontiguousarray(np.take_along_axis(v, idx[..., None], axis=-1)[..., 0])

    def backward_fn(out, x=x, idx=idx, n=n, c=c, h=h, w=w):
        gv = np.zeros((n, c, h // 2, w // 2, 4), dtype=out.grad.dtype)
        np.put_along_axis(gv, idx[..., None], out.grad[..., None], axis=-1)
        gx = gv.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        x._accum(np.ascontiguousarray(gx).reshape(n, c, h, w), own=True)

    return Tensor._op(out_data, (x,), backward_fn)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    """Replicate each value into a factor x factor block; gradient sums
    over each block."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    out_data = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward_fn(out, x=x, factor=factor):
        n, c, h, w = x.data.shape
        x._accum(out.grad.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)), own=True)

    return Tensor._op(out_data, (x,), backward_fn)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis; order preserved, gradient splits back."""
    if len(xs) == 0:
        raise ValueError("concat_channels needs at least one tensor")
    first = xs[0].data
    for t in xs[1:]:
        if (t.data.ndim != first.ndim or t.data.shape[0] != first.shape[0]
                or t.data.shape[2:] != first.shape[2:]):
            raise ShapeError(f"non-channel dims differ: {first.shape} vs {t.data.shape}")
        if t.data.dtype != first.dtype:
            raise ShapeError("concat_channels operands must share a dtype")
    out_data = np.concatenate([t.data for t in xs], axis=1)
    splits = np.cumsum([t.data.shape[1] for t in xs])[:-1]

    def backward_fn(out, xs=tuple(xs), splits=splits):
        parts = np.split(out.grad, splits, axis=1)
        for t, g in zip(xs, parts):
            if t.requires_grad:
                t._accum(g, own=False)

    return Tensor._op(out_data, tuple(xs), backward_fn)


def add(xs: Sequence[Tensor]) -> Tensor:
    """N-ary elementwise sum, evaluated as a fixed left fold."""
    if len(xs) == 0:
        raise ValueError("add needs at least one tensor")
    first = xs[0].data
    for t in xs[1:]:
        if t.data.shape != first.shape:
            raise ShapeError(f"add operands differ in shape: {first.shape} vs {t.data.shape}")
        if t.data.dtype != first.dtype:
            raise ShapeError("add operands must share a dtype")
    out_data = first.copy()
    for t in xs[1:]:
        out_data += t.data

    def backward_fn(out, xs=tuple(xs)):
        for t in xs:
            if t.requires_grad:
                t._accum(out.grad, own=False)

    return Tensor._op(out_data, tuple(xs), backward_fn)


def softmax_channels(x: Tensor) -> Tensor:
    """Per-pixel distribution over channels, max-subtracted for stability."""
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=1, keepdims=True)

    def backward_fn(out, x=x):
        g = out.grad
        p = out.data
        x._accum(p * (g - (g * p).sum(axis=1, keepdims=True)), own=True)

    return Tensor._op(out_data, (x,), backward_fn)
