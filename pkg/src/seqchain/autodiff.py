"""Reverse-mode automatic differentiation over dense numpy arrays.

Values live in :class:`Tensor`; every primitive applied while a :class:`Tape`
is active records a node, and one backward sweep per tape pushes gradients to
each leaf that asked for them.  Tapes are rebuilt on every forward pass
(define-by-run), which is what lets the chain run a different number of steps
per utterance.

float64 is the default substrate.  float32 works and is used for training
speed, but gradient checks should stay in float64.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericError, ShapeError

_TAPES: list["Tape"] = []
_CHECKED = False


def set_checked(flag: bool) -> None:
    """Toggle NaN/Inf rejection at every primitive boundary (slow)."""
    global _CHECKED
    _CHECKED = bool(flag)


def checked() -> bool:
    return _CHECKED


class Tensor:
    """Dense real array, optionally tracked for reverse-mode gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # arithmetic sugar; everything routes through the primitive registry
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

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __rtruediv__(self, other):
        return mul(power(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return sum_along(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_along(self, axis=axis, keepdims=keepdims)


class _Node:
    __slots__ = ("out", "inputs", "bwd")


class Tape:
    """Recorded forward pass; supports exactly one backward sweep.

    Use as a context manager; primitives applied inside the block append
    nodes in execution order, which is already a topological order.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._produced: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def reset(self) -> None:
        """Permit another backward sweep over the same recorded nodes."""
        self._consumed = False

    def backward(self, output: Tensor) -> dict:
        """Sweep gradients from ``output`` back to every requires-grad leaf.

        Returns a map {leaf Tensor: gradient array} and also accumulates into
        each leaf's ``.grad``.  Fan-out adds, as differentiation demands.
        """
        if self._consumed:
            raise RuntimeError("tape already consumed; call reset() to sweep again")
        if output.data.size != 1:
            raise ShapeError("backward requires a scalar output")
        if id(output) not in self._produced:
            raise ValueError("output does not lie on this tape")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        holders: dict[int, Tensor] = {id(output): output}
        for node in reversed(self._nodes):
            g_out = grads.pop(id(node.out), None)
            if g_out is None:
                continue
            holders.pop(id(node.out), None)
            for inp, g in zip(node.inputs, node.bwd(g_out)):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                    holders[key] = inp

        leaf_grads: dict[Tensor, np.ndarray] = {}
        for key, g in grads.items():
            leaf = holders[key]
            if g.shape != leaf.data.shape:
                raise ShapeError(
                    f"gradient shape {g.shape} does not match leaf {leaf.data.shape}"
                )
            g = np.ascontiguousarray(g, dtype=leaf.data.dtype)
            leaf_grads[leaf] = g
            leaf.grad = g if leaf.grad is None else leaf.grad + g
        return leaf_grads


def active_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def record_op(out_data: np.ndarray, inputs: Sequence[Tensor], bwd: Callable) -> Tensor:
    """Wrap ``out_data`` as a Tensor, recording ``bwd`` on the active tape.

    ``bwd`` maps the output gradient array to one gradient array (or None)
    per input.  This is the extension point for composite operations with
    hand-written adjoints; the CTC loss uses it.
    """
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        node = _Node()
        node.out = out
        node.inputs = tuple(inputs)
        node.bwd = bwd
        tape._nodes.append(node)
        tape._produced.add(id(out))
    return out


# ---------------------------------------------------------------------------
# primitive registry

_PRIMITIVES: dict[str, Callable] = {}


def _register(kind: str):
    def deco(fn):
        _PRIMITIVES[kind] = fn
        return fn

    return deco


def apply_primitive(kind: str, inputs, attrs: Optional[dict] = None) -> Tensor:
    """Apply one primitive by name.

    Non-Tensor inputs are wrapped as constants using the dtype of the first
    Tensor input, so float32 graphs are not silently promoted.
    """
    fn = _PRIMITIVES.get(kind)
    if fn is None:
        raise ShapeError(f"unknown primitive {kind!r}")
    ref_dtype = None
    for t in inputs:
        if isinstance(t, Tensor):
            ref_dtype = t.data.dtype
            break
    wrapped = tuple(
        t if isinstance(t, Tensor) else Tensor(t, dtype=ref_dtype) for t in inputs
    )
    if _CHECKED:
        for t in wrapped:
            if not np.all(np.isfinite(t.data)):
                raise NumericError(f"non-finite values entering {kind!r}")
    return fn(*wrapped, **(attrs or {}))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


@_register("add")
def _add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return record_op(out, (a, b), bwd)


@_register("sub")
def _sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return record_op(out, (a, b), bwd)


@_register("mul")
def _mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return record_op(out, (a, b), bwd)


@_register("matmul")
def _matmul(a: Tensor, b: Tensor) -> Tensor:
    A, B = a.data, b.data
    if A.ndim not in (1, 2) or B.ndim not in (1, 2):
        raise ShapeError("matmul supports rank-1 and rank-2 operands only")
    if A.shape[-1] != B.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {A.shape} @ {B.shape}")
    out = A @ B

    def bwd(g):
        A2 = A if A.ndim == 2 else A[None, :]
        B2 = B if B.ndim == 2 else B[:, None]
        g2 = g.reshape(A2.shape[0], B2.shape[1])
        gA = g2 @ B2.T
        gB = A2.T @ g2
        if A.ndim == 1:
            gA = gA[0]
        if B.ndim == 1:
            gB = gB[:, 0]
        return gA, gB

    return record_op(out, (a, b), bwd)


def _norm_conv_operands(x: np.ndarray, k: np.ndarray):
    """Channels-last normalization shared by conv1d and conv_transpose1d.

    Signals are (T,) or (T, Cin); kernels grow one axis per present channel
    axis: (L,), (L, C) or (L, Cin, Cout).  Returns rank-2 signal, rank-3
    kernel and the squeeze flags needed to restore the caller's ranks.
    """
    if x.ndim == 1:
        X = x[:, None]
        squeeze_in = True
        if k.ndim == 1:
            K, squeeze_out = k[:, None, None], True
        elif k.ndim == 2:
            K, squeeze_out = k[:, None, :], False
        else:
            raise ShapeError("rank-1 signal takes a rank-1 or rank-2 kernel")
    elif x.ndim == 2:
        X = x
        squeeze_in = False
        if k.ndim == 2:
            K, squeeze_out = k[:, :, None], True
        elif k.ndim == 3:
            K, squeeze_out = k, False
        else:
            raise ShapeError("rank-2 signal takes a rank-2 or rank-3 kernel")
    else:
        raise ShapeError("conv signal must be rank 1 or 2 (time, channels)")
    if K.shape[1] != X.shape[1]:
        raise ShapeError(
            f"kernel expects {K.shape[1]} input channels, signal has {X.shape[1]}"
        )
    return X, K, squeeze_in, squeeze_out


@_register("conv1d")
def _conv1d(signal: Tensor, kernel: Tensor, stride: int = 1, dilation: int = 1) -> Tensor:
    if stride < 1 or dilation < 1:
        raise ShapeError("stride and dilation must be >= 1")
    X, K, squeeze_in, squeeze_out = _norm_conv_operands(signal.data, kernel.data)
    T, Cin = X.shape
    L, _, Cout = K.shape
    span = (L - 1) * dilation + 1
    if T < span:
        raise ShapeError(f"signal length {T} shorter than kernel span {span}")
    Tp = (T - span) // stride + 1

    Xc = np.ascontiguousarray(X)
    s0, s1 = Xc.strides
    windows = np.lib.stride_tricks.as_strided(
        Xc, shape=(Tp, L, Cin), strides=(stride * s0, dilation * s0, s1)
    )
    cols = windows.reshape(Tp, L * Cin)  # copies; windows overlap
    Kf = K.reshape(L * Cin, Cout)
    out = cols @ Kf

    def bwd(g):
        G = g.reshape(Tp, Cout)
        gK = (cols.T @ G).reshape(K.shape)
        taps = (G @ Kf.T).reshape(Tp, L, Cin)
        gX = np.zeros_like(X)
        hi = (Tp - 1) * stride + 1
        for j in range(L):
            gX[j * dilation : j * dilation + hi : stride] += taps[:, j, :]
        gsig = gX[:, 0] if squeeze_in else gX
        return gsig, gK.reshape(kernel.data.shape)

    out_arr = out[:, 0] if squeeze_out else out
    return record_op(out_arr, (signal, kernel), bwd)


@_register("conv_transpose1d")
def _conv_transpose1d(signal: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    X, K, squeeze_in, squeeze_out = _norm_conv_operands(signal.data, kernel.data)
    T, Cin = X.shape
    L, _, Cout = K.shape
    To = (T - 1) * stride + L
    hi = (T - 1) * stride + 1
    out = np.zeros((To, Cout), dtype=np.result_type(X, K))
    for j in range(L):
        out[j : j + hi : stride] += X @ K[j]

    def bwd(g):
        G = g.reshape(To, Cout)
        gX = np.zeros_like(X)
        gK = np.zeros_like(K)
        for j in range(L):
            Gj = G[j : j + hi : stride]
            gX += Gj @ K[j].T
            gK[j] = X.T @ Gj
        gsig = gX[:, 0] if squeeze_in else gX
        return gsig, gK.reshape(kernel.data.shape)

    out_arr = out[:, 0] if squeeze_out else out
    return record_op(out_arr, (signal, kernel), bwd)


@_register("concat")
def _concat(*tensors: Tensor, axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one input")
    arrs = [t.data for t in tensors]
    out = np.concatenate(arrs, axis=axis)
    splits = np.cumsum([a.shape[axis] for a in arrs])[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return record_op(out, tensors, bwd)


@_register("slice")
def _slice(t: Tensor, axis: int = 0, start: int = 0, stop: Optional[int] = None) -> Tensor:
    x = t.data
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"slice axis {axis} out of range for rank {x.ndim}")
    axis = axis % x.ndim
    lo, hi, _ = slice(start, stop).indices(x.shape[axis])
    hi = max(lo, hi)
    idx = tuple(slice(lo, hi) if i == axis else slice(None) for i in range(x.ndim))
    out = x[idx].copy()

    def bwd(g):
        gx = np.zeros_like(x)
        gx[idx] = g.reshape(out.shape)
        return (gx,)

    return record_op(out, (t,), bwd)


@_register("pad")
def _pad(t: Tensor, axis: int = 0, before: int = 0, after: int = 0) -> Tensor:
    if before < 0 or after < 0:
        raise ShapeError("pad amounts must be >= 0")
    x = t.data
    axis = axis % x.ndim
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    out = np.pad(x, widths)
    idx = tuple(
        slice(before, before + x.shape[i]) if i == axis else slice(None)
        for i in range(x.ndim)
    )

    def bwd(g):
        return (g[idx],)

    return record_op(out, (t,), bwd)


@_register("sigmoid")
def _sigmoid(t: Tensor) -> Tensor:
    x = t.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return record_op(out, (t,), bwd)


@_register("tanh")
def _tanh(t: Tensor) -> Tensor:
    out = np.tanh(t.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return record_op(out, (t,), bwd)


@_register("relu")
def _relu(t: Tensor) -> Tensor:
    x = t.data
    out = np.maximum(x, 0.0)

    def bwd(g):
        return (g * (x > 0),)

    return record_op(out, (t,), bwd)


@_register("parametric_relu")
def _parametric_relu(t: Tensor, alpha: Tensor) -> Tensor:
    x = t.data
    a = alpha.data
    neg = x < 0
    out = np.where(neg, a * x, x)

    def bwd(g):
        gx = g * np.where(neg, a, 1.0)
        ga = _unbroadcast(g * np.where(neg, x, 0.0), a.shape)
        return gx, ga

    return record_op(out, (t, alpha), bwd)


@_register("exp")
def _exp(t: Tensor) -> Tensor:
    out = np.exp(t.data)

    def bwd(g):
        return (g * out,)

    return record_op(out, (t,), bwd)


@_register("log")
def _log(t: Tensor) -> Tensor:
    x = t.data
    out = np.log(x)

    def bwd(g):
        return (g / x,)

    return record_op(out, (t,), bwd)


@_register("power")
def _power(t: Tensor, exponent: float = 1.0) -> Tensor:
    x = t.data
    p = float(exponent)
    out = x**p

    def bwd(g):
        if p == 0.0:
            return (np.zeros_like(x),)
        return (g * p * x ** (p - 1.0),)

    return record_op(out, (t,), bwd)


@_register("sum")
def _sum(t: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = t.data
    out = x.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return record_op(out, (t,), bwd)


@_register("mean")
def _mean(t: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = t.data
    out = x.mean(axis=axis, keepdims=keepdims)
    count = x.size if axis is None else x.shape[axis]

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape),)

    return record_op(out, (t,), bwd)


@_register("softmax")
def _softmax(t: Tensor, axis: int = -1) -> Tensor:
    x = t.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return record_op(out, (t,), bwd)


@_register("log_softmax")
def _log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    x = t.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return record_op(out, (t,), bwd)


# ---------------------------------------------------------------------------
# public wrappers routing through apply_primitive


def add(a, b) -> Tensor:
    return apply_primitive("add", (a, b))


def sub(a, b) -> Tensor:
    return apply_primitive("sub", (a, b))


def mul(a, b) -> Tensor:
    return apply_primitive("mul", (a, b))


def matmul(a, b) -> Tensor:
    return apply_primitive("matmul", (a, b))


def conv1d(signal, kernel, stride: int = 1, dilation: int = 1) -> Tensor:
    return apply_primitive(
        "conv1d", (signal, kernel), {"stride": stride, "dilation": dilation}
    )


def conv_transpose1d(signal, kernel, stride: int = 1) -> Tensor:
    return apply_primitive("conv_transpose1d", (signal, kernel), {"stride": stride})


def concat(tensors, axis: int = 0) -> Tensor:
    return apply_primitive("concat", tuple(tensors), {"axis": axis})


def slice_axis(t, axis: int = 0, start: int = 0, stop: Optional[int] = None) -> Tensor:
    return apply_primitive("slice", (t,), {"axis": axis, "start": start, "stop": stop})


def pad(t, axis: int = 0, before: int = 0, after: int = 0) -> Tensor:
    return apply_primitive("pad", (t,), {"axis": axis, "before": before, "after": after})


def sigmoid(t) -> Tensor:
    return apply_primitive("sigmoid", (t,))


def tanh(t) -> Tensor:
    return apply_primitive("tanh", (t,))


def relu(t) -> Tensor:
    return apply_primitive("relu", (t,))


def parametric_relu(t, alpha) -> Tensor:
    return apply_primitive("parametric_relu", (t, alpha))


def exp(t) -> Tensor:
    return apply_primitive("exp", (t,))


def log(t) -> Tensor:
    return apply_primitive("log", (t,))


def power(t, exponent) -> Tensor:
    return apply_primitive("power", (t,), {"exponent": float(exponent)})


def sum_along(t, axis=None, keepdims=False) -> Tensor:
    return apply_primitive("sum", (t,), {"axis": axis, "keepdims": keepdims})


def mean_along(t, axis=None, keepdims=False) -> Tensor:
    return apply_primitive("mean", (t,), {"axis": axis, "keepdims": keepdims})


def softmax(t, axis: int = -1) -> Tensor:
    return apply_primitive("softmax", (t,), {"axis": axis})


def log_softmax(t, axis: int = -1) -> Tensor:
    return apply_primitive("log_softmax", (t,), {"axis": axis})


def primitive_kinds() -> tuple:
    return tuple(sorted(_PRIMITIVES))


def finite_diff_gradient(f, point, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, the test oracle.

    ``f`` receives a float64 array of ``point``'s shape and must return a
    finite float.  Cost is two evaluations per coordinate, so keep the point
    small.
    """
    base = point.data if isinstance(point, Tensor) else point
    x = np.array(base, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("non-finite evaluation during finite differences")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad
