"""A small dense-array reverse-mode autodiff engine on top of numpy.

Each :class:`Tensor` produced by an op keeps references to its inputs and a
closure mapping the output gradient to input gradients.  :func:`backward`
orders the graph into a tape (inputs before consumers) and replays it in
reverse.
"""
from __future__ import annotations

import contextlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32
PARAM_MAGIC = b"CRNNPARM"
PARAM_VERSION = 1

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(value, dtype=None) -> np.ndarray:
    arr = np.asarray(value)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    @classmethod
    def from_op(cls, data, parents, backward, op):
        """Build an op output; ``backward(g)`` returns one gradient (or None) per parent."""
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        out.op = op
        return out

    # -- array-ish accessors
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

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def __len__(self):
        return self.shape[0]

    # -- operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    # -- method forms
    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def backward(self):
        backward(self)


def tensor(data, requires_grad=False, name=None, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name, dtype=dtype)


def _wrap(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype) if dtype is not None else value)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _shape_error(op, *tensors):
    shapes = ", ".join(str(t.shape) for t in tensors)
    return ValueError(f"{op}: incompatible shapes {shapes}")


def _broadcast_check(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(op, a, b) from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _broadcast_check("add", a, b)
    return Tensor.from_op(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _broadcast_check("sub", a, b)
    return Tensor.from_op(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _broadcast_check("mul", a, b)
    return Tensor.from_op(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                   _unbroadcast(g * a.data, b.shape) if b.requires_grad else None), "mul")


def div(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _broadcast_check("div", a, b)
    out = a.data / b.data
    return Tensor.from_op(
        out, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                   _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None), "div")


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent
    return Tensor.from_op(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),), "pow")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor.from_op(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clamp_min(a: Tensor, low: float) -> Tensor:
    mask = ~(a.data < low)  # NaN passes through so divergence stays visible
    return Tensor.from_op(np.maximum(a.data, low).astype(a.dtype), (a,), lambda g: (g * mask,), "clamp_min")


def dropout_mask_apply(a: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a fixed (already rescaled) dropout mask."""
    mask = np.asarray(mask, dtype=a.dtype)
    if mask.shape != a.shape:
        raise _shape_error("dropout_mask_apply", a, Tensor(mask))
    return Tensor.from_op(a.data * mask, (a,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return Tensor.from_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    if sorted(axes) != list(range(a.ndim)):
        raise ValueError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return Tensor.from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def slice_(a: Tensor, index) -> Tensor:
    out = a.data[index]
    basic = _is_basic_index(index)

    def back(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor.from_op(np.array(out, copy=True), (a,), back, "slice")


def concat(tensors, axis=0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise _shape_error("concat", *tensors) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor.from_op(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def stack(tensors, axis=0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    return concat([reshape(t, np.expand_dims(t.data, axis).shape) for t in tensors], axis=axis)


# ---------------------------------------------------------------------------
# reductions


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor.from_op(out, (a,), back, "sum")


sum_over_axis = sum_


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    return sum_(a, axes, keepdims) * (1.0 / count)


def max_(a: Tensor, axis: int) -> Tensor:
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    axis = axis % a.ndim
    idx = np.expand_dims(a.data.argmax(axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def back(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return Tensor.from_op(out, (a,), back, "max")


def softmax(a: Tensor, axis=-1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return Tensor.from_op(
        out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),), "softmax")


softmax_over_axis = softmax


def log_softmax(a: Tensor, axis=-1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out)
    return Tensor.from_op(
        out, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),), "log_softmax")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` with numpy semantics: 1-D operands and leading batch dims allowed."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise _shape_error("matmul", a, b)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise _shape_error("matmul", a, b) from None
    A, B = a.data, b.data

    def back(g):
        ga = gb = None
        if a.ndim == 1 and b.ndim == 1:
            return (g * B if a.requires_grad else None, g * A if b.requires_grad else None)
        if b.ndim == 1:
            if a.requires_grad:
                ga = g[..., None] * B
            if b.requires_grad:
                gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1)
            return ga, gb
        if a.ndim == 1:
            if a.requires_grad:
                ga = _unbroadcast(g[..., None, :] @ np.swapaxes(B, -1, -2), (1,) + a.shape).reshape(a.shape)
            if b.requires_grad:
                gb = _unbroadcast(A[:, None] * g[..., None, :], b.shape)
            return ga, gb
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(B, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(A, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor.from_op(out, (a, b), back, "matmul")


def outer_product(a: Tensor, b: Tensor) -> Tensor:
    """Outer product over the last axis, batched over any leading axes: ``(..., S) x (..., T) -> (..., S, T)``."""
    if a.shape[:-1] != b.shape[:-1]:
        raise _shape_error("outer_product", a, b)
    A, B = a.data, b.data
    out = A[..., :, None] * B[..., None, :]
    return Tensor.from_op(
        out, (a, b),
        lambda g: ((g * B[..., None, :]).sum(-1) if a.requires_grad else None,
                   (g * A[..., :, None]).sum(-2) if b.requires_grad else None), "outer")


# ---------------------------------------------------------------------------
# convolution / pooling (NCHW)


def _same_padding(k: int) -> tuple[int, int]:
    total = k - 1
    return total // 2, total - total // 2


def conv_2d_same(x: Tensor, w: Tensor, b: Tensor | None = None, layout: str = "NCHW") -> Tensor:
    """Stride-1 2-D cross-correlation with zero ``SAME`` padding.

    ``x``: (N, C, H, W), ``w``: (O, C, kh, kw), ``b``: (O,) -> (N, O, H, W).
    With ``layout="CNHW"`` input and output carry the channel axis first,
    which keeps the im2col copies contiguous and is faster on CPU.
    Even kernels put the extra padding row/column after the data.
    """
    if layout not in ("NCHW", "CNHW"):
        raise ValueError(f"conv_2d_same: unknown layout {layout!r}")
    cax = 1 if layout == "NCHW" else 0
    if x.ndim != 4 or w.ndim != 4 or x.shape[cax] != w.shape[1]:
        raise _shape_error("conv_2d_same", x, w)
    if b is not None and b.shape != (w.shape[0],):
        raise _shape_error("conv_2d_same", w, b)
    xd = x.data if cax == 0 else x.data.transpose(1, 0, 2, 3)
    c, n, h, wd = xd.shape
    o, _, kh, kw = w.shape
    (pt, pb), (pl, pr) = _same_padding(kh), _same_padding(kw)
    xp = np.pad(xd, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    # rows ordered (c, i, j) to match w.reshape(o, -1); columns (n, h, w)
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3)).transpose(0, 4, 5, 1, 2, 3).reshape(c * kh * kw, -1)
    wm = w.data.reshape(o, -1)
    out = wm @ cols
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(o, n, h, wd)
    if cax == 1:
        out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    def back(g):
        gm = (g if cax == 0 else g.transpose(1, 0, 2, 3)).reshape(o, -1)
        gw = (gm @ cols.T).reshape(w.shape) if w.requires_grad else None
        gb = gm.sum(axis=1) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wm.T @ gm).reshape(c, kh, kw, n, h, wd)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + h, j:j + wd] += dcols[:, i, j]
            gx = gxp[:, :, pt:pt + h, pl:pl + wd]
            if cax == 1:
                gx = gx.transpose(1, 0, 2, 3)
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor.from_op(out, parents, back, "conv2d")


def max_pool_2d(x: Tensor, kernel=(4, 1), stride=None) -> Tensor:
    """Non-overlapping max pooling over the last two axes of a 4-D tensor.

    Only ``stride == kernel`` is supported; trailing rows/columns that do not
    fill a window are dropped.  Ties send the gradient to the first maximal
    entry of the window (row-major order).
    """
    kh, kw = kernel
    stride = tuple(stride) if stride is not None else (kh, kw)
    if stride != (kh, kw):
        raise ValueError(f"max_pool_2d: stride {stride} must equal kernel {kernel}")
    n, c, h, wd = x.shape
    oh, ow = h // kh, wd // kw
    if oh == 0 or ow == 0:
        raise ValueError(f"max_pool_2d: kernel {kernel} larger than input {x.shape}")
    xv = x.data[:, :, :oh * kh, :ow * kw].reshape(n, c, oh, kh, ow, kw)
    out = xv.max(axis=(3, 5))

    def back(g):
        hit = xv == out[:, :, :, None, :, None]
        taken = np.zeros(out.shape, dtype=bool)
        gv = np.zeros(xv.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                first = hit[:, :, :, i, :, j] & ~taken
                taken |= first
                gv[:, :, :, i, :, j] = g * first
        gv = gv.reshape(n, c, oh * kh, ow * kw)
        if gv.shape != x.shape:
            full = np.zeros_like(x.data)
            full[:, :, :oh * kh, :ow * kw] = gv
            gv = full
        return (gv,)

    return Tensor.from_op(out, (x,), back, "max_pool_2d")


# ---------------------------------------------------------------------------
# backward pass


def build_tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered list of every recorded tensor reachable from ``root``."""
    order, seen = [], set()
    stack_ = [(root, False)]
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
            if id(p) not in seen and p.requires_grad:
                stack_.append((p, False))
    return order


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad."""
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any tensor that requires grad")
    tape = build_tape(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# finite-difference check


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    n_checked: int
    worst: tuple | None = None
    n_kinks: int = 0

    def __bool__(self):
        return self.passed


def grad_check(f, x, step: float = 1e-4, tol: float = 1e-3, max_coords: int | None = None,
               seed: int = 0, floor: float = 1e-8, kink_refine: int = 100) -> GradCheckReport:
    """Compare autodiff gradients of scalar ``f`` against central differences.

    ``x`` is a Tensor (``f(x)``) or a sequence of Tensors (``f(*x)``).
    The relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    With ``max_coords`` only a random subset of each tensor's coordinates
    is perturbed.

    ReLU and max pooling make ``f`` piecewise smooth, and a ``+-step``
    interval can straddle a kink, where the central difference measures
    neither one-sided slope.  A failing coordinate whose left and right
    difference quotients disagree beyond ``tol`` is therefore re-measured
    with ``step / kink_refine``; ``n_kinks`` counts such coordinates.
    ``kink_refine=0`` disables this.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)

    def call():
        return f(*xs) if not isinstance(x, Tensor) else f(x)

    for t in xs:
        t.requires_grad = True
        t.grad = None
    loss = call()
    backward(loss)
    f0 = float(loss.data)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in xs]

    def rel(a, n):
        return abs(a - n) / max(abs(a), abs(n), floor)

    rng = np.random.default_rng(seed)
    worst_err, worst, count, kinks = 0.0, None, 0, 0
    with no_grad():
        for ti, t in enumerate(xs):
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)

            def probe(i, h):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(call().data)
                flat[i] = orig - h
                fm = float(call().data)
                flat[i] = orig
                return fp, fm

            for i in coords:
                ana = float(analytic[ti].reshape(-1)[i])
                fp, fm = probe(i, step)
                num = (fp - fm) / (2.0 * step)
                err = rel(ana, num)
                if err > tol and kink_refine:
                    right, left = (fp - f0) / step, (f0 - fm) / step
                    if rel(right, left) > tol:
                        kinks += 1
                        h = step / kink_refine
                        fp, fm = probe(i, h)
                        num = (fp - fm) / (2.0 * h)
                        err = rel(ana, num)
                count += 1
                if err > worst_err:
                    worst_err, worst = err, (ti, int(i), ana, num)
    return GradCheckReport(worst_err, worst_err <= tol, count, worst, kinks)


# ---------------------------------------------------------------------------
# parameter container


def save_params(path, params: dict[str, np.ndarray | Tensor]):
    """Write named arrays as float32: header ``CRNNPARM`` + u32 version, then
    ``{u32 name_len, name, u32 rank, u32 dims..., float32 data}`` per entry."""
    with open(path, "wb") as fh:
        fh.write(PARAM_MAGIC + struct.pack("<I", PARAM_VERSION))
        for name, value in params.items():
            arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            fh.write(arr.tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != PARAM_MAGIC:
        raise ValueError(f"{path}: not a parameter file")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != PARAM_VERSION:
        raise ValueError(f"{path}: unsupported parameter format version {version}")
    pos, out = 12, {}
    while pos < len(raw):
        (n,) = struct.unpack_from("<I", raw, pos)
        name = raw[pos + 4:pos + 4 + n].decode("utf-8")
        pos += 4 + n
        (rank,) = struct.unpack_from("<I", raw, pos)
        dims = struct.unpack_from(f"<{rank}I", raw, pos + 4)
        pos += 4 + 4 * rank
        count = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
        pos += 4 * count
    return out
