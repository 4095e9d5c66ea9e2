"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its parents and a closure mapping the upstream
gradient to gradients for each parent.  :func:`backward` walks that graph in
reverse topological order, accumulating at fan-out points, then releases it.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "grad_check",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "relu",
    "sigmoid",
    "log",
    "exp",
    "sqrt",
    "square",
    "abs_",
    "softplus",
    "clamp_min",
    "elementwise",
    "reduce_sum",
    "mean",
    "reshape",
    "transpose",
    "flip",
    "concat",
    "take",
    "conv3d",
    "maxpool3d",
    "upsample_nearest",
    "linear",
    "dropout",
    "instance_norm",
]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A float64 array that can participate in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_released")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) else data
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = ""
        self._released = False

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
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
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
        return neg(self)

    def sum(self, axes=None, keep_dims: bool = False):
        return reduce_sum(self, axes, keep_dims)

    def mean(self, axes=None, keep_dims: bool = False):
        return mean(self, axes, keep_dims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op}: produced non-finite values")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ValueError(f"shapes {a} and {b} are not broadcast-compatible") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("div: divisor contains exact zeros")
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only; avoids overflow for large |x|
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid_np(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log: argument must be strictly positive")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = _check_finite(np.exp(a.data), "exp")
    return _make(out, (a,), lambda g: (g * out,), "exp")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt: argument must be non-negative")
    out = np.sqrt(a.data)

    def bw(g):
        if np.any(out == 0):
            raise FloatingPointError("sqrt: gradient undefined at 0")
        return (g * 0.5 / out,)

    return _make(out, (a,), bw, "sqrt")


def square(a) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def abs_(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def softplus(a) -> Tensor:
    """log(1 + exp(a)), computed without overflow."""
    a = _as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: (g * _sigmoid_np(x),), "softplus")


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor); the gradient flows only where a > floor."""
    a = _as_tensor(a)
    mask = a.data > floor
    return _make(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,), "clamp_min")


_UNARY = {
    "relu": relu,
    "sigmoid": sigmoid,
    "log": log,
    "exp": exp,
    "sqrt": sqrt,
    "square": square,
    "negate": neg,
    "abs": abs_,
    "softplus": softplus,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name (``add``, ``relu``, ...)."""
    if kind in _BINARY:
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        if b is not None:
            raise ValueError(f"{kind} takes a single operand")
        return _UNARY[kind](a)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def reduce_sum(a, axes=None, keep_dims: bool = False) -> Tensor:
    a = _as_tensor(a)
    ax = _norm_axes(axes, a.ndim)
    if not ax:
        return _make(a.data.copy(), (a,), lambda g: (g,), "sum")
    out = a.data.sum(axis=ax, keepdims=keep_dims)

    def bw(g):
        if not keep_dims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), bw, "sum")


def mean(a, axes=None, keep_dims: bool = False) -> Tensor:
    a = _as_tensor(a)
    ax = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[i] for i in ax])) if ax else 1
    return mul(reduce_sum(a, ax, keep_dims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, perm: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    inv = np.argsort(perm)
    return _make(a.data.transpose(perm), (a,), lambda g: (g.transpose(inv),), "transpose")


def flip(a, axis: int) -> Tensor:
    a = _as_tensor(a)
    (ax,) = _norm_axes(axis, a.ndim)
    return _make(np.flip(a.data, ax).copy(), (a,), lambda g: (np.flip(g, ax),), "flip")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    (ax,) = _norm_axes(axis, ts[0].ndim)
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts))
        )

    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, bw, "concat")


def take(a, index: int, axis: int) -> Tensor:
    """Select one position along ``axis`` (the axis is dropped)."""
    a = _as_tensor(a)
    (ax,) = _norm_axes(axis, a.ndim)
    if not -a.shape[ax] <= index < a.shape[ax]:
        raise IndexError(f"index {index} out of range for axis {ax} of extent {a.shape[ax]}")

    def bw(g):
        out = np.zeros(a.shape)
        sl = [slice(None)] * a.ndim
        sl[ax] = index
        out[tuple(sl)] = g
        return (out,)

    return _make(np.take(a.data, index, axis=ax), (a,), bw, "take")


# ---------------------------------------------------------------------------
# volumetric ops
# ---------------------------------------------------------------------------


def _im2col(xp: np.ndarray, k: int, stride: int, out_sp: tuple[int, int, int]) -> np.ndarray:
    n, c = xp.shape[:2]
    oh, ow, od = out_sp
    cols = np.empty((n, c, k * k * k, oh, ow, od))
    idx = 0
    for a in range(k):
        for b in range(k):
            for d in range(k):
                cols[:, :, idx] = xp[
                    :,
                    :,
                    a : a + stride * (oh - 1) + 1 : stride,
                    b : b + stride * (ow - 1) + 1 : stride,
                    d : d + stride * (od - 1) + 1 : stride,
                ]
                idx += 1
    return cols.reshape(n, c * k * k * k, oh * ow * od)


def _col2im(dcols: np.ndarray, xp_shape, k: int, stride: int, out_sp) -> np.ndarray:
    n, c = xp_shape[:2]
    oh, ow, od = out_sp
    d = dcols.reshape(n, c, k * k * k, oh, ow, od)
    dxp = np.zeros(xp_shape)
    idx = 0
    for a in range(k):
        for b in range(k):
            for e in range(k):
                dxp[
                    :,
                    :,
                    a : a + stride * (oh - 1) + 1 : stride,
                    b : b + stride * (ow - 1) + 1 : stride,
                    e : e + stride * (od - 1) + 1 : stride,
                ] += d[:, :, idx]
                idx += 1
    return dxp


def conv3d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """3-D cross-correlation of ``x[N,C,H,W,D]`` with ``w[O,C,k,k,k]``."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 5 or w.ndim != 5:
        raise ValueError("conv3d expects x[N,C,H,W,D] and w[O,C,k,k,k]")
    n, c = x.shape[:2]
    o, cw, k = w.shape[0], w.shape[1], w.shape[2]
    if cw != c:
        raise ValueError(f"conv3d: input has {c} channels, weight expects {cw}")
    if w.shape[2:] != (k, k, k) or k % 2 == 0:
        raise ValueError("conv3d: kernel must be cubic with odd extent")
    if stride < 1 or padding < 0:
        raise ValueError("conv3d: stride must be >= 1 and padding >= 0")
    out_sp = tuple((s + 2 * padding - k) // stride + 1 for s in x.shape[2:])
    if any(s + 2 * padding < k for s in x.shape[2:]) or min(out_sp) <= 0:
        raise ValueError("conv3d: non-positive output extent")
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (o,):
            raise ValueError(f"conv3d: bias must have shape ({o},)")
        parents.append(b)

    pad = ((0, 0), (0, 0)) + ((padding, padding),) * 3
    xp = np.pad(x.data, pad) if padding else x.data
    cols = _im2col(xp, k, stride, out_sp)
    wm = w.data.reshape(o, -1)
    out = np.matmul(wm, cols)
    if b is not None:
        out += b.data[None, :, None]
    out = out.reshape((n, o) + out_sp)

    def bw(g):
        gm = g.reshape(n, o, -1)
        gw = gx = gb = None
        if w.requires_grad:
            gw = sum(gm[i] @ cols[i].T for i in range(n)).reshape(w.shape)
        if x.requires_grad:
            dcols = np.matmul(wm.T, gm)
            dxp = _col2im(dcols, xp.shape, k, stride, out_sp)
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding, padding:-padding]
            gx = dxp
        if b is not None:
            gb = gm.sum(axis=(0, 2))
            return gx, gw, gb
        return gx, gw

    return _make(out, parents, bw, "conv3d")


def maxpool3d(x, k: int = 2, stride: int | None = None) -> Tensor:
    """Windowed maxima; the gradient goes to the first argmax of each window."""
    x = _as_tensor(x)
    stride = k if stride is None else stride
    sp = x.shape[2:]
    if any(s < k for s in sp):
        raise ValueError(f"maxpool3d: window {k} larger than input {sp}")
    out_sp = tuple((s - k) // stride + 1 for s in sp)
    view = np.lib.stride_tricks.sliding_window_view(x.data, (k, k, k), axis=(2, 3, 4))
    view = view[:, :, ::stride, ::stride, ::stride][:, :, : out_sp[0], : out_sp[1], : out_sp[2]]
    win = view.reshape(view.shape[:5] + (k * k * k,))
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        n, c = x.shape[:2]
        h, w_, d = sp
        a, rem = np.divmod(arg, k * k)
        b, e = np.divmod(rem, k)
        oi = np.arange(out_sp[0]).reshape(-1, 1, 1) * stride
        oj = np.arange(out_sp[1]).reshape(1, -1, 1) * stride
        ol = np.arange(out_sp[2]).reshape(1, 1, -1) * stride
        flat_sp = ((oi + a) * w_ + (oj + b)) * d + (ol + e)
        base = (np.arange(n * c) * (h * w_ * d)).reshape(n, c, 1, 1, 1)
        idx = (flat_sp + base).ravel()
        gx = np.bincount(idx, weights=g.ravel(), minlength=n * c * h * w_ * d)
        return (gx.reshape(x.shape),)

    return _make(out, (x,), bw, "maxpool3d")


def upsample_nearest(x, factor: int = 2) -> Tensor:
    x = _as_tensor(x)
    out = x.data
    for ax in (2, 3, 4):
        out = np.repeat(out, factor, axis=ax)

    def bw(g):
        n, c, h, w, d = x.shape
        return (g.reshape(n, c, h, factor, w, factor, d, factor).sum(axis=(3, 5, 7)),)

    return _make(out, (x,), bw, "upsample")


def linear(x, w, b=None) -> Tensor:
    """Affine map over the trailing axis: ``x @ w.T + b``."""
    x, w = _as_tensor(x), _as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear: trailing extent {x.shape[-1]} does not match weight {w.shape}")
    parents = [x, w]
    out = np.matmul(x.data, w.data.T)
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ValueError("linear: bias shape mismatch")
        out = out + b.data
        parents.append(b)

    def bw(g):
        gx = np.matmul(g, w.data) if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = np.matmul(g.reshape(-1, w.shape[0]).T, x.data.reshape(-1, w.shape[1]))
        if b is not None:
            return gx, gw, g.reshape(-1, w.shape[0]).sum(axis=0)
        return gx, gw

    return _make(out, parents, bw, "linear")


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Channel-wise dropout: whole channels are zeroed, survivors rescaled.

    For rank >= 3 inputs the mask has shape ``[N, C, 1, ...]``; for rank-2
    inputs every feature is its own channel.
    """
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mshape = x.shape[:2] + (1,) * (x.ndim - 2)
    keep = (rng.random(mshape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


def instance_norm(x, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel standardisation over the spatial axes."""
    x = _as_tensor(x)
    ax = tuple(range(2, x.ndim))
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=ax, keepdims=True) + eps)
    y = xc * inv

    def bw(g):
        gm = g.mean(axis=ax, keepdims=True)
        gym = (g * y).mean(axis=ax, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _make(y, (x,), bw, "instance_norm")


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires it, then free the graph."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._released:
        raise RuntimeError("graph already consumed by a previous backward(); recompute the loss")
    if not loss.requires_grad:
        raise RuntimeError("loss is detached from the graph (nothing requires grad)")

    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._released = True


def grad_check(
    f: Callable[..., Tensor],
    x: Tensor | Sequence[Tensor],
    h: float = 1e-5,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``f`` maps the tensor(s) ``x`` to a scalar.  For each input the error is
    ``max|a - n| / max(max|a|, max|n|)``, i.e. scaled by the largest gradient
    magnitude of that input (floored at 1e-8), so near-zero entries
    dominated by difference roundoff do not swamp the measure.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    leaves = [Tensor(t.data.copy(), requires_grad=True) for t in xs]
    out = f(*leaves)
    if out.size != 1:
        raise ValueError("grad_check: f must be scalar-valued")
    backward(out)
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)
        numeric = np.empty(leaf.shape)
        flat = leaf.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = f(*leaves).item()
                flat[i] = orig - h
                fm = f(*leaves).item()
                flat[i] = orig
                num_flat[i] = (fp - fm) / (2.0 * h)
        scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-8)
        worst = max(worst, float(np.max(np.abs(analytic - numeric))) / scale)
    return worst

