"""Dense float64 tensors with a reverse-mode tape.

Every tensor produced by an op whose inputs require gradients carries a
``TapeNode`` pointing at its inputs and a closure mapping the output
gradient to input gradients. ``backward`` replays that DAG in reverse
topological order and accumulates into the ``grad`` slot of every leaf
that requires gradients.

All ops check their output for NaN/Inf and raise ``NonFinite`` rather
than letting bad values propagate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DetachedRoot, NonFinite, NotScalar, ShapeMismatch

_LN2 = math.log(2.0)


@dataclass
class TapeNode:
    op: str
    inputs: tuple
    backward: Callable


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFinite(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._node = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def node(self):
        return self._node

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self):
        return backward(self)

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{tag})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _not_scalar(t: Tensor):
    raise NotScalar(f"expected a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    if not np.isfinite(data).all():
        raise NonFinite(f"op '{op}' produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    req = any(t.requires_grad for t in inputs)
    out.requires_grad = req
    out._node = TapeNode(op, tuple(inputs), backward_fn) if req else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape == b.data.shape or a.data.ndim == 0 or b.data.ndim == 0:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# ----------------------------------------------------------------------------
# reverse pass


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, processed = stack.pop()
        if processed:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for inp in reversed(t._node.inputs):
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def backward(root: Tensor) -> list:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Returns the list of leaves that received a gradient. Calling this twice
    without resetting grads adds the second pass onto the first.
    """
    if root.data.size != 1:
        raise NotScalar(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise DetachedRoot("root is not on the tape (no input requires grad)")
    grads = {id(root): np.ones_like(root.data)}
    leaves = []
    for t in reversed(_topological(root)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t._node
        if node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            leaves.append(t)
            continue
        for inp, ig in zip(node.inputs, node.backward(g)):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + ig if key in grads else ig
    return leaves


# ----------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Hadamard product with numpy broadcasting (also covers scalar-mul)."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd
    return _make("div", out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * ad / (bd * bd), bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def scalar_mul(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make("scalar_mul", a.data * c, (a,), lambda g: (g * c,))


# ----------------------------------------------------------------------------
# nonlinearities


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _make("log", out, (a,), lambda g: (g / ad,))


def log2(a) -> Tensor:
    return scalar_mul(log(a), 1.0 / _LN2)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    """max(x, 0); the gradient at exactly 0 is taken as 0."""
    a = as_tensor(a)
    pos = a.data > 0
    return _make("relu", np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


maximum_zero = relu


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    scale = np.where(pos, 1.0, slope)
    return _make("leaky_relu", a.data * scale, (a,), lambda g: (g * scale,))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make("softmax", out, (a,), _bw)


# ----------------------------------------------------------------------------
# reductions and shape ops


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", out, (a,), _bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scalar_mul(tsum(a, axis, keepdims), 1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape {old} -> {shape}") from exc
    return _make("reshape", out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make("transpose", out, (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[t.shape for t in ts]}") from exc
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make("concat", out, ts, lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"stack: {[t.shape for t in ts]}") from exc
    n = len(ts)
    return _make("stack", out, ts,
                 lambda g: tuple(np.squeeze(p, axis=axis) for p in np.split(g, n, axis=axis)))


def getitem(a, idx) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate in backward."""
    a = as_tensor(a)
    shape = a.shape
    out = a.data[idx]

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
                for i in parts)

    def _bw(g):
        full = np.zeros(shape)
        if basic:
            full[idx] += g       # basic indices never repeat
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make("getitem", out, (a,), _bw)


def replace_rows(a, idx, value) -> Tensor:
    """Copy of ``a`` with ``a[idx]`` overwritten by ``value`` (broadcast).

    Rows outside ``idx`` are copied bit for bit.
    """
    a, value = as_tensor(a), as_tensor(value)
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data.copy()
    try:
        out[idx] = value.data
    except ValueError as exc:
        raise ShapeMismatch(f"replace_rows: value {value.shape} into {a.shape}") from exc
    vshape = value.shape

    def _bw(g):
        ga = g.copy()
        ga[idx] = 0.0
        gv = _unbroadcast(g[idx], vshape) if len(idx) else np.zeros(vshape)
        return ga, gv

    return _make("replace_rows", out, (a, value), _bw)


# ----------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}") from exc
    ad, bd = a.data, b.data

    def _bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make("matmul", out, (a, b), _bw)


def conv1d(x, w, bias=None) -> Tensor:
    """Stride-1 'same' convolution along the sequence axis.

    x: (L, C_in) or (B, L, C_in); w: (C_out, C_in, k); bias: (C_out,).
    Zero padding of (k-1)//2 on the left and k//2 on the right.
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or w.ndim != 3 or w.shape[1] != xd.shape[2]:
        raise ShapeMismatch(f"conv1d: x {x.shape}, w {w.shape}")
    cout, cin, k = w.shape
    bsz, length, _ = xd.shape
    left = (k - 1) // 2
    xp = np.zeros((bsz, length + k - 1, cin))
    xp[:, left:left + length] = xd
    wd = w.data
    out = np.zeros((bsz, length, cout))
    for t in range(k):
        out += xp[:, t:t + length] @ wd[:, :, t].T
    inputs = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeMismatch(f"conv1d: bias {bias.shape} for {cout} channels")
        out = out + bias.data
        inputs.append(bias)

    def _bw(g):
        g3 = g[None] if squeeze else g
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        flat_g = g3.reshape(-1, cout)
        for t in range(k):
            gxp[:, t:t + length] += g3 @ wd[:, :, t]
            gw[:, :, t] = flat_g.T @ xp[:, t:t + length].reshape(-1, cin)
        gx = gxp[:, left:left + length]
        grads = [gx[0] if squeeze else gx, gw]
        if bias is not None:
            grads.append(flat_g.sum(axis=0))
        return tuple(grads)

    return _make("conv1d", out[0] if squeeze else out, inputs, _bw)


# ----------------------------------------------------------------------------
# similarity / distance


def cosine_similarity(a, b) -> Tensor:
    """Row-wise cosine over the last axis. Zero rows are the caller's problem."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"cosine_similarity: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    na = np.sqrt((ad * ad).sum(axis=-1, keepdims=True))
    nb = np.sqrt((bd * bd).sum(axis=-1, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        dot = (ad * bd).sum(axis=-1, keepdims=True)
        cos = dot / (na * nb)

    def _bw(g):
        g = g[..., None]
        ga = g * (bd / (na * nb) - cos * ad / (na * na))
        gb = g * (ad / (na * nb) - cos * bd / (nb * nb))
        return ga, gb

    return _make("cosine_similarity", cos[..., 0], (a, b), _bw)


def frobenius_sq(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make("frobenius_sq", np.sum(ad * ad), (a,), lambda g: (2.0 * g * ad,))


def euclidean_distance(a, b) -> Tensor:
    """Row-wise L2 distance; the (sub)gradient at distance 0 is 0."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"euclidean_distance: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    d = np.sqrt((diff * diff).sum(axis=-1))
    safe = np.where(d > 0, d, 1.0)

    def _bw(g):
        unit = np.where((d > 0)[..., None], diff / safe[..., None], 0.0)
        ga = g[..., None] * unit
        return ga, -ga

    return _make("euclidean_distance", d, (a, b), _bw)


# ----------------------------------------------------------------------------
# segment (edge-list) ops; segments index the first axis of the output


def segment_sum(a, seg, num: int) -> Tensor:
    a = as_tensor(a)
    seg = np.asarray(seg, dtype=np.int64)
    if len(seg) != a.shape[0]:
        raise ShapeMismatch(f"segment_sum: {len(seg)} ids for {a.shape[0]} rows")
    out = np.zeros((num,) + a.shape[1:])
    np.add.at(out, seg, a.data)
    return _make("segment_sum", out, (a,), lambda g: (g[seg],))


def segment_max(a, seg, num: int) -> Tensor:
    """Per-segment maximum of a 1-D tensor; empty segments give 0.

    The gradient flows to the first maximal entry of each segment.
    """
    a = as_tensor(a)
    seg = np.asarray(seg, dtype=np.int64)
    ad = a.data
    out = np.full(num, -np.inf)
    np.maximum.at(out, seg, ad)
    arg = np.full(num, -1, dtype=np.int64)
    for e in range(len(ad) - 1, -1, -1):
        if ad[e] == out[seg[e]]:
            arg[seg[e]] = e
    out = np.where(np.isfinite(out), out, 0.0)
    has = arg >= 0

    def _bw(g):
        ga = np.zeros_like(ad)
        ga[arg[has]] = g[has]
        return (ga,)

    return _make("segment_max", out, (a,), _bw)


def segment_softmax(a, seg, num: int) -> Tensor:
    """Softmax of a 1-D tensor within each segment."""
    a = as_tensor(a)
    seg = np.asarray(seg, dtype=np.int64)
    ad = a.data
    peak = np.full(num, -np.inf)
    np.maximum.at(peak, seg, ad)
    e = np.exp(ad - peak[seg])
    tot = np.zeros(num)
    np.add.at(tot, seg, e)
    out = e / tot[seg]

    def _bw(g):
        inner = np.zeros(num)
        np.add.at(inner, seg, g * out)
        return (out * (g - inner[seg]),)

    return _make("segment_softmax", out, (a,), _bw)


def segment_logsumexp(a, seg, num: int) -> Tensor:
    """log(sum(exp(a))) per segment of a 1-D tensor; every segment must be nonempty."""
    a = as_tensor(a)
    seg = np.asarray(seg, dtype=np.int64)
    ad = a.data
    peak = np.full(num, -np.inf)
    np.maximum.at(peak, seg, ad)
    e = np.exp(ad - peak[seg])
    tot = np.zeros(num)
    np.add.at(tot, seg, e)
    with np.errstate(divide="ignore"):
        out = peak + np.log(tot)
    soft = e / np.where(tot > 0, tot, 1.0)[seg]
    return _make("segment_logsumexp", out, (a,), lambda g: (g[seg] * soft,))


# ----------------------------------------------------------------------------
# dispatch by name


OPS = {
    "add": add, "sub": sub, "mul": mul, "hadamard": mul, "div": div, "neg": neg,
    "scalar_mul": scalar_mul, "matmul": matmul, "concat": concat, "stack": stack,
    "sigmoid": sigmoid, "tanh": tanh, "relu": relu, "max_with_zero": relu,
    "leaky_relu": leaky_relu, "softmax": softmax, "mean": mean, "sum": tsum,
    "conv1d": conv1d, "cosine_similarity": cosine_similarity,
    "frobenius_sq": frobenius_sq, "log": log, "log2": log2, "exp": exp,
    "euclidean_distance": euclidean_distance, "clip": clip,
}


def forward_op(name: str, inputs: Sequence, **kwargs) -> Tensor:
    """Apply the op registered under ``name`` to ``inputs``."""
    try:
        fn = OPS[name]
    except KeyError:
        raise KeyError(f"unknown op '{name}'") from None
    if name in ("concat", "stack"):
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)


def finite_diff_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Largest relative gap between the tape gradient and central differences.

    Per component: |analytic - central| / max(|analytic|, |central|, 1e-8).
    ``f`` must map a tensor shaped like ``x`` to a scalar tensor.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    leaf = Tensor(x0, requires_grad=True)
    out = f(leaf)
    if out.requires_grad:
        backward(out)
    analytic = np.zeros_like(x0) if leaf.grad is None else leaf.grad
    worst = 0.0
    flat = x0.reshape(-1)
    for k in range(flat.size):
        hi, lo = flat.copy(), flat.copy()
        hi[k] += eps
        lo[k] -= eps
        f_hi = f(Tensor(hi.reshape(x0.shape))).item()
        f_lo = f(Tensor(lo.reshape(x0.shape))).item()
        central = (f_hi - f_lo) / (2.0 * eps)
        if not math.isfinite(central):
            raise NonFinite("non-finite value while probing finite differences")
        a = analytic.reshape(-1)[k]
        err = abs(a - central) / max(abs(a), abs(central), 1e-8)
        worst = max(worst, err)
    return worst
