"""Rank-4 tensors (batch, channel, height, width) with reverse-mode autodiff.

All data is float64. Operations build a define-by-run graph: each result
remembers its parents and a closure that maps the upstream gradient to
gradients on the parents. `backward` walks the graph once in reverse
topological order and accumulates into leaf `.grad` buffers. Nodes are
consumed by the walk, so a graph can be differentiated exactly once.

Tensors are treated as immutable after construction except for the grad
buffer (and the in-place parameter updates an optimizer performs between
graphs). Serial execution is bit-deterministic for a fixed seed.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError, StateError

__all__ = [
    "Tensor", "backward", "ew_add", "ew_mul", "add_scalar", "mul_scalar",
    "pow_scalar", "sigmoid", "relu", "log", "clamp", "conv2d",
    "bilinear_resize", "global_avg_pool", "channel_mean", "sum_spatial",
    "sum_all", "concat_channels", "softmax_rows", "pos_gram", "pos_mix",
]

# smallest/largest doubles strictly inside (0, 1); sigmoid saturates to these
_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


class Tensor:
    """Dense (n, c, h, w) float64 array, optionally tracked for gradients.

    Leaf tensors created with requires_grad=True get an eagerly allocated
    zero grad buffer, so a leaf that never participates in a backward pass
    reads as zero gradient. Interior nodes allocate grads lazily during the
    backward walk and release them afterwards.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn",
                 "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 4:
            raise ShapeError(
                f"tensors are rank-4 (n, c, h, w); got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents = ()
        self._backward_fn = None
        self._consumed = False

    @classmethod
    def _node(cls, data, parents, backward_fn):
        t = object.__new__(cls)
        t.data = data
        t.requires_grad = True
        t.grad = None
        t._parents = tuple(parents)
        t._backward_fn = backward_fn
        t._consumed = False
        return t

    @classmethod
    def _const(cls, data):
        t = object.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward_fn = None
        t._consumed = False
        return t

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.item())

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            # own a copy: closures may hand the same array to several parents
            self.grad = np.array(g)
        else:
            self.grad += g

    def backward(self):
        backward(self)

    # operator sugar; scalars dispatch to the *_scalar ops
    def __add__(self, other):
        if isinstance(other, Tensor):
            return ew_add(self, other)
        return add_scalar(self, float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return ew_mul(self, other)
        return mul_scalar(self, float(other))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def _result(data, parents, backward_fn):
    if any(p.requires_grad for p in parents):
        return Tensor._node(data, parents, backward_fn)
    return Tensor._const(data)


def _toposort(root: Tensor):
    order = []
    visited = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, it = stack[-1]
        pushed = False
        for p in it:
            if p.requires_grad and id(p) not in visited:
                if p._consumed:
                    raise StateError(
                        "graph reaches a node already consumed by a previous "
                        "backward pass")
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                pushed = True
                break
        if not pushed:
            order.append(node)
            stack.pop()
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's grad buffer.

    The loss must be a (1, 1, 1, 1) tensor that requires grad. Each node is
    visited exactly once, in reverse topological order; the graph is freed
    as it is consumed and a second backward on it raises StateError.
    """
    if loss.data.shape != (1, 1, 1, 1):
        raise ShapeError(
            f"backward expects a (1, 1, 1, 1) scalar, got {loss.data.shape}")
    if not loss.requires_grad:
        raise StateError("loss does not participate in any gradient graph")
    if loss._consumed:
        raise StateError("backward was already run on this graph")
    order = _toposort(loss)
    loss.grad = np.ones((1, 1, 1, 1))
    for node in reversed(order):
        fn = node._backward_fn
        if fn is not None:
            fn(node.grad)
            node._consumed = True
            node._backward_fn = None
            node._parents = ()
            node.grad = None


def _binary_broadcast(a: Tensor, b: Tensor, opname: str) -> bool:
    """True if b is a (1, c, 1, 1) per-channel operand, False if shapes match."""
    if a.data.shape == b.data.shape:
        return False
    c = a.data.shape[1]
    if b.data.shape == (1, c, 1, 1):
        return True
    raise ShapeError(
        f"{opname}: cannot combine shapes {a.data.shape} and {b.data.shape}; "
        "shapes must match, or the second operand must be (1, c, 1, 1)")


def ew_add(a: Tensor, b: Tensor) -> Tensor:
    bcast = _binary_broadcast(a, b, "ew_add")
    out = a.data + b.data

    def bwd(g):
        a._accum(g)
        b._accum(g.sum(axis=(0, 2, 3), keepdims=True) if bcast else g)

    return _result(out, (a, b), bwd)


def ew_mul(a: Tensor, b: Tensor) -> Tensor:
    bcast = _binary_broadcast(a, b, "ew_mul")
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            gb = g * a.data
            b._accum(gb.sum(axis=(0, 2, 3), keepdims=True) if bcast else gb)

    return _result(out, (a, b), bwd)


def add_scalar(x: Tensor, k: float) -> Tensor:
    def bwd(g):
        x._accum(g)

    return _result(x.data + k, (x,), bwd)


def mul_scalar(x: Tensor, k: float) -> Tensor:
    def bwd(g):
        x._accum(g * k)

    return _result(x.data * k, (x,), bwd)


def pow_scalar(x: Tensor, p: float) -> Tensor:
    """Elementwise x**p. Callers keep x in the domain where this is smooth."""
    out = x.data ** p

    def bwd(g):
        x._accum(g * p * x.data ** (p - 1.0))

    return _result(out, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic; outputs are clipped strictly inside (0, 1)."""
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)
    np.clip(out, _SIG_LO, _SIG_HI, out=out)

    def bwd(g):
        x._accum(g * out * (1.0 - out))

    return _result(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        x._accum(g * (x.data > 0))

    return _result(out, (x,), bwd)


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)

    def bwd(g):
        x._accum(g / x.data)

    return _result(out, (x,), bwd)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through the interior, zero outside."""
    out = np.clip(x.data, lo, hi)
    mask = (x.data >= lo) & (x.data <= hi)

    def bwd(g):
        x._accum(g * mask)

    return _result(out, (x,), bwd)


def _im2col_indices(k: int, oh: int, ow: int, stride: int, dilation: int):
    off = dilation * np.arange(k)
    ki = np.repeat(off, k)
    kj = np.tile(off, k)
    pi = stride * np.repeat(np.arange(oh), ow)
    pj = stride * np.tile(np.arange(ow), oh)
    rows = ki[:, None] + pi[None, :]
    cols = kj[:, None] + pj[None, :]
    return rows, cols


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, dilation: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation over NCHW input.

    weight is (c_out, c_in, k, k); bias, if given, is (1, c_out, 1, 1).
    Zero padding, integer stride and dilation. Implemented as an im2col
    gather followed by one matmul per batch.
    """
    n, ci, h, w = x.data.shape
    co, ciw, kh, kw = weight.data.shape
    if kh != kw:
        raise ShapeError(f"conv2d expects square kernels, got {kh}x{kw}")
    k = kh
    if ciw != ci:
        raise ShapeError(
            f"conv2d: input has {ci} channels but weight expects {ciw}")
    if bias is not None and bias.data.shape != (1, co, 1, 1):
        raise ShapeError(
            f"conv2d: bias shape {bias.data.shape} does not match "
            f"(1, {co}, 1, 1)")
    span = dilation * (k - 1) + 1
    oh = (h + 2 * padding - span) // stride + 1
    ow = (w + 2 * padding - span) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ConfigError(
            f"conv2d: non-positive output size for input {h}x{w} with k={k}, "
            f"stride={stride}, dilation={dilation}, padding={padding}")

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding),
                             (padding, padding)))
    else:
        xp = x.data
    rows, cols = _im2col_indices(k, oh, ow, stride, dilation)
    patches = xp[:, :, rows, cols]              # (n, ci, k*k, oh*ow)
    flat = patches.reshape(n, ci * k * k, oh * ow)
    wm = weight.data.reshape(co, ci * k * k)
    out = np.matmul(wm, flat).reshape(n, co, oh, ow)
    if bias is not None:
        out = out + bias.data

    def bwd(g):
        gm = g.reshape(n, co, oh * ow)
        if weight.requires_grad:
            dw = np.tensordot(gm, flat, axes=([0, 2], [0, 2]))
            weight._accum(dw.reshape(weight.data.shape))
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3)).reshape(1, co, 1, 1))
        if x.requires_grad:
            dflat = np.matmul(wm.T, gm)          # (n, ci*k*k, oh*ow)
            dpatch = dflat.reshape(n, ci, k * k, oh * ow)
            dxp = np.zeros_like(xp)
            np.add.at(dxp, (slice(None), slice(None), rows, cols), dpatch)
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + w]
            x._accum(dxp)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, bwd)


def _lin_coords(src: int, dst: int):
    s = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    np.clip(s, 0.0, src - 1.0, out=s)
    i0 = np.floor(s).astype(np.int64)
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, s - i0


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resample with half-pixel centers, edges clamped.

    Source coordinate for output index i is (i + 0.5) * src/dst - 0.5,
    clipped to [0, src - 1]. Resizing to the same size is an exact copy.
    """
    n, c, h, w = x.data.shape
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"bilinear_resize: bad target size {out_h}x{out_w}")
    if out_h == h and out_w == w:
        out = x.data.copy()

        def bwd_id(g):
            x._accum(g)

        return _result(out, (x,), bwd_id)

    iy0, iy1, fy = _lin_coords(h, out_h)
    ix0, ix1, fx = _lin_coords(w, out_w)
    fy = fy[:, None]
    fx = fx[None, :]
    wa = (1.0 - fy) * (1.0 - fx)
    wb = (1.0 - fy) * fx
    wc = fy * (1.0 - fx)
    wd = fy * fx
    ry0, ry1 = iy0[:, None], iy1[:, None]
    cx0, cx1 = ix0[None, :], ix1[None, :]
    d = x.data
    out = (d[:, :, ry0, cx0] * wa + d[:, :, ry0, cx1] * wb
           + d[:, :, ry1, cx0] * wc + d[:, :, ry1, cx1] * wd)

    def bwd(g):
        dx = np.zeros_like(d)
        np.add.at(dx, (slice(None), slice(None), ry0, cx0), g * wa)
        np.add.at(dx, (slice(None), slice(None), ry0, cx1), g * wb)
        np.add.at(dx, (slice(None), slice(None), ry1, cx0), g * wc)
        np.add.at(dx, (slice(None), slice(None), ry1, cx1), g * wd)
        x._accum(dx)

    return _result(out, (x,), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def bwd(g):
        x._accum(np.broadcast_to(g / (h * w), x.data.shape))

    return _result(out, (x,), bwd)


def channel_mean(x: Tensor) -> Tensor:
    """Mean over batch and spatial axes; result is (1, c, 1, 1)."""
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(0, 2, 3), keepdims=True)

    def bwd(g):
        x._accum(np.broadcast_to(g / (n * h * w), x.data.shape))

    return _result(out, (x,), bwd)


def sum_spatial(x: Tensor) -> Tensor:
    """Sum over channel and spatial axes per batch item; result (n, 1, 1, 1)."""
    out = x.data.sum(axis=(1, 2, 3), keepdims=True)

    def bwd(g):
        x._accum(np.broadcast_to(g, x.data.shape))

    return _result(out, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    out = x.data.sum().reshape(1, 1, 1, 1)

    def bwd(g):
        x._accum(np.broadcast_to(g, x.data.shape))

    return _result(out, (x,), bwd)


def concat_channels(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_channels needs at least one input")
    n, _, h, w = parts[0].data.shape
    for p in parts[1:]:
        pn, _, ph, pw = p.data.shape
        if (pn, ph, pw) != (n, h, w):
            raise ShapeError(
                f"concat_channels: {p.data.shape} does not align with "
                f"{parts[0].data.shape} on batch/spatial axes")
    out = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.data.shape[1] for p in parts]

    def bwd(g):
        o = 0
        for p, cw in zip(parts, widths):
            p._accum(g[:, o:o + cw])
            o += cw

    return _result(out, tuple(parts), bwd)


def softmax_rows(m: Tensor) -> Tensor:
    """Softmax over the last axis, with the row max subtracted for stability."""
    d = m.data
    e = np.exp(d - d.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        m._accum(out * (g - dot))

    return _result(out, (m,), bwd)


def pos_gram(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise inner products between spatial positions.

    Both inputs are (n, c, h, w); position p's vector is the channel column
    at p. Returns (n, 1, N, N) with N = h*w, entry [p, q] = <a_p, b_q>.
    Passing the same tensor twice yields the symmetric gram matrix with
    correctly accumulated gradients.
    """
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"pos_gram: shapes {a.data.shape} and {b.data.shape} differ")
    n, c, h, w = a.data.shape
    fa = a.data.reshape(n, c, h * w)
    fb = b.data.reshape(n, c, h * w)
    out = np.einsum("ncp,ncq->npq", fa, fb)[:, None]

    def bwd(g):
        gg = g[:, 0]
        if a.requires_grad:
            a._accum(np.einsum("npq,ncq->ncp", gg, fb).reshape(a.data.shape))
        if b.requires_grad:
            b._accum(np.einsum("npq,ncp->ncq", gg, fa).reshape(b.data.shape))

    return _result(out, (a, b), bwd)


def pos_mix(s: Tensor, x: Tensor) -> Tensor:
    """Mix position vectors by affinity weights.

    s is (n, 1, N, N); x is (n, c, h, w) with h*w = N. Output position p is
    sum_q s[p, q] * x_q, shaped like x.
    """
    n, c, h, w = x.data.shape
    if s.data.shape != (n, 1, h * w, h * w):
        raise ShapeError(
            f"pos_mix: affinity shape {s.data.shape} does not match feature "
            f"map {x.data.shape}")
    xf = x.data.reshape(n, c, h * w)
    sm = s.data[:, 0]
    out = np.einsum("npq,ncq->ncp", sm, xf).reshape(x.data.shape)

    def bwd(g):
        gf = g.reshape(n, c, h * w)
        if s.requires_grad:
            s._accum(np.einsum("ncp,ncq->npq", gf, xf)[:, None])
        if x.requires_grad:
            x._accum(np.einsum("npq,ncp->ncq", sm, gf).reshape(x.data.shape))

    return _result(out, (s, x), bwd)
