"""Dense-tensor reverse-mode automatic differentiation.

Define-by-run: every op records a backward closure on its output tensor and
the graph is rebuilt per minibatch. All data lives in numpy arrays at the
global precision (see :mod:`lffs.precision`). Single-threaded per graph.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .precision import float_dtype


class ShapeMismatch(Exception):
    """Raised when an op receives incompatible operand shapes."""

    def __init__(self, op: str, lhs, rhs):
        self.op = op
        self.lhs = tuple(lhs)
        self.rhs = tuple(rhs)
        super().__init__(f"{op}: incompatible shapes {self.lhs} vs {self.rhs}")


# Per-thread so parallel episodes can mix inference and attack passes.
_graph_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_graph_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference paths)."""
    prev = _grad_enabled()
    _graph_state.enabled = False
    try:
        yield
    finally:
        _graph_state.enabled = prev


class Tensor:
    """N-d array node in the differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=float_dtype())
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
        return out

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode pass from this scalar; populates .grad along the path."""
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; the named functions below are the real ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, other)

    def __rmul__(self, other):
        return scalar_mul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _result(data, parents, backward_fn) -> Tensor:
    """Wrap op output; records the closure only when a parent needs grads."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(op, a.shape, b.shape) from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def scalar_mul(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        _accum(a, g * s)

    return _result(a.data * np.asarray(s, dtype=a.data.dtype), (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), backward)


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or a.shape != b.shape:
        raise ShapeMismatch("dot", a.shape, b.shape)

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(np.asarray(a.data @ b.data), (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return _result(np.where(mask, a.data, 0), (a,), backward)


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        _accum(a, np.full_like(a.data, g / n))

    return _result(np.asarray(a.data.mean()), (a,), backward)


def tsum(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, np.full_like(a.data, g))

    return _result(np.asarray(a.data.sum()), (a,), backward)


def l2_norm(a: Tensor) -> Tensor:
    val = float(np.sqrt((a.data * a.data).sum()))

    def backward(g):
        if val > 0:
            _accum(a, g * (a.data / val))

    return _result(np.asarray(val, dtype=a.data.dtype), (a,), backward)


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch("transpose2d", a.shape, ())

    def backward(g):
        _accum(a, g.T)

    return _result(np.ascontiguousarray(a.data.T), (a,), backward)


def normalize_rows(a: Tensor, eps: float = 1e-8) -> Tensor:
    """L2-normalize each row of a [B, C] tensor; rows below eps divide by eps."""
    if a.data.ndim != 2:
        raise ShapeMismatch("normalize_rows", a.shape, ())
    norms = np.sqrt((a.data**2).sum(axis=-1, keepdims=True))
    denom = np.maximum(norms, eps)
    clamped = norms < eps
    y = a.data / denom

    def backward(g):
        # On the unit sphere the Jacobian removes the radial component; in
        # the eps-clamped region the map is plain scaling.
        proj = y * (g * y).sum(axis=-1, keepdims=True)
        _accum(a, np.where(clamped, g, g - proj) / denom)

    return _result(y, (a,), backward)


def flatten(a: Tensor) -> Tensor:
    """[B, ...] -> [B, prod(rest)]."""
    b = a.shape[0]
    shape = a.shape

    def backward(g):
        _accum(a, g.reshape(shape))

    return _result(a.data.reshape(b, -1), (a,), backward)


def softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        gp = g * p
        _accum(a, gp - p * gp.sum(axis=-1, keepdims=True))

    return _result(p, (a,), backward)


def log_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        _accum(a, g - p * g.sum(axis=-1, keepdims=True))

    return _result(out, (a,), backward)


# -- convolution / pooling / batchnorm ---------------------------------------
#
# The network-facing core works channels-last (NHWC): the im2col gather then
# copies (kw * C)-sized contiguous runs instead of kw-sized ones, and the
# input-gradient is a plain GEMM plus nine shifted block adds instead of a
# second gather. Channels-first wrappers preserve the public [B, C, H, W]
# contracts.


def to_nhwc(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeMismatch("to_nhwc", x.shape, ())

    def backward(g):
        _accum(x, np.ascontiguousarray(g.transpose(0, 3, 1, 2)))

    return _result(
        np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)), (x,), backward
    )


def to_nchw(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeMismatch("to_nchw", x.shape, ())

    def backward(g):
        _accum(x, np.ascontiguousarray(g.transpose(0, 2, 3, 1)))

    return _result(
        np.ascontiguousarray(x.data.transpose(0, 3, 1, 2)), (x,), backward
    )


def _window_cols(xp: np.ndarray, kh: int, kw: int, stride: int):
    """Sliding (kh, kw, C) patches of padded NHWC input as a 2-d matrix."""
    B, Hp, Wp, C = xp.shape
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    s = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        (B, Ho, Wo, kh, kw, C),
        (s[0], s[1] * stride, s[2] * stride, s[1], s[2], s[3]),
    )
    return np.ascontiguousarray(win.reshape(B * Ho * Wo, kh * kw * C)), Ho, Wo


def conv2d_nhwc(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation on [B, H, W, C] input; weights stay [F, C, kh, kw]."""
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[3] != w.shape[1]:
        raise ShapeMismatch("conv2d_nhwc", x.shape, w.shape)
    F, C, kh, kw = w.shape
    xp = (
        np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        if pad
        else x.data
    )
    cols, Ho, Wo = _window_cols(xp, kh, kw, stride)
    wt = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0).reshape(kh * kw * C, F))
    B = x.shape[0]
    out = (cols @ wt).reshape(B, Ho, Wo, F)

    def backward(g):
        gmat = g.reshape(-1, F)
        if w.requires_grad:
            dwt = cols.T @ gmat  # (kh*kw*C, F)
            _accum(w, dwt.reshape(kh, kw, C, F).transpose(3, 2, 0, 1))
        if x.requires_grad:
            d_cols = (gmat @ wt.T).reshape(B, Ho, Wo, kh, kw, C)
            H, W = x.shape[1], x.shape[2]
            dxp = np.zeros((B, H + 2 * pad, W + 2 * pad, C), dtype=g.dtype)
            he = (Ho - 1) * stride + 1
            we = (Wo - 1) * stride + 1
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + he : stride, j : j + we : stride, :] += d_cols[
                        :, :, :, i, j, :
                    ]
            dx = dxp[:, pad : pad + H, pad : pad + W, :] if pad else dxp
            _accum(x, np.ascontiguousarray(dx))

    return _result(out, (x, w), backward)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation on [B, C, H, W]; weight layout [F, C, kh, kw]."""
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch("conv2d", x.shape, w.shape)
    return to_nchw(conv2d_nhwc(to_nhwc(x), w, stride, pad))


def max_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k max pooling (stride = k) on [B, C, H, W]."""
    B, C, H, W = x.shape
    if H % k or W % k:
        raise ShapeMismatch("max_pool2d", x.shape, (k, k))
    win = x.data.reshape(B, C, H // k, k, W // k, k).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(B, C, H // k, W // k, k * k)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(B, C, H // k, W // k, k, k).transpose(0, 1, 2, 4, 3, 5)
        _accum(x, np.ascontiguousarray(gx.reshape(B, C, H, W)))

    return _result(np.ascontiguousarray(out), (x,), backward)


def max_pool2d_nhwc(x: Tensor) -> Tensor:
    """2x2 max pooling on [B, H, W, C] via pairwise maxima (ties go to the
    earlier element, a consistent subgradient choice)."""
    B, H, W, C = x.shape
    if H % 2 or W % 2:
        raise ShapeMismatch("max_pool2d_nhwc", x.shape, (2, 2))
    a, b = x.data[:, 0::2], x.data[:, 1::2]
    mh = a >= b
    m1 = np.where(mh, a, b)
    c, d = m1[:, :, 0::2], m1[:, :, 1::2]
    mw = c >= d
    out = np.where(mw, c, d)

    def backward(g):
        g1 = np.zeros_like(m1)
        g1[:, :, 0::2] = np.where(mw, g, 0)
        g1[:, :, 1::2] = np.where(mw, 0, g)
        gx = np.zeros_like(x.data)
        gx[:, 0::2] = np.where(mh, g1, 0)
        gx[:, 1::2] = np.where(mh, 0, g1)
        _accum(x, gx)

    return _result(out, (x,), backward)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over [B, C, H, W].

    Modes: "train" uses batch statistics and updates the running buffers;
    "eval" uses the stored statistics with trainable affine; "frozen" is a
    fixed affine map (stored statistics, affine treated as constants).
    """
    if x.data.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise ShapeMismatch("batchnorm2d", x.shape, gamma.shape)
    if mode not in ("train", "eval", "frozen"):
        raise ValueError(f"batchnorm2d: unknown mode {mode!r}")
    c = x.shape[1]
    gview = gamma.data.reshape(1, c, 1, 1)
    bview = beta.data.reshape(1, c, 1, 1)

    if mode == "train":
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)

        def backward(g):
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
            if beta.requires_grad:
                _accum(beta, g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                gg = g * gview
                m1 = gg.mean(axis=(0, 2, 3), keepdims=True)
                m2 = (gg * xhat).mean(axis=(0, 2, 3), keepdims=True)
                _accum(x, inv.reshape(1, c, 1, 1) * (gg - m1 - xhat * m2))

        return _result(xhat * gview + bview, (x, gamma, beta), backward)

    inv = (1.0 / np.sqrt(running_var + eps)).reshape(1, c, 1, 1).astype(x.data.dtype)
    xhat = (x.data - running_mean.reshape(1, c, 1, 1)) * inv
    affine_grads = mode == "eval"

    def backward(g):
        if affine_grads and gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if affine_grads and beta.requires_grad:
            _accum(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            _accum(x, g * gview * inv)

    parents = (x, gamma, beta) if affine_grads else (x,)
    return _result(xhat * gview + bview, parents, backward)


def batchnorm2d_nhwc(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Channel normalization on [B, H, W, C]; same modes as batchnorm2d."""
    if x.data.ndim != 4 or x.shape[3] != gamma.shape[0]:
        raise ShapeMismatch("batchnorm2d_nhwc", x.shape, gamma.shape)
    if mode not in ("train", "eval", "frozen"):
        raise ValueError(f"batchnorm2d_nhwc: unknown mode {mode!r}")
    axes = (0, 1, 2)

    if mode == "train":
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv

        def backward(g):
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).sum(axis=axes))
            if beta.requires_grad:
                _accum(beta, g.sum(axis=axes))
            if x.requires_grad:
                gg = g * gamma.data
                m1 = gg.mean(axis=axes)
                m2 = (gg * xhat).mean(axis=axes)
                _accum(x, inv * (gg - m1 - xhat * m2))

        return _result(xhat * gamma.data + beta.data, (x, gamma, beta), backward)

    inv = (1.0 / np.sqrt(running_var + eps)).astype(x.data.dtype)
    xhat = (x.data - running_mean) * inv
    affine_grads = mode == "eval"

    def backward(g):
        if affine_grads and gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=axes))
        if affine_grads and beta.requires_grad:
            _accum(beta, g.sum(axis=axes))
        if x.requires_grad:
            _accum(x, g * (gamma.data * inv))

    parents = (x, gamma, beta) if affine_grads else (x,)
    return _result(xhat * gamma.data + beta.data, parents, backward)


def zero_grad(params) -> None:
    """Clear .grad on every tensor in the iterable."""
    for p in params:
        p.grad = None
