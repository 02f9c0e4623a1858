"""Minimal reverse-mode tensor engine.

Only the operations the collaborative networks need: broadcasting
arithmetic, reductions with deterministic max ties, shape ops, 2D
convolution and its transpose, the nonlinearities, softmax and a
two-operand einsum for the stack contractions. Everything is float64.
Gradients accumulate into .grad when backward() runs on a scalar.
"""

import math

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_grad_borrowed")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._grad_borrowed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def backward(self, grad=None):
        """Accumulate gradients of this (scalar) tensor into .grad fields."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient requires a scalar")
            grad = np.ones_like(self.data)
        # iterative post-order topological sort
        topo = []
        visited = set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, grad, own=False):
        # The first contribution is adopted without a copy; arrays that may
        # be shared with another consumer (own=False) are marked borrowed
        # and replaced out-of-place if a second contribution arrives.
        # Upstream grads are never mutated after their node is processed,
        # so borrowing is safe.
        if self.grad is None:
            self.grad = grad
            self._grad_borrowed = not own
        elif self._grad_borrowed:
            self.grad = self.grad + grad
            self._grad_borrowed = False
        else:
            self.grad += grad

    def detach(self):
        return Tensor(self.data)

    # -- operator sugar ----------------------------------------------------

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def item(self):
        return float(self.data)


def _as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad, shape):
    """Sum-reduce a broadcasted gradient back to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor._result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return Tensor._result(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape), own=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape), own=True)

    return Tensor._result(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape), own=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape), own=True)

    return Tensor._result(a.data / b.data, (a, b), backward)


def power(a, p):
    a = _as_tensor(a)
    p = float(p)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1.0), own=True)

    return Tensor._result(a.data**p, (a,), backward)


def sqrt(a):
    a = _as_tensor(a)
    root = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / root, own=True)

    return Tensor._result(root, (a,), backward)


def exp(a):
    a = _as_tensor(a)
    e = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * e, own=True)

    return Tensor._result(e, (a,), backward)


def absolute(a):
    """|x| with subgradient 0 at x == 0 (np.sign convention)."""
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * np.sign(a.data), own=True)

    return Tensor._result(np.abs(a.data), (a,), backward)


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask, own=True)

    return Tensor._result(a.data * mask, (a,), backward)


def gelu(a):
    """Exact-erf GELU: x * Phi(x)."""
    a = _as_tensor(a)
    cdf = 0.5 * (1.0 + _erf(a.data * _INV_SQRT2))

    def backward(g):
        if a.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
            a._accumulate(g * (cdf + a.data * pdf), own=True)

    return Tensor._result(a.data * cdf, (a,), backward)


# -- reductions ---------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy(), own=True)
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy(), own=True)

    return Tensor._result(out, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        count = a.data.shape[axis]

    def backward(g):
        if not a.requires_grad:
            return
        gg = g / count
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        a._accumulate(np.broadcast_to(gg, a.data.shape).copy(), own=True)

    return Tensor._result(out, (a,), backward)


def tmax(a, axis, keepdims=False):
    """Max along one axis; gradient routes to the FIRST maximal index on ties."""
    a = _as_tensor(a)
    out = a.data.max(axis=axis, keepdims=keepdims)
    idx = np.argmax(a.data, axis=axis)

    def backward(g):
        if not a.requires_grad:
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        mask = np.zeros_like(a.data)
        np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis)
        a._accumulate(mask * g, own=True)

    return Tensor._result(out, (a,), backward)


def softmax(a, axis):
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            a._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)), own=True)

    return Tensor._result(y, (a,), backward)


# -- shape --------------------------------------------------------------------


def reshape(a, shape):
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return Tensor._result(a.data.reshape(shape), (a,), backward)


def transpose(a, axes):
    a = _as_tensor(a)
    inverse = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inverse))

    return Tensor._result(a.data.transpose(axes), (a,), backward)


def broadcast_to(a, shape):
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))

    return Tensor._result(np.broadcast_to(a.data, shape).copy(), (a,), backward)


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def narrow(a, axis, start, length):
    """Contiguous slice along one axis."""
    a = _as_tensor(a)
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[sl] = g
            a._accumulate(full)

    return Tensor._result(a.data[sl].copy(), (a,), backward)


def einsum(spec, a, b):
    """Two-operand einsum without ellipses or internal traces.

    Used for the stack contractions of the pooling layers; each operand's
    indices must appear in the output or in the other operand.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    inputs, out_sub = spec.replace(" ", "").split("->")
    sub_a, sub_b = inputs.split(",")

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.einsum(f"{out_sub},{sub_b}->{sub_a}", g, b.data))
        if b.requires_grad:
            b._accumulate(np.einsum(f"{out_sub},{sub_a}->{sub_b}", g, a.data))

    return Tensor._result(np.einsum(spec, a.data, b.data), (a, b), backward)


# -- convolution ---------------------------------------------------------------


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """Cross-correlation of channels-last (B, H, W, C) with (kh, kw, C, O).

    Zero padding. Each kernel tap contributes one batched matmul on a
    shifted row-slab view of the padded input, so no im2col matrix is
    ever materialized. The backward pass returns exact gradients for
    input, weight and bias.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    if bias is not None:
        bias = _as_tensor(bias)
    batch, h, w, cin = x.data.shape
    kh, kw, cin_w, cout = weight.data.shape
    if cin != cin_w:
        raise ValueError(f"conv2d channel mismatch: input {cin} vs weight {cin_w}")
    hp, wp = h + 2 * pad, w + 2 * pad
    if kh > hp or kw > wp:
        raise ValueError("conv2d kernel exceeds padded input")
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1

    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        # pointwise fast path: one gemm
        wmat = weight.data.reshape(cin, cout)
        out = x.data.reshape(-1, cin) @ wmat
        if bias is not None:
            out += bias.data
        out = out.reshape(batch, h, w, cout)

        def backward_pointwise(g):
            gmat = g.reshape(-1, cout)
            if weight.requires_grad:
                weight._accumulate((x.data.reshape(-1, cin).T @ gmat).reshape(weight.data.shape))
            if bias is not None and bias.requires_grad:
                bias._accumulate(gmat.sum(axis=0))
            if x.requires_grad:
                x._accumulate((gmat @ wmat.T).reshape(x.data.shape))

        parents = (x, weight) if bias is None else (x, weight, bias)
        return Tensor._result(out, parents, backward_pointwise)

    if pad:
        xp = np.zeros((batch, hp, wp, cin))
        xp[:, pad : pad + h, pad : pad + w, :] = x.data
    else:
        xp = x.data
    if stride == 1:
        return _conv2d_rowband(x, weight, bias, xp, pad)
    return _conv2d_strided(x, weight, bias, xp, stride, pad)


def _conv2d_rowband(x, weight, bias, xp, pad):
    """Stride-1 path: column taps folded into the matmul contraction.

    The padded input is unfolded kw-fold into a row-band matrix once; one
    batched matmul per kernel ROW then lands directly on output
    coordinates. The input gradient mirrors the trick with the column
    shifts applied to the incoming gradient, so there are no scattered
    writes anywhere.
    """
    batch, h, w, cin = x.data.shape
    kh, kw, _, cout = weight.data.shape
    _, hp, wp, _ = xp.shape
    out_h, out_w = hp - kh + 1, wp - kw + 1
    x3 = np.empty((batch, hp, out_w, kw * cin))
    for kj in range(kw):
        x3[..., kj * cin : (kj + 1) * cin] = xp[:, :, kj : kj + out_w, :]
    wrow = weight.data.reshape(kh, kw * cin, cout)
    out = np.empty((batch, out_h, out_w, cout))
    out[:] = 0.0 if bias is None else bias.data
    tbuf = np.empty((batch, out_h * out_w, cout))
    for ki in range(kh):
        np.matmul(x3[:, ki : ki + out_h].reshape(batch, -1, kw * cin), wrow[ki], out=tbuf)
        out += tbuf.reshape(batch, out_h, out_w, cout)

    def backward(g):
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 1, 2)))
        if weight.requires_grad:
            gmat = g.reshape(batch, -1, cout)
            gw = np.empty((kh, kw * cin, cout))
            for ki in range(kh):
                slab = x3[:, ki : ki + out_h].reshape(batch, -1, kw * cin)
                gw[ki] = np.matmul(slab.transpose(0, 2, 1), gmat).sum(axis=0)
            weight._accumulate(gw.reshape(weight.data.shape), own=True)
        if x.requires_grad:
            g3 = np.zeros((batch, out_h, wp, kw * cout))
            for kj in range(kw):
                g3[:, :, kj : kj + out_w, kj * cout : (kj + 1) * cout] = g
            # rows (kj, o) of the unfolded weight, mapping back to input channels
            wx = weight.data.transpose(0, 1, 3, 2).reshape(kh, kw * cout, cin)
            g3m = g3.reshape(batch, -1, kw * cout)
            gxp = np.zeros((batch, hp, wp, cin))
            tbuf2 = np.empty((batch, out_h * wp, cin))
            for ki in range(kh):
                np.matmul(g3m, wx[ki], out=tbuf2)
                gxp[:, ki : ki + out_h] += tbuf2.reshape(batch, out_h, wp, cin)
            x._accumulate(gxp[:, pad : pad + h, pad : pad + w, :] if pad else gxp, own=True)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward)


def _conv2d_strided(x, weight, bias, xp, stride, pad):
    """General strided path: one matmul per kernel tap on a row-slab view."""
    batch, h, w, cin = x.data.shape
    kh, kw, _, cout = weight.data.shape
    _, hp, wp, _ = xp.shape
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1
    out = np.empty((batch, out_h, out_w, cout))
    out[:] = 0.0 if bias is None else bias.data
    tbuf = np.empty((batch, out_h * wp, cout))
    for ki in range(kh):
        slab = xp[:, ki : ki + stride * (out_h - 1) + 1 : stride].reshape(batch, -1, cin)
        for kj in range(kw):
            np.matmul(slab, weight.data[ki, kj], out=tbuf)
            t = tbuf.reshape(batch, out_h, wp, cout)
            out += t[:, :, kj : kj + stride * out_w : stride, :]

    def backward(g):
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 1, 2)))
        if weight.requires_grad:
            gw = np.empty(weight.data.shape)
            gp = np.zeros((batch, out_h, wp, cout))
            for kj in range(kw):
                gp[:, :, kj : kj + stride * out_w : stride, :] = g
                gpm = gp.reshape(batch, -1, cout)
                for ki in range(kh):
                    slab = xp[:, ki : ki + stride * (out_h - 1) + 1 : stride].reshape(batch, -1, cin)
                    gw[ki, kj] = np.matmul(slab.transpose(0, 2, 1), gpm).sum(axis=0)
                gp[:, :, kj : kj + stride * out_w : stride, :] = 0.0
            weight._accumulate(gw, own=True)
        if x.requires_grad:
            gxp = np.zeros((batch, hp, wp, cin))
            gp = np.zeros((batch, out_h, wp, cout))
            tbuf = np.empty((batch, out_h * wp, cin))
            for kj in range(kw):
                gp[:, :, kj : kj + stride * out_w : stride, :] = g
                gpm = gp.reshape(batch, -1, cout)
                for ki in range(kh):
                    np.matmul(gpm, weight.data[ki, kj].T, out=tbuf)
                    gxp[:, ki : ki + stride * (out_h - 1) + 1 : stride] += tbuf.reshape(
                        batch, out_h, wp, cin
                    )
                gp[:, :, kj : kj + stride * out_w : stride, :] = 0.0
            x._accumulate(gxp[:, pad : pad + h, pad : pad + w, :] if pad else gxp, own=True)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward)


def conv_transpose2d(x, weight, bias=None, stride=2):
    """Transposed convolution of channels-last (B, H, W, C) with (kh, kw, C, O).

    Output spatial size is (H - 1) * stride + k: the adjoint of conv2d,
    where each input pixel splats a kh x kw footprint scaled by the
    weights.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    if bias is not None:
        bias = _as_tensor(bias)
    batch, h, w, cin = x.data.shape
    kh, kw, cin_w, cout = weight.data.shape
    if cin != cin_w:
        raise ValueError(f"conv_transpose2d channel mismatch: input {cin} vs weight {cin_w}")
    out_h = (h - 1) * stride + kh
    out_w = (w - 1) * stride + kw
    xmat = x.data.reshape(-1, cin)
    wmat = weight.data.transpose(2, 0, 1, 3).reshape(cin, kh * kw * cout)

    if stride == kh == kw:
        # non-overlapping footprints: one gemm plus a block rearrangement
        splat = (xmat @ wmat).reshape(batch, h, w, kh, kw, cout)
        out = np.ascontiguousarray(splat.transpose(0, 1, 3, 2, 4, 5)).reshape(
            batch, out_h, out_w, cout
        )
        if bias is not None:
            out += bias.data

        def backward_block(g):
            if bias is not None and bias.requires_grad:
                bias._accumulate(g.sum(axis=(0, 1, 2)))
            gather = np.ascontiguousarray(
                g.reshape(batch, h, kh, w, kw, cout).transpose(0, 1, 3, 2, 4, 5)
            ).reshape(batch * h * w, kh * kw * cout)
            if weight.requires_grad:
                gw = (xmat.T @ gather).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
                weight._accumulate(np.ascontiguousarray(gw), own=True)
            if x.requires_grad:
                x._accumulate((gather @ wmat.T).reshape(x.data.shape), own=True)

        parents = (x, weight) if bias is None else (x, weight, bias)
        return Tensor._result(out, parents, backward_block)

    out = np.empty((batch, out_h, out_w, cout))
    out[:] = 0.0 if bias is None else bias.data
    for ki in range(kh):
        for kj in range(kw):
            t = (xmat @ weight.data[ki, kj]).reshape(batch, h, w, cout)
            out[:, ki : ki + stride * h : stride, kj : kj + stride * w : stride, :] += t

    def backward(g):
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 1, 2)))
        if weight.requires_grad:
            gw = np.empty(weight.data.shape)
            for ki in range(kh):
                for kj in range(kw):
                    gs = np.ascontiguousarray(
                        g[:, ki : ki + stride * h : stride, kj : kj + stride * w : stride, :]
                    )
                    gw[ki, kj] = xmat.T @ gs.reshape(-1, cout)
            weight._accumulate(gw)
        if x.requires_grad:
            gx = np.zeros((batch, h, w, cin))
            for ki in range(kh):
                for kj in range(kw):
                    gs = g[:, ki : ki + stride * h : stride, kj : kj + stride * w : stride, :]
                    gx += np.matmul(gs, weight.data[ki, kj].T)
            x._accumulate(gx, own=True)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward)


def max_pool2d(x, size=2):
    """Non-overlapping spatial max pooling on channels-last (B, H, W, C).

    Ties route to the lowest row offset, then the lowest column offset
    within the pooling window (deterministic).
    """
    x = _as_tensor(x)
    batch, h, w, c = x.data.shape
    if h % size or w % size:
        raise ValueError(f"spatial dims {h}x{w} not divisible by pool size {size}")
    hh, ww = h // size, w // size
    if size == 2:
        # 2x2 fast path with boolean winner masks
        v = x.data.reshape(batch, hh, 2, ww, 2, c)
        row_hi = v[:, :, 1] > v[:, :, 0]  # strictly greater => first-index ties
        m1 = np.where(row_hi, v[:, :, 1], v[:, :, 0])  # (B, hh, ww, 2, c)
        col_hi = m1[:, :, :, 1] > m1[:, :, :, 0]
        out = np.where(col_hi, m1[:, :, :, 1], m1[:, :, :, 0])

        def backward2(g):
            if not x.requires_grad:
                return
            g1 = np.zeros_like(m1)
            g1[:, :, :, 0] = np.where(col_hi, 0.0, g)
            g1[:, :, :, 1] = np.where(col_hi, g, 0.0)
            gv = np.zeros_like(v)
            gv[:, :, 0] = np.where(row_hi, 0.0, g1)
            gv[:, :, 1] = np.where(row_hi, g1, 0.0)
            x._accumulate(gv.reshape(x.data.shape), own=True)

        return Tensor._result(out, (x,), backward2)

    v = x.data.reshape(batch, hh, size, ww, size, c)
    i1 = np.argmax(v, axis=2)
    m1 = np.take_along_axis(v, i1[:, :, None], axis=2)[:, :, 0]  # (B, hh, ww, size, c)
    i2 = np.argmax(m1, axis=3)
    out = np.take_along_axis(m1, i2[:, :, :, None], axis=3)[:, :, :, 0]

    def backward(g):
        if not x.requires_grad:
            return
        g1 = np.zeros_like(m1)
        np.put_along_axis(g1, i2[:, :, :, None], g[:, :, :, None], axis=3)
        gv = np.zeros_like(v)
        np.put_along_axis(gv, i1[:, :, None], g1[:, :, None], axis=2)
        x._accumulate(gv.reshape(x.data.shape), own=True)

    return Tensor._result(out, (x,), backward)
