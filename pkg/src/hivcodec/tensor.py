"""Minimal dense tensor engine with reverse-mode autodiff.

Everything is numpy-backed. float32 is the working precision; float64 is
available for finite-difference gradient checks. There is no broadcasting
beyond python scalars: elementwise ops require exactly matching shapes so
that shape bugs surface immediately.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    """A dense array plus an optional gradient and the edge back into the tape.

    The tape is implicit: each non-leaf tensor stores its parents and a
    closure that scatters the upstream gradient back to them. ``backward``
    replays those closures in reverse topological order.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        if not isinstance(data, np.ndarray):
            # numpy scalars (e.g. a 0-d product) keep their float dtype so
            # float64 graphs stay float64; everything else becomes float32
            if isinstance(data, np.generic) and np.issubdtype(data.dtype, np.floating):
                data = np.asarray(data)
            else:
                data = np.asarray(data, dtype=np.float32)
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def numpy(self):
        return self.data

    # -- graph plumbing -----------------------------------------------------

    def _needs_tape(self, *others):
        return self.requires_grad or any(o.requires_grad for o in others) or \
            self._parents or any(o._parents for o in others)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Populate ``grad`` on every requires_grad leaf reachable from this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        if not self._parents and not self.requires_grad:
            raise ValueError("backward() called on a tensor detached from the tape")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
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

    # -- elementwise ops ----------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Tensor):
            if other.data.shape != self.data.shape and other.data.size != 1 and self.data.size != 1:
                raise ValueError(f"shape mismatch: {self.data.shape} vs {other.data.shape}")
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data + other.data)
        if self._needs_tape(other):
            def bwd(g):
                _scatter_elemwise(self, g)
                _scatter_elemwise(other, g)
            out._parents, out._backward = (self, other), bwd
        return out

    def __sub__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data - other.data)
        if self._needs_tape(other):
            def bwd(g):
                _scatter_elemwise(self, g)
                _scatter_elemwise(other, -g)
            out._parents, out._backward = (self, other), bwd
        return out

    def __mul__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data * other.data)
        if self._needs_tape(other):
            def bwd(g):
                _scatter_elemwise(self, g * other.data)
                _scatter_elemwise(other, g * self.data)
            out._parents, out._backward = (self, other), bwd
        return out

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def abs(self):
        out = Tensor(np.abs(self.data))
        if self._needs_tape():
            sgn = np.sign(self.data)  # 0 at ties: fixed L1 subgradient convention

            def bwd(g):
                _scatter_elemwise(self, g * sgn)
            out._parents, out._backward = (self,), bwd
        return out

    def tanh(self):
        y = np.tanh(self.data)
        out = Tensor(y)
        if self._needs_tape():
            def bwd(g):
                _scatter_elemwise(self, g * (1.0 - y * y))
            out._parents, out._backward = (self,), bwd
        return out

    def sigmoid(self):
        y = 1.0 / (1.0 + np.exp(-self.data))
        out = Tensor(y)
        if self._needs_tape():
            def bwd(g):
                _scatter_elemwise(self, g * y * (1.0 - y))
            out._parents, out._backward = (self,), bwd
        return out

    def relu(self):
        out = Tensor(np.maximum(self.data, 0))
        if self._needs_tape():
            mask = (self.data > 0).astype(self.data.dtype)

            def bwd(g):
                _scatter_elemwise(self, g * mask)
            out._parents, out._backward = (self,), bwd
        return out

    def sum(self):
        out = Tensor(np.asarray(self.data.sum(), dtype=self.data.dtype).reshape(()))
        if self._needs_tape():
            def bwd(g):
                _scatter_elemwise(self, np.full_like(self.data, g))
            out._parents, out._backward = (self,), bwd
        return out

    def mean(self):
        return self.sum() / self.data.size

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape))
        if self._needs_tape():
            orig = self.data.shape

            def bwd(g):
                _scatter_elemwise(self, g.reshape(orig))
            out._parents, out._backward = (self,), bwd
        return out

    def narrow(self, axis, start, length):
        """Contiguous slice along one axis."""
        idx = [slice(None)] * self.data.ndim
        idx[axis] = slice(start, start + length)
        idx = tuple(idx)
        out = Tensor(self.data[idx].copy())
        if self._needs_tape():
            def bwd(g):
                full = np.zeros_like(self.data)
                full[idx] = g
                _scatter_elemwise(self, full)
            out._parents, out._backward = (self,), bwd
        return out

    def item(self):
        return float(self.data)


def _scatter_elemwise(t, g):
    if t.requires_grad or t._parents:
        if g.shape != t.data.shape:
            # scalar operand used against an array (or vice versa)
            g = np.asarray(g.sum(), dtype=t.data.dtype).reshape(t.data.shape)
        t._accumulate(g)


def tensor(data, requires_grad=False, dtype=np.float32):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def zeros(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def concat(tensors, axis=0):
    """Concatenate along an existing axis."""
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    if any(t.requires_grad or t._parents for t in tensors):
        sizes = [t.data.shape[axis] for t in tensors]

        def bwd(g):
            off = 0
            for t, s in zip(tensors, sizes):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(off, off + s)
                _scatter_elemwise(t, g[tuple(idx)])
                off += s
        out._parents, out._backward = tuple(tensors), bwd
    return out


def stack(tensors, axis=0):
    """Stack along a new axis."""
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))
    if any(t.requires_grad or t._parents for t in tensors):
        def bwd(g):
            for i, t in enumerate(tensors):
                _scatter_elemwise(t, np.take(g, i, axis=axis))
        out._parents, out._backward = tuple(tensors), bwd
    return out


# -- convolution ------------------------------------------------------------

def _im2col(x, kh, kw, stride, padding):
    # x: (N, C, H, W) -> (N, C*kh*kw, Ho*Wo)
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    v = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # v: (N, C, Ho, Wo, kh, kw)
    cols = np.ascontiguousarray(v.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)
    return cols, ho, wo


def _col2im(cols, x_shape, kh, kw, stride, padding):
    # inverse scatter-add of _im2col
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    if padding:
        out = out[:, :, padding:hp - padding, padding:wp - padding]
    return out


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2D cross-correlation, weight (Cout, Cin, kh, kw) over x (N, Cin, H, W)."""
    n, cin, h, w = x.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ValueError(f"conv2d: input channels {cin} != weight channels {cin_w}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError(f"conv2d: spatial size {(h, w)} too small for kernel {(kh, kw)} with padding {padding}")
    if bias is not None and bias.data.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {bias.data.shape} != ({cout},)")
    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(cout, -1)
    y = np.einsum("ok,nkp->nop", wmat, cols, optimize=True)
    if bias is not None:
        y += bias.data[None, :, None]
    out = Tensor(np.ascontiguousarray(y.reshape(n, cout, ho, wo)))
    operands = (x, weight) if bias is None else (x, weight, bias)
    if any(t.requires_grad or t._parents for t in operands):
        def bwd(g):
            gf = g.reshape(n, cout, -1)
            if weight.requires_grad or weight._parents:
                gw = np.einsum("nop,nkp->ok", gf, cols, optimize=True).reshape(weight.data.shape)
                _scatter_elemwise(weight, gw)
            if bias is not None and (bias.requires_grad or bias._parents):
                _scatter_elemwise(bias, gf.sum(axis=(0, 2)))
            if x.requires_grad or x._parents:
                gcols = np.einsum("ok,nop->nkp", wmat, gf, optimize=True)
                _scatter_elemwise(x, _col2im(gcols, x.data.shape, kh, kw, stride, padding))
        out._parents, out._backward = operands, bwd
    return out


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0):
    """Adjoint of conv2d: weight (Cin, Cout, kh, kw) over x (N, Cin, H, W).

    Shares the col2im scatter with conv2d's input gradient, so
    <conv2d(a, w), b> == <a, conv_transpose2d(b, w.swap01)> holds exactly.
    """
    if stride < 1:
        raise ValueError("conv_transpose2d: stride must be >= 1")
    n, cin, h, w = x.data.shape
    cin_w, cout, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ValueError(f"conv_transpose2d: input channels {cin} != weight channels {cin_w}")
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    wmat = weight.data.reshape(cin, -1)  # (Cin, Cout*kh*kw)
    cols = np.einsum("ik,nip->nkp", wmat, x.data.reshape(n, cin, -1), optimize=True)
    y = _col2im(cols, (n, cout, ho, wo), kh, kw, stride, padding)
    if bias is not None:
        y = y + bias.data[None, :, None, None]
    out = Tensor(y)
    operands = (x, weight) if bias is None else (x, weight, bias)
    if any(t.requires_grad or t._parents for t in operands):
        def bwd(g):
            gcols, _, _ = _im2col(g, kh, kw, stride, padding)
            if x.requires_grad or x._parents:
                gx = np.einsum("ik,nkp->nip", wmat, gcols, optimize=True)
                _scatter_elemwise(x, gx.reshape(x.data.shape))
            if weight.requires_grad or weight._parents:
                gw = np.einsum("nip,nkp->ik", x.data.reshape(n, cin, -1), gcols, optimize=True)
                _scatter_elemwise(weight, gw.reshape(weight.data.shape))
            if bias is not None and (bias.requires_grad or bias._parents):
                _scatter_elemwise(bias, g.sum(axis=(0, 2, 3)))
        out._parents, out._backward = operands, bwd
    return out


# -- 3D convolution (context model over binary code volumes) ----------------

def conv3d(x, weight, bias=None, padding=0):
    """3D cross-correlation, stride 1. weight (Cout, Cin, kd, kh, kw)."""
    n, cin, d, h, w = x.data.shape
    cout, cin_w, kd, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ValueError(f"conv3d: input channels {cin} != weight channels {cin_w}")
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p), (p, p))) if p else x.data
    do, ho, wo = d + 2 * p - kd + 1, h + 2 * p - kh + 1, w + 2 * p - kw + 1
    v = sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))
    cols = np.ascontiguousarray(v.transpose(0, 1, 5, 6, 7, 2, 3, 4)).reshape(n, cin * kd * kh * kw, -1)
    wmat = weight.data.reshape(cout, -1)
    y = np.einsum("ok,nkp->nop", wmat, cols, optimize=True).reshape(n, cout, do, ho, wo)
    if bias is not None:
        y += bias.data[None, :, None, None, None]
    out = Tensor(np.ascontiguousarray(y))
    operands = (x, weight) if bias is None else (x, weight, bias)
    if any(t.requires_grad or t._parents for t in operands):
        def bwd(g):
            gf = g.reshape(n, cout, -1)
            if weight.requires_grad or weight._parents:
                gw = np.einsum("nop,nkp->ok", gf, cols, optimize=True).reshape(weight.data.shape)
                _scatter_elemwise(weight, gw)
            if bias is not None and (bias.requires_grad or bias._parents):
                _scatter_elemwise(bias, gf.sum(axis=(0, 2)))
            if x.requires_grad or x._parents:
                gcols = np.einsum("ok,nop->nkp", wmat, gf, optimize=True)
                gx = np.zeros((n, cin, d + 2 * p, h + 2 * p, w + 2 * p), dtype=g.dtype)
                gc = gcols.reshape(n, cin, kd, kh, kw, do, ho, wo)
                for a in range(kd):
                    for b in range(kh):
                        for c_ in range(kw):
                            gx[:, :, a:a + do, b:b + ho, c_:c_ + wo] += gc[:, :, a, b, c_]
                if p:
                    gx = gx[:, :, p:-p, p:-p, p:-p]
                _scatter_elemwise(x, gx)
        out._parents, out._backward = operands, bwd
    return out


# -- bilinear sampling -------------------------------------------------------

def bilinear_sample(x, coords):
    """Sample x (C, H, W) at absolute positions coords (Ho, Wo, 2) = (x, y).

    Out-of-range positions clamp to the border pixel. Differentiable w.r.t.
    both the image and the coordinates (zero coordinate gradient where the
    clamp is active).
    """
    c, h, w = x.data.shape
    if coords.data.ndim != 3 or coords.data.shape[2] != 2:
        raise ValueError(f"bilinear_sample: coords must be (H, W, 2), got {coords.data.shape}")
    cx = coords.data[..., 0]
    cy = coords.data[..., 1]
    xc = np.clip(cx, 0.0, w - 1.0)
    yc = np.clip(cy, 0.0, h - 1.0)
    x0 = np.clip(np.floor(xc).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(yc).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (xc - x0).astype(x.data.dtype)
    wy = (yc - y0).astype(x.data.dtype)
    v00 = x.data[:, y0, x0]
    v01 = x.data[:, y0, x1]
    v10 = x.data[:, y1, x0]
    v11 = x.data[:, y1, x1]
    top = v00 * (1 - wx) + v01 * wx
    bot = v10 * (1 - wx) + v11 * wx
    out = Tensor(top * (1 - wy) + bot * wy)
    if any(t.requires_grad or t._parents for t in (x, coords)):
        def bwd(g):
            if x.requires_grad or x._parents:
                gx = np.zeros_like(x.data)
                flat = lambda yy, xx: (yy * w + xx).ravel()
                gflat = gx.reshape(c, -1)
                for yy, xx, ww in ((y0, x0, (1 - wy) * (1 - wx)), (y0, x1, (1 - wy) * wx),
                                   (y1, x0, wy * (1 - wx)), (y1, x1, wy * wx)):
                    np.add.at(gflat.T, flat(yy, xx), (g * ww).reshape(c, -1).T)
                _scatter_elemwise(x, gx)
            if coords.requires_grad or coords._parents:
                dwx = ((v01 - v00) * (1 - wy) + (v11 - v10) * wy)
                dwy = (bot - top)
                in_x = ((cx > 0) & (cx < w - 1)).astype(x.data.dtype)
                in_y = ((cy > 0) & (cy < h - 1)).astype(x.data.dtype)
                gc = np.zeros_like(coords.data)
                gc[..., 0] = (g * dwx).sum(axis=0) * in_x
                gc[..., 1] = (g * dwy).sum(axis=0) * in_y
                _scatter_elemwise(coords, gc)
        out._parents, out._backward = (x, coords), bwd
    return out


# -- losses ------------------------------------------------------------------

def l1_loss(a, b):
    """Sum of absolute differences."""
    return (a - b).abs().sum()


def bce_with_logits(logits, targets):
    """Numerically stable binary cross-entropy against {0,1} targets, summed."""
    z = logits.data
    y = targets.data
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(np.asarray(loss.sum(), dtype=z.dtype).reshape(()))
    if logits._needs_tape():
        sig = 1.0 / (1.0 + np.exp(-z))

        def bwd(g):
            _scatter_elemwise(logits, g * (sig - y))
        out._parents, out._backward = (logits,), bwd
    return out
