"""Layers, the Adam optimizer, and the flat named-array checkpoint format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, concat, conv2d, conv_transpose2d, conv3d


class Module:
    """Parameter container. Submodules and parameters are discovered by attribute."""

    def parameters(self):
        """Flat dict of name -> Tensor for every parameter in the subtree."""
        out = {}
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                out[name] = val
            elif isinstance(val, Module):
                for sub, p in val.parameters().items():
                    out[f"{name}.{sub}"] = p
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        for sub, p in item.parameters().items():
                            out[f"{name}.{i}.{sub}"] = p
        return out

    def buffers(self):
        """Non-trainable arrays that still belong in a checkpoint.

        Modules list their own buffer attribute names in _buffer_names;
        submodule buffers are collected with dotted prefixes like parameters.
        """
        out = {}
        for name, val in vars(self).items():
            if isinstance(val, Module):
                for sub, b in val.buffers().items():
                    out[f"{name}.{sub}"] = b
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        for sub, b in item.buffers().items():
                            out[f"{name}.{i}.{sub}"] = b
        for name in getattr(self, "_buffer_names", ()):
            out[name] = getattr(self, name)
        return out

    def _assign_buffer(self, path, value):
        obj = self
        parts = path.split(".")
        for part in parts[:-1]:
            obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
        old = getattr(obj, parts[-1])
        if value.shape != old.shape:
            raise ValueError(f"checkpoint shape mismatch for {path}: {value.shape} vs {old.shape}")
        setattr(obj, parts[-1], value.astype(old.dtype))

    def load_state(self, arrays, prefix=""):
        for name, p in self.parameters().items():
            key = prefix + name
            if key not in arrays:
                raise KeyError(f"checkpoint missing parameter {key}")
            a = arrays[key]
            if a.shape != p.data.shape:
                raise ValueError(f"checkpoint shape mismatch for {key}: {a.shape} vs {p.data.shape}")
            p.data = a.astype(p.data.dtype)
        for name in self.buffers():
            key = prefix + name
            if key not in arrays:
                raise KeyError(f"checkpoint missing buffer {key}")
            self._assign_buffer(name, arrays[key])

    def state(self, prefix=""):
        out = {prefix + name: p.data for name, p in self.parameters().items()}
        out.update({prefix + name: b for name, b in self.buffers().items()})
        return out


def _he_init(rng, shape, fan_in, dtype=np.float32):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(self, rng, in_ch, out_ch, kernel, stride=1, padding=0, dtype=np.float32):
        fan_in = in_ch * kernel * kernel
        self.weight = Tensor(_he_init(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(self, rng, in_ch, out_ch, kernel, stride=1, padding=0, dtype=np.float32):
        fan_in = in_ch * kernel * kernel
        self.weight = Tensor(_he_init(rng, (in_ch, out_ch, kernel, kernel), fan_in, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return conv_transpose2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvLSTMCell(Module):
    """Convolutional LSTM with a strided input conv and stride-1 hidden conv.

    Gate order along the channel axis: input, forget, output, candidate.
    """

    def __init__(self, rng, in_ch, hidden_ch, stride=1, kernel=3, dtype=np.float32):
        pad = kernel // 2
        self.input_conv = Conv2d(rng, in_ch, 4 * hidden_ch, kernel, stride=stride, padding=pad, dtype=dtype)
        self.hidden_conv = Conv2d(rng, hidden_ch, 4 * hidden_ch, kernel, stride=1, padding=pad, dtype=dtype)
        self.hidden_ch = hidden_ch
        self.stride = stride

    def __call__(self, x, state):
        h, c = state
        gates = self.input_conv(x) + self.hidden_conv(h)
        hc = self.hidden_ch
        i = gates.narrow(1, 0, hc).sigmoid()
        f = gates.narrow(1, hc, hc).sigmoid()
        o = gates.narrow(1, 2 * hc, hc).sigmoid()
        g = gates.narrow(1, 3 * hc, hc).tanh()
        c_new = f * c + i * g
        h_new = o * c_new.tanh()
        return h_new, c_new

    def zero_state(self, n, h, w, dtype=np.float32):
        shape = (n, self.hidden_ch, h, w)
        z = Tensor(np.zeros(shape, dtype=dtype))
        return z, Tensor(np.zeros(shape, dtype=dtype))


def conv_lstm_cell(x, state, weights):
    """Functional form used by tests: weights is a ConvLSTMCell."""
    return weights(x, state)


class Conv3dMasked(Module):
    """Masked 3D convolution for the autoregressive context model.

    Scan order is channel-major raster: depth (bit plane), then row, then
    column. mask type 'A' excludes the center position, 'B' includes it.
    """

    def __init__(self, rng, in_ch, out_ch, kernel=3, mask_type="B", dtype=np.float32):
        assert kernel % 2 == 1
        fan_in = in_ch * kernel ** 3
        self.weight = Tensor(_he_init(rng, (out_ch, in_ch, kernel, kernel, kernel), fan_in, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self.padding = kernel // 2
        mask = np.zeros((kernel, kernel, kernel), dtype=dtype)
        k = kernel // 2
        for d in range(kernel):
            for r in range(kernel):
                for c in range(kernel):
                    if (d, r, c) < (k, k, k):
                        mask[d, r, c] = 1.0
        if mask_type == "B":
            mask[k, k, k] = 1.0
        self.mask = mask  # not a parameter

    def __call__(self, x):
        w = self.weight * Tensor(np.broadcast_to(self.mask, self.weight.data.shape).copy())
        return conv3d(x, w, self.bias, padding=self.padding)


class BatchNorm3d(Module):
    """Batch norm over (N, D, H, W) per channel, with running statistics.

    During entropy coding it must run in inference mode so encoder and
    decoder see identical statistics.
    """

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x, training=False):
        axes = (0, 2, 3, 4)
        if training:
            mu = x.data.mean(axis=axes)
            var = x.data.var(axis=axes)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mu, var = self.running_mean, self.running_var
        inv = (1.0 / np.sqrt(var + self.eps)).astype(x.data.dtype)
        shape = (1, -1, 1, 1, 1)
        # affine transform on the tape; the normalization statistics are
        # treated as constants (sufficient for this model, and keeps
        # inference bit-exact between encoder and decoder)
        xn = x * Tensor(np.broadcast_to(inv.reshape(shape), x.data.shape).copy()) + \
            Tensor(np.broadcast_to((-mu * inv).reshape(shape).astype(x.data.dtype), x.data.shape).copy())
        return xn * _expand(self.gamma, shape, x.data.shape) + _expand(self.beta, shape, x.data.shape)


def _expand(param, shape, full_shape):
    """Broadcast a per-channel parameter across a 5D activation, on the tape."""
    out = Tensor(np.broadcast_to(param.data.reshape(shape), full_shape).copy())
    if param.requires_grad or param._parents:
        def bwd(g):
            axes = tuple(i for i in range(len(full_shape)) if i != 1)
            param._accumulate(g.sum(axis=axes).astype(param.data.dtype))
        out._parents, out._backward = (param,), bwd
    return out


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 0.5
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def clip_grad_norm(params, max_norm):
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


def adam_step(params, state):
    """One Adam update (bias-corrected) over a named parameter dict.

    Gradient norm clipping (global, at state.clip_norm) is applied first.
    Parameters with no gradient are left untouched.
    """
    if state.clip_norm is not None:
        clip_grad_norm(params, state.clip_norm)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** state.t)
        vhat = v / (1 - b2 ** state.t)
        p.data = p.data - (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype)


def zero_grads(params):
    for p in params.values():
        p.grad = None


# -- checkpoint format -------------------------------------------------------
#
# Flat file of length-prefixed named arrays:
#   u16 LE name length, UTF-8 name, u8 rank, u32 LE dims, f32 LE values.

def save_checkpoint(path, arrays):
    with open(path, "wb") as f:
        for name in sorted(arrays):
            a = np.ascontiguousarray(arrays[name], dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.tobytes())


def load_checkpoint(path):
    arrays = {}
    with open(path, "rb") as f:
        data = f.read()
    off = 0
    while off < len(data):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", data, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(dims)
        off += 4 * count
        arrays[name] = arr.copy()
    return arrays
