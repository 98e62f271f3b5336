"""Stochastic binarization bottleneck and bit packing.

Network-facing codes are {-1, +1}; on the wire they are {0, 1} packed
row-major (channel outermost, then rows, then columns), zero-padded to a
byte boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _scatter_elemwise


@dataclass
class BinaryCode:
    """Per-frame code: K binary grids of shape (L, H/16, W/16), values in {-1, +1}."""

    iterations: list

    def __post_init__(self):
        shapes = {g.shape for g in self.iterations}
        if len(shapes) > 1:
            raise ValueError(f"all iteration grids must share a shape, got {shapes}")
        for g in self.iterations:
            if not np.all(np.abs(g) == 1):
                raise ValueError("binary code elements must be in {-1, +1}")

    @property
    def k(self):
        return len(self.iterations)

    @property
    def grid_shape(self):
        return self.iterations[0].shape

    @property
    def n_bits(self):
        return sum(g.size for g in self.iterations)

    def __eq__(self, other):
        return isinstance(other, BinaryCode) and self.k == other.k and \
            all(np.array_equal(a, b) for a, b in zip(self.iterations, other.iterations))


def binarize_train(x, rng):
    """Sample b = +1 with probability (1 + x) / 2, else -1.

    Backward is the identity (gradient of the expectation E[b] = x).
    Inputs must lie in [-1, 1] (tanh activations).
    """
    if np.any(np.abs(x.data) > 1.0):
        raise ValueError("binarize_train input must lie in [-1, 1]")
    u = rng.random(x.data.shape)
    b = np.where(u < (1.0 + x.data) / 2.0, 1.0, -1.0).astype(x.data.dtype)
    out = Tensor(b)
    if x.requires_grad or x._parents:
        def bwd(g):
            _scatter_elemwise(x, g)
        out._parents, out._backward = (x,), bwd
    return out


def binarize_infer(x):
    """Deterministic most-likely state: +1 iff x >= 0 (tie at 0 maps to +1)."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return np.where(data >= 0, 1.0, -1.0).astype(np.float32)


def pack_bits(grid):
    """Pack a {-1,+1} grid into bytes, row-major, zero-padded to a byte."""
    flat = (np.asarray(grid).ravel() > 0).astype(np.uint8)
    return np.packbits(flat).tobytes()


def unpack_bits(blob, shape):
    """Inverse of pack_bits for a known grid shape."""
    n = int(np.prod(shape))
    flat = np.unpackbits(np.frombuffer(blob, dtype=np.uint8), count=n)
    return (flat.astype(np.float32) * 2.0 - 1.0).reshape(shape)


def pack_code(code):
    """Pack all K iteration grids into one byte string (per-grid padding)."""
    return b"".join(pack_bits(g) for g in code.iterations)


def unpack_code(blob, k, grid_shape):
    grid_bytes = (int(np.prod(grid_shape)) + 7) // 8
    grids = []
    for i in range(k):
        chunk = blob[i * grid_bytes:(i + 1) * grid_bytes]
        if len(chunk) < grid_bytes:
            raise ValueError("truncated code payload")
        grids.append(unpack_bits(chunk, grid_shape))
    return BinaryCode(grids)
