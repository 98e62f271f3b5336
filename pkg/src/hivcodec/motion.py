"""Block motion estimation, motion warping, and lossless motion storage."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .entropy import ArithmeticDecoder, ArithmeticEncoder, AdaptiveOrder0Model

BLOCK_SIZE = 16
SEARCH_RANGE = 16


@dataclass
class MotionField:
    """Integer per-block displacements (dx, dy) for one direction."""

    vectors: np.ndarray  # (grid_h, grid_w, 2) int16
    block_size: int = BLOCK_SIZE
    search_range: int = SEARCH_RANGE

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.int16)
        if np.any(np.abs(self.vectors) > self.search_range):
            raise ValueError("displacement exceeds search range")

    def __eq__(self, other):
        return isinstance(other, MotionField) and self.block_size == other.block_size \
            and self.search_range == other.search_range \
            and np.array_equal(self.vectors, other.vectors)

    @classmethod
    def zero(cls, h, w, block_size=BLOCK_SIZE, search_range=SEARCH_RANGE):
        gh = -(-h // block_size)
        gw = -(-w // block_size)
        return cls(np.zeros((gh, gw, 2), dtype=np.int16), block_size, search_range)


def _to_gray_planes(img):
    """Channel-summed absolute-difference basis: SAD runs over all channels."""
    a = img.data if isinstance(img, T.Tensor) else np.asarray(img)
    if a.ndim == 2:
        a = a[None]
    return a.astype(np.float32)


def _pad_to_blocks(a, bs):
    c, h, w = a.shape
    ph = (-h) % bs
    pw = (-w) % bs
    if ph or pw:
        a = np.pad(a, ((0, 0), (0, ph), (0, pw)), mode="edge")
    return a


def _candidate_order(search_range):
    """Displacements sorted by (|dx|+|dy|, dy, dx): argmin picks the tie winner."""
    cands = [(dx, dy) for dy in range(-search_range, search_range + 1)
             for dx in range(-search_range, search_range + 1)]
    cands.sort(key=lambda d: (abs(d[0]) + abs(d[1]), d[1], d[0]))
    return cands


def estimate_block_motion(reference, target, block_size=BLOCK_SIZE, search_range=SEARCH_RANGE):
    """Exhaustive integer-pel block search minimizing SAD against the reference.

    The predicted pixel at i reads the reference at i - (dx, dy); reads
    outside the frame clamp to the border. Ties break by smallest
    |dx|+|dy|, then smallest dy, then dx.
    """
    ref = _to_gray_planes(reference)
    tgt = _to_gray_planes(target)
    if ref.shape != tgt.shape:
        raise ValueError(f"reference/target shape mismatch: {ref.shape} vs {tgt.shape}")
    ref = _pad_to_blocks(ref, block_size)
    tgt = _pad_to_blocks(tgt, block_size)
    c, h, w = ref.shape
    gh, gw = h // block_size, w // block_size
    r = search_range
    padded = np.pad(ref, ((0, 0), (r, r), (r, r)), mode="edge")
    best_sad = np.full((gh, gw), np.inf, dtype=np.float32)
    best = np.zeros((gh, gw, 2), dtype=np.int16)
    for dx, dy in _candidate_order(r):
        shifted = padded[:, r - dy:r - dy + h, r - dx:r - dx + w]
        sad = np.abs(tgt - shifted).sum(axis=0)
        blocks = sad.reshape(gh, block_size, gw, block_size).sum(axis=(1, 3))
        better = blocks < best_sad
        best_sad[better] = blocks[better]
        best[better] = (dx, dy)
    return MotionField(best, block_size, search_range)


def _expand_field(field, h, w, scale=1):
    """Per-block vectors expanded to per-pixel maps at resolution (h, w)."""
    bs = max(field.block_size // scale, 1)
    v = np.repeat(np.repeat(field.vectors, bs, axis=0), bs, axis=1)
    return v[:h, :w].astype(np.float32)


def warp_image(source, field):
    """Warp the source so output pixel i reads source at i - T_i (clamped)."""
    src = _to_gray_planes(source)
    c, h, w = src.shape
    v = _expand_field(field, h, w)
    ys, xs = np.mgrid[0:h, 0:w]
    sy = np.clip(ys - v[..., 1].astype(np.int64), 0, h - 1)
    sx = np.clip(xs - v[..., 0].astype(np.int64), 0, w - 1)
    out = src[:, sy, sx]
    if isinstance(source, T.Tensor):
        return T.Tensor(out)
    return out


def warp_features(pyramid, field, scales):
    """Warp a feature pyramid by motion scaled to each level's resolution.

    pyramid: list of Tensors (C, H_l, W_l); scales: downsampling factor per
    level (1 = full resolution). Fractional positions use bilinear sampling,
    so the result is differentiable w.r.t. the features.
    """
    out = []
    for feat, scale in zip(pyramid, scales):
        c, h, w = feat.data.shape
        v = _expand_field(field, h, w, scale=scale) / float(scale)
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
        coords = np.stack([xs - v[..., 0], ys - v[..., 1]], axis=-1)
        out.append(T.bilinear_sample(feat, T.Tensor(coords)))
    return out


# -- lossless motion storage -------------------------------------------------
#
# Blob layout: u8 block_size, u8 search_range, u16 LE grid_w, u16 LE grid_h,
# u32 LE payload byte length, arithmetic-coded payload of 4 delta-predicted
# component planes, u32 LE CRC32 of the payload.

def _delta_encode_plane(plane):
    d = plane.astype(np.int32).copy()
    d[:, 1:] -= plane[:, :-1]
    return d


def _delta_decode_plane(deltas):
    return np.cumsum(deltas, axis=1, dtype=np.int32)


def compress_motion(forward, backward):
    """Losslessly pack both motion fields into one byte blob."""
    if forward.block_size != backward.block_size or forward.search_range != backward.search_range:
        raise ValueError("forward/backward field parameters differ")
    gh, gw, _ = forward.vectors.shape
    r = forward.search_range
    alphabet = 4 * r + 1  # deltas of values in [-r, r]
    enc = ArithmeticEncoder()
    model = AdaptiveOrder0Model(alphabet)
    for field in (forward, backward):
        for comp in range(2):
            deltas = _delta_encode_plane(field.vectors[..., comp])
            for s in (deltas.ravel() + 2 * r):
                model.encode_symbol(enc, int(s))
    payload, bitlen = enc.finish()
    header = struct.pack("<BBHH", forward.block_size, r, gw, gh)
    return header + struct.pack("<I", len(payload)) + payload + struct.pack("<I", zlib.crc32(payload))


def decompress_motion(blob):
    """Inverse of compress_motion; returns (forward, backward)."""
    if len(blob) < 14:
        raise ValueError("motion blob too short")
    bs, r, gw, gh = struct.unpack_from("<BBHH", blob, 0)
    (plen,) = struct.unpack_from("<I", blob, 6)
    payload = blob[10:10 + plen]
    if len(payload) != plen or len(blob) < 10 + plen + 4:
        raise ValueError("motion blob truncated")
    (crc,) = struct.unpack_from("<I", blob, 10 + plen)
    if zlib.crc32(payload) != crc:
        raise ValueError("motion blob CRC mismatch")
    alphabet = 4 * r + 1
    dec = ArithmeticDecoder(payload, len(payload) * 8)
    model = AdaptiveOrder0Model(alphabet)
    fields = []
    for _ in range(2):
        comps = []
        for _ in range(2):
            syms = np.array([model.decode_symbol(dec) for _ in range(gh * gw)], dtype=np.int32)
            deltas = syms.reshape(gh, gw) - 2 * r
            comps.append(_delta_decode_plane(deltas))
        fields.append(MotionField(np.stack(comps, axis=-1).astype(np.int16), bs, r))
    return fields[0], fields[1]


def motion_blob_bits(blob):
    return len(blob) * 8
