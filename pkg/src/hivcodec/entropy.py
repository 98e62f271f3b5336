"""Bit-exact adaptive arithmetic coding and the learned context model.

The coder is a 32-bit integer range coder with carry handling via pending
bits. Probabilities are quantized to 16 bits on both sides before any range
arithmetic, so encoder and decoder trajectories are identical across
machines. Floating point never enters the coding loop.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .binarizer import BinaryCode, pack_code, unpack_code
from .nn import AdamState, BatchNorm3d, Conv3dMasked, Module, adam_step, zero_grads

PROB_BITS = 16
PROB_ONE = 1 << PROB_BITS
EPS_PROB = 1.0 / PROB_ONE

_MASK = (1 << 32) - 1
_HALF = 1 << 31
_QUARTER = 1 << 30


def quantize_prob(p1):
    """Quantize P(bit=1) to an integer in [1, 65535]."""
    q = int(round(p1 * PROB_ONE))
    return min(max(q, 1), PROB_ONE - 1)


class BitWriter:
    def __init__(self):
        self.buf = bytearray()
        self.acc = 0
        self.nacc = 0
        self.n_bits = 0

    def write(self, bit):
        self.acc = (self.acc << 1) | bit
        self.nacc += 1
        self.n_bits += 1
        if self.nacc == 8:
            self.buf.append(self.acc)
            self.acc = 0
            self.nacc = 0

    def getvalue(self):
        if self.nacc:
            return bytes(self.buf) + bytes([self.acc << (8 - self.nacc)])
        return bytes(self.buf)


class BitReader:
    """MSB-first bit reader; reads past the declared end yield zeros."""

    def __init__(self, data, n_bits):
        if len(data) * 8 < n_bits:
            raise ValueError("truncated arithmetic-coded payload")
        self.data = data
        self.n_bits = n_bits
        self.pos = 0

    def read(self):
        if self.pos >= self.n_bits:
            return 0
        byte = self.data[self.pos >> 3]
        bit = (byte >> (7 - (self.pos & 7))) & 1
        self.pos += 1
        return bit


class ArithmeticEncoder:
    def __init__(self):
        self.low = 0
        self.high = _MASK
        self.pending = 0
        self.out = BitWriter()

    def _emit(self, bit):
        self.out.write(bit)
        while self.pending:
            self.out.write(1 - bit)
            self.pending -= 1

    def encode(self, bit, p1q):
        rng = self.high - self.low + 1
        r1 = (rng * p1q) >> PROB_BITS
        if r1 == 0:
            r1 = 1
        elif r1 >= rng:
            r1 = rng - 1
        if bit:
            self.high = self.low + r1 - 1
        else:
            self.low = self.low + r1
        while True:
            if self.high < _HALF:
                self._emit(0)
            elif self.low >= _HALF:
                self._emit(1)
                self.low -= _HALF
                self.high -= _HALF
            elif self.low >= _QUARTER and self.high < 3 * _QUARTER:
                self.pending += 1
                self.low -= _QUARTER
                self.high -= _QUARTER
            else:
                break
            self.low = (self.low << 1) & _MASK
            self.high = ((self.high << 1) | 1) & _MASK

    def finish(self):
        """Flush disambiguating bits; returns (payload bytes, payload bit length)."""
        self.pending += 1
        if self.low < _QUARTER:
            self._emit(0)
        else:
            self._emit(1)
        return self.out.getvalue(), self.out.n_bits


class ArithmeticDecoder:
    def __init__(self, data, n_bits):
        self.reader = BitReader(data, n_bits)
        self.low = 0
        self.high = _MASK
        self.code = 0
        for _ in range(32):
            self.code = (self.code << 1) | self.reader.read()

    def decode(self, p1q):
        rng = self.high - self.low + 1
        r1 = (rng * p1q) >> PROB_BITS
        if r1 == 0:
            r1 = 1
        elif r1 >= rng:
            r1 = rng - 1
        bit = 1 if self.code - self.low < r1 else 0
        if bit:
            self.high = self.low + r1 - 1
        else:
            self.low = self.low + r1
        while True:
            if self.high < _HALF:
                pass
            elif self.low >= _HALF:
                self.low -= _HALF
                self.high -= _HALF
                self.code -= _HALF
            elif self.low >= _QUARTER and self.high < 3 * _QUARTER:
                self.low -= _QUARTER
                self.high -= _QUARTER
                self.code -= _QUARTER
            else:
                break
            self.low = (self.low << 1) & _MASK
            self.high = ((self.high << 1) | 1) & _MASK
            self.code = ((self.code << 1) | self.reader.read()) & _MASK
        return bit


def ac_encode(bits, probs):
    """Encode a bit sequence under per-bit P(bit=1) estimates.

    Returns (payload bytes, payload bit length). The payload length obeys
    sum(-log2 p(bit_i)) + 32 bits.
    """
    enc = ArithmeticEncoder()
    for bit, p in zip(bits, probs):
        enc.encode(int(bit), quantize_prob(p))
    return enc.finish()


def ac_decode(payload, n_payload_bits, n_symbols, prob_provider):
    """Decode n_symbols bits; prob_provider(i, decoded_so_far) -> P(bit=1)."""
    dec = ArithmeticDecoder(payload, n_payload_bits)
    out = []
    for i in range(n_symbols):
        p = prob_provider(i, out)
        out.append(dec.decode(quantize_prob(p)))
    return out


# -- adaptive order-0 model (serves motion blobs) ---------------------------

class AdaptiveOrder0Model:
    """Laplace-smoothed adaptive frequency model over a small alphabet.

    Symbols are coded as fixed-width binary decisions whose probabilities
    derive from the current counts, so encoder and decoder stay in lockstep.
    """

    def __init__(self, alphabet_size):
        self.counts = [1] * alphabet_size
        self.width = max(1, (alphabet_size - 1).bit_length())
        self.size = alphabet_size

    def _subtree_counts(self, prefix, depth):
        # symbols whose top `depth+1` bits extend `prefix` with 0 / with 1
        shift = self.width - depth - 1
        c0 = c1 = 0
        base = prefix << 1
        for s in range(self.size):
            if s >> (shift + 1) == prefix:
                if (s >> shift) & 1:
                    c1 += self.counts[s]
                else:
                    c0 += self.counts[s]
        return c0, c1

    def encode_symbol(self, enc, symbol):
        if not 0 <= symbol < self.size:
            raise ValueError(f"symbol {symbol} outside alphabet of size {self.size}")
        prefix = 0
        for depth in range(self.width):
            c0, c1 = self._subtree_counts(prefix, depth)
            bit = (symbol >> (self.width - depth - 1)) & 1
            p1 = c1 / (c0 + c1) if c0 + c1 else 0.5
            enc.encode(bit, quantize_prob(min(max(p1, EPS_PROB), 1 - EPS_PROB)))
            prefix = (prefix << 1) | bit
        self.counts[symbol] += 1

    def decode_symbol(self, dec):
        prefix = 0
        for depth in range(self.width):
            c0, c1 = self._subtree_counts(prefix, depth)
            p1 = c1 / (c0 + c1) if c0 + c1 else 0.5
            bit = dec.decode(quantize_prob(min(max(p1, EPS_PROB), 1 - EPS_PROB)))
            prefix = (prefix << 1) | bit
        self.counts[prefix] += 1
        return prefix


def order0_encode(symbols, alphabet_size):
    model = AdaptiveOrder0Model(alphabet_size)
    enc = ArithmeticEncoder()
    for s in symbols:
        model.encode_symbol(enc, int(s))
    return enc.finish()


def order0_decode(payload, n_payload_bits, n_symbols, alphabet_size):
    model = AdaptiveOrder0Model(alphabet_size)
    dec = ArithmeticDecoder(payload, n_payload_bits)
    return [model.decode_symbol(dec) for _ in range(n_symbols)]


# -- learned context model over binary code grids ---------------------------

@dataclass
class ContextModelConfig:
    n_layers: int = 11
    channels: int = 128
    kernel: int = 3


class ContextModel(Module):
    """Autoregressive next-bit predictor over an (L, H/16, W/16) binary grid.

    Masked 3D convolutions in channel-major raster scan order; batch norm and
    relu between layers; batch norm runs with frozen statistics during coding.
    """

    def __init__(self, rng, config=None, dtype=np.float32):
        config = config or ContextModelConfig()
        self.config = config
        layers = []
        norms = []
        in_ch = 1
        for i in range(config.n_layers):
            mask = "A" if i == 0 else "B"
            layers.append(Conv3dMasked(rng, in_ch, config.channels, config.kernel, mask, dtype))
            norms.append(BatchNorm3d(config.channels, dtype=dtype))
            in_ch = config.channels
        self.layers = layers
        self.norms = norms
        self.head = Conv3dMasked(rng, in_ch, 1, config.kernel, "B", dtype)

    def logits(self, volume, training=False):
        """volume: Tensor (N, 1, L, H, W) of {-1,+1} values -> logits (N, 1, L, H, W)."""
        x = volume
        for conv, bn in zip(self.layers, self.norms):
            x = bn(conv(x), training=training).relu()
        return self.head(x)

    def probabilities(self, grid):
        """P(bit=1) for every position of one {-1,+1} grid (L, H, W)."""
        vol = T.Tensor(grid.reshape(1, 1, *grid.shape).astype(np.float32))
        z = self.logits(vol, training=False).data.reshape(grid.shape)
        p = 1.0 / (1.0 + np.exp(-z.astype(np.float64)))
        return np.clip(p, EPS_PROB, 1.0 - EPS_PROB)


def context_model_loss(model, grids, training=True):
    """Summed BCE of next-bit prediction over a batch of {-1,+1} grids."""
    batch = np.stack(grids).astype(np.float32)[:, None]
    vol = T.Tensor(batch)
    z = model.logits(vol, training=training)
    targets = T.Tensor((batch > 0).astype(np.float32))
    return T.bce_with_logits(z, targets)


def train_context_model(grids, rng, config=None, steps=200, batch_size=8, lr=1e-4,
                        log_every=0):
    """Fit a context model on a corpus of {-1,+1} grids with Adam."""
    model = ContextModel(rng, config)
    params = model.parameters()
    state = AdamState(lr=lr, clip_norm=None)
    n = len(grids)
    for step in range(steps):
        idx = rng.choice(n, size=min(batch_size, n), replace=False)
        loss = context_model_loss(model, [grids[i] for i in idx], training=True)
        zero_grads(params)
        loss.backward()
        adam_step(params, state)
        if log_every and step % log_every == 0:
            per_bit = loss.item() / (len(idx) * grids[0].size * np.log(2.0))
            print(f"context model step {step}: {per_bit:.4f} bits/bit")
    return model


def cross_entropy_bits_per_bit(model, grids):
    """Mean coded bits per code bit under the model (no coder overhead)."""
    total = 0.0
    count = 0
    for g in grids:
        p = model.probabilities(g)
        bits = (g > 0)
        total += -np.sum(np.where(bits, np.log2(p), np.log2(1.0 - p)))
        count += g.size
    return total / count


# -- code blobs --------------------------------------------------------------
#
# Blob layout: u8 flags (bit0 = raw fallback), u32 payload bit length,
# payload bytes, u32 CRC32 of payload.

FLAG_RAW = 0x01


def _wrap_blob(flags, payload, bitlen):
    return struct.pack("<BI", flags, bitlen) + payload + struct.pack("<I", zlib.crc32(payload))


def _unwrap_blob(blob):
    if len(blob) < 9:
        raise ValueError("entropy blob too short")
    flags, bitlen = struct.unpack_from("<BI", blob, 0)
    payload = blob[5:-4]
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(payload) != crc:
        raise ValueError("entropy blob CRC mismatch")
    return flags, bitlen, payload


def compress_code(code, model):
    """Losslessly compress a BinaryCode with the context model.

    Falls back to raw packed bits (flag bit 0) whenever the model would
    expand the payload, so compressed size <= raw size + header.
    """
    enc = ArithmeticEncoder()
    for grid in code.iterations:
        probs = model.probabilities(grid)
        bits = (grid.ravel() > 0).astype(np.uint8)
        pq = np.rint(probs.ravel() * PROB_ONE).astype(np.int64)
        np.clip(pq, 1, PROB_ONE - 1, out=pq)
        for bit, q in zip(bits, pq):
            enc.encode(int(bit), int(q))
    payload, bitlen = enc.finish()
    raw = pack_code(code)
    if len(payload) >= len(raw):
        return _wrap_blob(FLAG_RAW, raw, code.n_bits)
    return _wrap_blob(0, payload, bitlen)


def decompress_code(blob, model, k, grid_shape):
    flags, bitlen, payload = _unwrap_blob(blob)
    if flags & FLAG_RAW:
        return unpack_code(payload, k, grid_shape)
    dec = ArithmeticDecoder(payload, bitlen)
    grids = []
    for _ in range(k):
        grid = np.zeros(grid_shape, dtype=np.float32)
        flat = grid.reshape(-1)
        for pos in range(flat.size):
            p = model.probabilities(grid)
            q = quantize_prob(float(p.reshape(-1)[pos]))
            bit = dec.decode(q)
            flat[pos] = 1.0 if bit else -1.0
        grids.append(grid)
    return BinaryCode(grids)
