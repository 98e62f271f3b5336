"""Progressive recurrent autoencoder: the I-frame model and the shared
recurrent encode/decode core the interpolation models build on.

The encoder is 4 stride-2 Conv-LSTM stages down to a 1/16-resolution
binary bottleneck; the decoder mirrors it with stride-2 transposed
convolutions. Iteration k codes the residual left by iterations 1..k-1,
so any prefix of the code decodes to a coarser reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .binarizer import BinaryCode, binarize_infer, binarize_train
from .nn import Conv2d, ConvLSTMCell, ConvTranspose2d, Module

ENC_SCALES = (1, 2, 4, 8)    # input resolution of each encoder Conv-LSTM
DEC_SCALES = (16, 8, 4, 2)   # input resolution of each decoder Conv-LSTM


@dataclass
class CodecConfig:
    """Architecture of one recurrent codec (widths are configurable so the
    same code runs both desk-scale toy models and the full-size layout)."""

    bottleneck_bits: int = 32  # L: bits per bottleneck location
    k_max: int = 10
    in_channels: int = 3
    enc_widths: tuple = (64, 128, 128, 128)
    dec_widths: tuple = (128, 128, 128, 64)
    # extra input channels fused before the Conv-LSTM at each scale
    enc_fuse_channels: dict = field(default_factory=dict)
    dec_fuse_channels: dict = field(default_factory=dict)

    @property
    def bpp_per_iteration(self):
        return self.bottleneck_bits / 256.0


class RecurrentAutoencoder(Module):
    """Encoder/decoder pair with per-stage Conv-LSTM state."""

    def __init__(self, rng, config, dtype=np.float32):
        self.config = config
        c = config
        enc = []
        in_ch = c.in_channels
        for scale, width in zip(ENC_SCALES, c.enc_widths):
            enc.append(ConvLSTMCell(rng, in_ch + c.enc_fuse_channels.get(scale, 0),
                                    width, stride=2, dtype=dtype))
            in_ch = width
        self.enc_stages = enc
        self.enc_head = Conv2d(rng, c.enc_widths[-1], c.bottleneck_bits, 1, dtype=dtype)
        self.dec_in = Conv2d(rng, c.bottleneck_bits, c.dec_widths[0], 1, dtype=dtype)
        dec = []
        ups = []
        in_ch = c.dec_widths[0]
        for i, (scale, width) in enumerate(zip(DEC_SCALES, c.dec_widths)):
            dec.append(ConvLSTMCell(rng, in_ch + c.dec_fuse_channels.get(scale, 0),
                                    width, stride=1, dtype=dtype))
            out_w = c.dec_widths[i + 1] if i + 1 < len(c.dec_widths) else c.dec_widths[-1]
            ups.append(ConvTranspose2d(rng, width, out_w, 2, stride=2, dtype=dtype))
            in_ch = out_w
        self.dec_stages = dec
        self.dec_ups = ups
        self.dec_out = Conv2d(rng, c.dec_widths[-1], 3, 1, dtype=dtype)

    def zero_state(self, n, h, w, dtype=np.float32):
        enc_state = []
        for scale, cell in zip(ENC_SCALES, self.enc_stages):
            enc_state.append(cell.zero_state(n, h // (2 * scale), w // (2 * scale), dtype))
        dec_state = []
        for scale, cell in zip(DEC_SCALES, self.dec_stages):
            dec_state.append(cell.zero_state(n, h // scale, w // scale, dtype))
        return enc_state, dec_state

    def enc_step(self, x, state, ctx=None):
        """One encoder pass: x at full resolution -> tanh bottleneck at 1/16."""
        new_state = []
        for i, (scale, cell) in enumerate(zip(ENC_SCALES, self.enc_stages)):
            if ctx and scale in ctx:
                x = T.concat([x] + ctx[scale], axis=1)
            h, c = cell(x, state[i])
            new_state.append((h, c))
            x = h
        return self.enc_head(x).tanh(), new_state

    def dec_step(self, b, state, ctx=None):
        """One decoder pass: bottleneck bits -> residual estimate at full res."""
        x = self.dec_in(b)
        new_state = []
        for i, (scale, cell) in enumerate(zip(DEC_SCALES, self.dec_stages)):
            if ctx and scale in ctx:
                x = T.concat([x] + ctx[scale], axis=1)
            h, c = cell(x, state[i])
            new_state.append((h, c))
            x = self.dec_ups[i](h)
        return self.dec_out(x).tanh(), new_state


def _check_image(img):
    if img.data.ndim != 4:
        raise ValueError(f"expected batched (N, C, H, W) image, got {img.data.shape}")
    n, c, h, w = img.data.shape
    if h % 16 or w % 16:
        raise ValueError(f"image size {h}x{w} must be a multiple of 16; pad before encoding")
    return n, c, h, w


def run_iterations(model, target, K, ctx_enc=None, ctx_dec=None, rng=None):
    """Run the progressive residual recurrence for K iterations.

    Returns (codes, outputs, residuals): per-iteration bottleneck Tensors
    (post-binarization), decoder outputs, and residuals. Stochastic
    binarization is used when an rng is supplied (training); otherwise the
    deterministic most-likely state.
    """
    n, c, h, w = _check_image(target)
    if not 1 <= K <= model.config.k_max:
        raise ValueError(f"K={K} outside [1, {model.config.k_max}]")
    enc_state, dec_state = model.zero_state(n, h, w, dtype=target.data.dtype)
    # conditional models take a 9-channel (ref1, target, ref2) stack; the
    # residual recurrence then runs on the middle slot only
    stacked = c != 3
    r = target.narrow(1, 3, 3) if stacked else target
    x_in = target
    codes, outputs, residuals = [], [], []
    for _ in range(K):
        z, enc_state = model.enc_step(x_in, enc_state, ctx_enc)
        if rng is not None:
            b = binarize_train(z, rng)
        else:
            b = T.Tensor(binarize_infer(z).astype(target.data.dtype))
        out, dec_state = model.dec_step(b, dec_state, ctx_dec)
        r = r - out
        codes.append(b)
        outputs.append(out)
        residuals.append(r)
        if stacked:
            x_in = T.concat([target.narrow(1, 0, 3), r, target.narrow(1, 6, 3)], axis=1)
        else:
            x_in = r
    return codes, outputs, residuals


class ImageCodec(Module):
    """The I-frame model: a plain recurrent autoencoder with no conditioning."""

    def __init__(self, rng, config=None, dtype=np.float32):
        config = config or CodecConfig()
        self.config = config
        self.net = RecurrentAutoencoder(rng, config, dtype=dtype)


def encode_image(codec, img, K):
    """Encode one (3, H, W) image into K binary grids (deterministic)."""
    batched = T.Tensor(img.data.reshape(1, *img.data.shape)) if img.data.ndim == 3 else img
    codes, _, _ = run_iterations(codec.net, batched, K)
    return BinaryCode([c.data[0].copy() for c in codes])


def decode_image(codec, code):
    """Sum of decoder outputs over the code's iterations (any prefix is valid)."""
    if code.k == 0:
        raise ValueError("empty code")
    l, hc, wc = code.grid_shape
    if l != codec.config.bottleneck_bits:
        raise ValueError(f"code has L={l} but model expects L={codec.config.bottleneck_bits}")
    h, w = hc * 16, wc * 16
    _, dec_state = codec.net.zero_state(1, h, w)
    recon = None
    for grid in code.iterations:
        b = T.Tensor(grid.reshape(1, *grid.shape).astype(np.float32))
        out, dec_state = codec.net.dec_step(b, dec_state)
        recon = out if recon is None else recon + out
    return T.Tensor(recon.data[0])


def image_codec_loss(codec, batch, K, rng):
    """Training loss: sum of L1 norms of all K residuals."""
    _, _, residuals = run_iterations(codec.net, batch, K, rng=rng)
    loss = None
    for r in residuals:
        term = r.abs().sum()
        loss = term if loss is None else loss + term
    return loss
