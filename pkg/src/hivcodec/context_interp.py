"""Context U-net and the conditional residual interpolation codec.

A key-frame context network extracts an upconvolutional feature pyramid at
1/8, 1/4 and 1/2 resolution (plus the image itself). Interpolation models
warp those features by block motion and fuse them into the recurrent
encoder/decoder at configured resolutions. One weight set serves both
temporal orientations: flipping the model exchanges the reference order at
the input stack and at every fusion point.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .binarizer import BinaryCode
from .motion import warp_features
from .nn import Conv2d, ConvTranspose2d, Module
from .progressive import CodecConfig, RecurrentAutoencoder, run_iterations

CTX_SCALES = (8, 4, 2, 1)  # pyramid scales, coarse to fine; scale 1 is the image


@dataclass
class ContextNetConfig:
    widths: tuple = (32, 64, 128, 256, 512)  # half-width U-net

    def feature_channels(self, scale):
        """Channels of the upconvolutional feature at a pyramid scale."""
        if scale == 1:
            return 3
        return {8: self.widths[3], 4: self.widths[2], 2: self.widths[1]}[scale]


@dataclass
class ContextFeatures:
    """Per key frame: features at 1/8, 1/4, 1/2 resolution plus the image."""

    levels: list  # Tensors ordered by CTX_SCALES
    scales: tuple = CTX_SCALES

    def at(self, scale):
        return self.levels[self.scales.index(scale)]


class ContextNet(Module):
    """U-net whose upconvolutional features are the interpolation context."""

    def __init__(self, rng, config=None, dtype=np.float32):
        config = config or ContextNetConfig()
        self.config = config
        w = config.widths
        self.stem = Conv2d(rng, 3, w[0], 3, padding=1, dtype=dtype)
        self.downs = [Conv2d(rng, w[i], w[i + 1], 3, stride=2, padding=1, dtype=dtype)
                      for i in range(4)]
        # up path: 1/16 -> 1/8 -> 1/4 -> 1/2
        self.ups = [ConvTranspose2d(rng, w[4], w[3], 2, stride=2, dtype=dtype),
                    ConvTranspose2d(rng, w[3], w[2], 2, stride=2, dtype=dtype),
                    ConvTranspose2d(rng, w[2], w[1], 2, stride=2, dtype=dtype)]
        self.merges = [Conv2d(rng, 2 * w[3], w[3], 3, padding=1, dtype=dtype),
                       Conv2d(rng, 2 * w[2], w[2], 3, padding=1, dtype=dtype),
                       Conv2d(rng, 2 * w[1], w[1], 3, padding=1, dtype=dtype)]

    def __call__(self, img):
        """img: Tensor (N, 3, H, W) -> ContextFeatures with batched levels."""
        skips = []
        x = self.stem(img).relu()
        for down in self.downs:
            skips.append(x)
            x = down(x).relu()
        feats = []
        for up, merge, skip in zip(self.ups, self.merges, reversed(skips[1:])):
            x = up(x).relu()
            x = merge(T.concat([x, skip], axis=1)).relu()
            feats.append(x)
        return ContextFeatures(levels=feats + [img])


def extract_context(net, img):
    """Context features for one unbatched (3, H, W) key frame."""
    c, h, w = img.data.shape
    if h % 16 or w % 16:
        raise ValueError(f"image size {h}x{w} must be a multiple of 16")
    batched = img.reshape(1, c, h, w)
    feats = net(batched)
    # drop the batch axis without detaching from the tape
    return ContextFeatures([f.reshape(*f.data.shape[1:]) for f in feats.levels])


@dataclass(frozen=True)
class InterpModelSpec:
    """Temporal offsets, bottleneck width and fusion points of one model."""

    a: int              # frames to the past reference
    b: int              # frames to the future reference
    bottleneck_bits: int
    enc_fusion: tuple = (2,)
    dec_fusion: tuple = (2,)
    flipped: bool = False

    def __post_init__(self):
        if self.a < 1 or self.b < 1:
            raise ValueError("reference offsets must be >= 1")

    @property
    def distance(self):
        return self.a + self.b


# fusion points follow the per-model validation tuning: every model fuses at
# 1/2; short- and mid-range encoders add 1/4; the mid-range decoder adds 1/4
# and 1/8
SPEC_M66 = InterpModelSpec(6, 6, 16, enc_fusion=(2,), dec_fusion=(2,))
SPEC_M33 = InterpModelSpec(3, 3, 16, enc_fusion=(2, 4), dec_fusion=(2, 4, 8))
SPEC_M12 = InterpModelSpec(1, 2, 8, enc_fusion=(2, 4), dec_fusion=(2,))


def flip_model(spec):
    """Mirror the temporal offsets; same weights, references exchanged."""
    return replace(spec, a=spec.b, b=spec.a, flipped=not spec.flipped)


class InterpCodec(Module):
    """Conditional residual interpolation model for one InterpModelSpec."""

    def __init__(self, rng, spec, enc_widths=(64, 128, 128, 128),
                 dec_widths=(128, 128, 128, 64), ctx_config=None, k_max=10,
                 dtype=np.float32):
        ctx_config = ctx_config or ContextNetConfig()
        base = flip_model(spec) if spec.flipped else spec  # canonical orientation
        enc_fuse = {s: 2 * ctx_config.feature_channels(s) for s in base.enc_fusion}
        dec_fuse = {s: 2 * ctx_config.feature_channels(s) for s in base.dec_fusion}
        self.spec = base
        self.config = CodecConfig(
            bottleneck_bits=base.bottleneck_bits, k_max=k_max, in_channels=9,
            enc_widths=enc_widths, dec_widths=dec_widths,
            enc_fuse_channels=enc_fuse, dec_fuse_channels=dec_fuse)
        self.context_net = ContextNet(rng, ctx_config, dtype=dtype)
        self.net = RecurrentAutoencoder(rng, self.config, dtype=dtype)


def _warped_context(codec, ref, field):
    """Extract and motion-warp one reference's feature pyramid (unbatched)."""
    feats = extract_context(codec.context_net, ref)
    if field is None:
        warped = feats.levels[:3]
    else:
        warped = warp_features(feats.levels[:3], field, scales=CTX_SCALES[:3])
    return {s: w for s, w in zip(CTX_SCALES[:3], warped)}


def _fusion_inputs(codec, spec, ref1, ref2, field1, field2):
    """Per-scale fusion tensors, honoring the model's reference orientation."""
    if spec.flipped:
        ref1, ref2 = ref2, ref1
        field1, field2 = field2, field1
    w1 = _warped_context(codec, ref1, field1)
    w2 = _warped_context(codec, ref2, field2)

    def batched(t):
        return t.reshape(1, *t.data.shape) if t.data.ndim == 3 else t

    enc_ctx = {s: [batched(w1[s]), batched(w2[s])] for s in codec.spec.enc_fusion}
    dec_ctx = {s: [batched(w1[s]), batched(w2[s])] for s in codec.spec.dec_fusion}
    return ref1, ref2, enc_ctx, dec_ctx


def encode_interp(codec, target, ref1, ref2, field1, field2, spec, K):
    """Encode a target frame conditioned on two decoded references.

    References must be decoded frames (never originals) so the encoder and
    decoder condition on identical data.
    """
    if target.data.shape != ref1.data.shape or target.data.shape != ref2.data.shape:
        raise ValueError("target and reference shapes differ")
    r1, r2, enc_ctx, dec_ctx = _fusion_inputs(codec, spec, ref1, ref2, field1, field2)
    stack = T.Tensor(np.concatenate([r1.data, target.data, r2.data])[None])
    codes, _, _ = run_iterations(codec.net, stack, K, ctx_enc=enc_ctx, ctx_dec=dec_ctx)
    return BinaryCode([c.data[0].copy() for c in codes])


def decode_interp(codec, code, ref1, ref2, field1, field2, spec):
    """Reconstruct a frame from its code and the decoded references."""
    if code.k == 0:
        raise ValueError("empty code")
    if code.grid_shape[0] != codec.config.bottleneck_bits:
        raise ValueError(f"code L={code.grid_shape[0]} does not match model "
                         f"L={codec.config.bottleneck_bits}")
    _, _, _, dec_ctx = _fusion_inputs(codec, spec, ref1, ref2, field1, field2)
    _, hc, wc = code.grid_shape
    h, w = hc * 16, wc * 16
    _, dec_state = codec.net.zero_state(1, h, w)
    recon = None
    for grid in code.iterations:
        b = T.Tensor(grid.reshape(1, *grid.shape).astype(np.float32))
        out, dec_state = codec.net.dec_step(b, dec_state, dec_ctx)
        recon = out if recon is None else recon + out
    return T.Tensor(recon.data[0])


def interp_loss(codec, target, ref1, ref2, field1, field2, spec, K, rng):
    """Training loss: sum of L1 residual norms through the binarizer."""
    r1, r2, enc_ctx, dec_ctx = _fusion_inputs(codec, spec, ref1, ref2, field1, field2)
    stack = T.Tensor(np.concatenate([r1.data, target.data, r2.data])[None])
    _, _, residuals = run_iterations(codec.net, stack, K, ctx_enc=enc_ctx,
                                     ctx_dec=dec_ctx, rng=rng)
    loss = None
    for r in residuals:
        term = r.abs().sum()
        loss = term if loss is None else loss + term
    return loss
