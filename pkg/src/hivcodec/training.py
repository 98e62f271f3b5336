"""Training loops for the image codec and the interpolation models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .context_interp import interp_loss
from .metrics import ms_ssim
from .motion import estimate_block_motion
from .nn import AdamState, adam_step, zero_grads
from .progressive import decode_image, encode_image, image_codec_loss


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    k: int = 10
    lr: float = 5e-4
    val_every: int = 200
    lr_patience: int = 2     # validations without improvement before halving
    min_delta: float = 1e-4
    seed: int = 0


def hflip(batch, rng):
    """Random horizontal flip augmentation on a (N, C, H, W) array."""
    out = batch.copy()
    flip = rng.random(len(batch)) < 0.5
    out[flip] = out[flip, :, :, ::-1]
    return out


class PlateauScheduler:
    """Halves the learning rate when the validation metric stops improving."""

    def __init__(self, opt, patience, min_delta):
        self.opt = opt
        self.patience = patience
        self.min_delta = min_delta
        self.best = -np.inf
        self.stale = 0

    def step(self, metric):
        if metric > self.best + self.min_delta:
            self.best = metric
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.opt.lr /= 2.0
                self.stale = 0


def _sample_crops(rng, frames, batch_size, crop):
    """frames: (N, 3, H, W) pool; returns (batch_size, 3, crop, crop)."""
    n, _, h, w = frames.shape
    idx = rng.integers(0, n, batch_size)
    ys = rng.integers(0, h - crop + 1, batch_size)
    xs = rng.integers(0, w - crop + 1, batch_size)
    return np.stack([frames[i, :, y:y + crop, x:x + crop]
                     for i, y, x in zip(idx, ys, xs)])


def train_image_codec(codec, frames, val_frames, config):
    """Fit the still-image codec on a frame pool; returns the loss history.

    frames/val_frames: (N, 3, H, W) float32. Validation MS-SSIM (at full K)
    drives the plateau learning-rate schedule.
    """
    rng = np.random.default_rng(config.seed)
    params = codec.parameters()
    opt = AdamState(lr=config.lr)
    sched = PlateauScheduler(opt, config.lr_patience, config.min_delta)
    crop = min(frames.shape[2], frames.shape[3])
    history = []
    for step in range(config.steps):
        batch = hflip(_sample_crops(rng, frames, config.batch_size, crop), rng)
        loss = image_codec_loss(codec, T.Tensor(batch), config.k, rng)
        history.append(float(loss.data))
        zero_grads(params)
        loss.backward()
        adam_step(params, opt)
        if (step + 1) % config.val_every == 0:
            sched.step(validate_image_codec(codec, val_frames, config.k))
    return history


def validate_image_codec(codec, frames, k):
    scores = []
    for frame in frames:
        recon = decode_image(codec, encode_image(codec, T.Tensor(frame), k))
        scores.append(ms_ssim(frame, np.clip(recon.data, 0, 1)))
    return float(np.mean(scores))


def sample_triplets(rng, clips, spec, batch_size):
    """(ref1, target, ref2) frame triples at the model's temporal offsets."""
    out = []
    for _ in range(batch_size):
        clip = clips[rng.integers(0, len(clips))]
        t = int(rng.integers(spec.a, len(clip) - spec.b))
        out.append((clip[t - spec.a], clip[t], clip[t + spec.b]))
    return out


def train_interp_model(codec, clips, val_clips, config, use_motion=True,
                       search_range=8):
    """Fit one interpolation model on clip triplets; returns loss history.

    Training conditions on original (not decoded) references; the coding
    path switches to decoded references at encode time. use_motion=False
    trains the ablation variant that fuses unwarped context features.
    """
    spec = codec.spec
    rng = np.random.default_rng(config.seed)
    params = codec.parameters()
    opt = AdamState(lr=config.lr)
    sched = PlateauScheduler(opt, config.lr_patience, config.min_delta)
    history = []
    for step in range(config.steps):
        triplets = sample_triplets(rng, clips, spec, config.batch_size)
        loss = None
        for r1, tgt, r2 in triplets:
            if rng.random() < 0.5:
                r1, tgt, r2 = r1[:, :, ::-1].copy(), tgt[:, :, ::-1].copy(), r2[:, :, ::-1].copy()
            f1, f2 = _training_fields(r1, r2, tgt, use_motion, search_range)
            term = interp_loss(codec, T.Tensor(tgt), T.Tensor(r1), T.Tensor(r2),
                               f1, f2, spec, config.k, rng)
            loss = term if loss is None else loss + term
        history.append(float(loss.data) / len(triplets))
        zero_grads(params)
        loss.backward()
        adam_step(params, opt)
        if (step + 1) % config.val_every == 0:
            sched.step(validate_interp_model(codec, val_clips, config.k,
                                             use_motion, search_range))
    return history


def _training_fields(r1, r2, tgt, use_motion, search_range):
    if not use_motion:
        return None, None
    f1 = estimate_block_motion(r1, tgt, search_range=search_range)
    f2 = estimate_block_motion(r2, tgt, search_range=search_range)
    return f1, f2


def validate_interp_model(codec, clips, k, use_motion=True, search_range=8):
    from .context_interp import decode_interp, encode_interp
    spec = codec.spec
    rng = np.random.default_rng(0)
    scores = []
    for clip in clips:
        t = int(rng.integers(spec.a, len(clip) - spec.b))
        r1, tgt, r2 = clip[t - spec.a], clip[t], clip[t + spec.b]
        f1, f2 = _training_fields(r1, r2, tgt, use_motion, search_range)
        code = encode_interp(codec, T.Tensor(tgt), T.Tensor(r1), T.Tensor(r2),
                             f1, f2, spec, k)
        recon = decode_interp(codec, code, T.Tensor(r1), T.Tensor(r2), f1, f2, spec)
        scores.append(ms_ssim(tgt, np.clip(recon.data, 0, 1)))
    return float(np.mean(scores))
