"""Synthetic moving-pattern clips for desk-scale training and evaluation.

Each clip is a smooth textured background translating with a constant
integer velocity, plus a foreground sprite moving independently. Motion is
exactly integer-pel, so block motion search can lock onto it and the
remaining difficulty is occlusion at the sprite edges.
"""

from __future__ import annotations

import numpy as np


def _smooth_noise(rng, h, w, cells=6):
    """Low-frequency RGB texture: coarse noise upsampled bilinearly."""
    coarse = rng.random((3, cells, cells))
    ys = np.linspace(0, cells - 1, h)
    xs = np.linspace(0, cells - 1, w)
    y0 = np.clip(ys.astype(int), 0, cells - 2)
    x0 = np.clip(xs.astype(int), 0, cells - 2)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    tl = coarse[:, y0][:, :, x0]
    tr = coarse[:, y0][:, :, x0 + 1]
    bl = coarse[:, y0 + 1][:, :, x0]
    br = coarse[:, y0 + 1][:, :, x0 + 1]
    return (tl * (1 - fy) * (1 - fx) + tr * (1 - fy) * fx
            + bl * fy * (1 - fx) + br * fy * fx)


def make_clip(rng, n_frames=13, size=64, max_speed=2):
    """One clip as float32 (n_frames, 3, size, size) in [0, 1]."""
    margin = max_speed * (n_frames - 1)
    canvas = _smooth_noise(rng, size + 2 * margin, size + 2 * margin,
                           cells=int(rng.integers(4, 9)))
    vx, vy = rng.integers(-max_speed, max_speed + 1, 2)
    sprite_size = int(rng.integers(size // 8, size // 3))
    sprite = _smooth_noise(rng, sprite_size, sprite_size, cells=3) * 0.5 + 0.25
    svx, svy = rng.integers(-max_speed, max_speed + 1, 2)
    sx0 = int(rng.integers(margin, margin + size - sprite_size))
    sy0 = int(rng.integers(margin, margin + size - sprite_size))
    frames = np.empty((n_frames, 3, size, size), dtype=np.float32)
    for t in range(n_frames):
        ox = margin + vx * t
        oy = margin + vy * t
        frame = canvas[:, oy:oy + size, ox:ox + size].copy()
        # sprite position in canvas coordinates, clamped to the window
        sx = np.clip(sx0 + svx * t - ox, 0, size - sprite_size)
        sy = np.clip(sy0 + svy * t - oy, 0, size - sprite_size)
        frame[:, sy:sy + sprite_size, sx:sx + sprite_size] = sprite
        frames[t] = frame
    return np.clip(frames, 0.0, 1.0)


def make_corpus(rng, n_clips, n_frames=13, size=64, max_speed=2):
    return [make_clip(rng, n_frames, size, max_speed) for _ in range(n_clips)]
