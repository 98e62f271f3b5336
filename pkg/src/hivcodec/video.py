"""Whole-video encode/decode on top of the GOP machinery, plus metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitstream import (ContainerHeader, crop_frame, deserialize_gop, gop_bit_stats,
                        pad_frame, serialize_gop)
from .hierarchy import GopRecord, RateCombo, build_gop_plan, decode_gop, encode_gop
from .metrics import ms_ssim, psnr
from .motion import SEARCH_RANGE

ROLE_LEVELS = {"I": 0, "M66": 1, "M33": 2, "M12": 3}


def _role_table(models, combo):
    table = {}
    for role, level in ROLE_LEVELS.items():
        table[role] = (models[role].config.bottleneck_bits, combo.k_for_level(level))
    return table


def encode_video(frames, models, combo, gop_n=12, context_models=None,
                 checkpoint_digest=0, search_range=SEARCH_RANGE):
    """Encode a frame list into (header, gop_blobs).

    Frames are edge-padded to multiples of 16; the last GOP is completed by
    repeating the final frame, with the true frame count recorded so decode
    can drop the filler.
    """
    if not frames:
        raise ValueError("no frames to encode")
    frames = [np.asarray(f, dtype=np.float32) for f in frames]
    _, oh, ow = frames[0].shape
    for f in frames:
        if f.shape != frames[0].shape:
            raise ValueError("mixed frame dimensions in input")
    padded = [pad_frame(f) for f in frames]
    _, h, w = padded[0].shape
    n_frames = len(padded)
    plan = build_gop_plan(gop_n)
    n_gops = max(1, -(-(n_frames - 1) // gop_n))
    while len(padded) < n_gops * gop_n + 1:
        padded.append(padded[-1])
    if not isinstance(combo, RateCombo):
        combo = RateCombo(*combo)
    header = ContainerHeader(w, h, ow, oh, n_frames, gop_n,
                             _role_table(models, combo), checkpoint_digest,
                             entropy=context_models is not None)
    blobs = []
    for g in range(n_gops):
        chunk = padded[g * gop_n:g * gop_n + gop_n + 1]
        record = encode_gop(chunk, plan, combo, models, search_range=search_range)
        blobs.append(serialize_gop(record, context_models, first_gop=(g == 0)))
    return header, blobs


def decode_video(header, gop_blobs, models, context_models=None):
    """Reconstruct the original-size frame list from container contents."""
    plan = build_gop_plan(header.gop_n)
    combo = RateCombo(*header.combo())
    frames = []
    boundary_code = None
    boundary_recon = None
    for g, blob in enumerate(gop_blobs):
        codes, motion = deserialize_gop(blob, plan, header, context_models,
                                        first_gop=(g == 0), boundary_code=boundary_code)
        record = GopRecord(plan, combo, codes, motion)
        recons = decode_gop(record, models)
        if g == 0:
            frames.extend(recons)
        else:
            # recompute of the shared boundary frame must agree bit-exactly
            assert np.array_equal(recons[0], boundary_recon)
            frames.extend(recons[1:])
        boundary_code = codes[plan.n]
        boundary_recon = recons[plan.n]
    frames = frames[:header.frame_count]
    return [np.clip(crop_frame(f, header.orig_height, header.orig_width), 0.0, 1.0)
            for f in frames]


@dataclass
class BitStats:
    code_bits: int       # coded payload bits of all frame codes
    motion_bits: int     # motion blob bytes * 8
    closing_i_bits: int  # payload bits of the final boundary I-frame
    container_bits: int  # everything, wrappers and header included


def video_bit_stats(header, gop_blobs, container_bytes=None):
    plan = build_gop_plan(header.gop_n)
    code = motion = closing = 0
    for g, blob in enumerate(gop_blobs):
        c, m, _, cl = gop_bit_stats(blob, plan, first_gop=(g == 0))
        code += c
        motion += m
        closing = cl
    total = container_bytes * 8 if container_bytes is not None else 0
    return BitStats(code, motion, closing, total)


@dataclass
class MetricsRecord:
    mean_psnr: float
    mean_ms_ssim: float
    bpp_with_motion: float
    bpp_payload: float       # code bits only, closing boundary I amortized out
    frame_count: int

    def summary(self):
        return ("frames\t{0}\npsnr_db\t{1:.4f}\nms_ssim\t{2:.6f}\n"
                "bpp_payload\t{3:.6f}\nbpp_with_motion\t{4:.6f}\n").format(
            self.frame_count, self.mean_psnr, self.mean_ms_ssim,
            self.bpp_payload, self.bpp_with_motion)


def payload_bpp(stats, header):
    """Code bits per pixel with the closing boundary I-frame amortized out.

    The closing boundary of the final GOP opens the next GOP in a longer
    sequence, so steady-state accounting charges one I-frame per GOP.
    """
    coded_frames = len_coded_frames(header)
    pixels = coded_frames * header.width * header.height
    return (stats.code_bits - stats.closing_i_bits) / pixels


def len_coded_frames(header):
    n_gops = max(1, -(-(header.frame_count - 1) // header.gop_n))
    return n_gops * header.gop_n


def compute_metrics(originals, decoded, header, stats):
    scores_p = [psnr(a, b) for a, b in zip(originals, decoded)]
    scores_s = [ms_ssim(a, b) for a, b in zip(originals, decoded)]
    pixels = len_coded_frames(header) * header.width * header.height
    return MetricsRecord(
        mean_psnr=float(np.mean(scores_p)),
        mean_ms_ssim=float(np.mean(scores_s)),
        bpp_with_motion=(stats.code_bits - stats.closing_i_bits + stats.motion_bits) / pixels,
        bpp_payload=payload_bpp(stats, header),
        frame_count=len(decoded))
