"""Three-level interpolation hierarchy: GOP schedule, recursive encode and
decode over decoded references, analytic bitrate accounting, and the
beam-search bitrate planner."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .context_interp import decode_interp, encode_interp, flip_model
from .motion import SEARCH_RANGE, MotionField, estimate_block_motion
from .progressive import decode_image, encode_image

GOP_SIZE = 12

# bits per pixel contributed by one iteration of each model role
ROLE_BPP_PER_ITER = {"I": 0.125, "M66": 0.0625, "M33": 0.0625, "M12": 0.03125}


@dataclass(frozen=True)
class FrameSlot:
    """One frame's position in the GOP schedule."""

    index: int
    role: str            # I, M66, M33, M12 or M21
    level: int           # 0 for I-frames, 1..3 for interpolated frames
    ref1: int = -1       # earlier reference frame index (-1 for I)
    ref2: int = -1       # later reference frame index


@dataclass
class GopPlan:
    n: int
    slots: list          # FrameSlots in coding order (levels ascending)

    def slot(self, index):
        for s in self.slots:
            if s.index == index:
                return s
        raise KeyError(index)


def build_gop_plan(n=GOP_SIZE):
    """The coding schedule for one GOP of n+1 frames (both boundaries).

    For n=12: level 0 codes frames 0 and 12 as stills; level 1 interpolates
    frame 6 from them; level 2 fills 3 and 9; level 3 fills the rest with
    the short-range model, using the mirrored orientation where the near
    reference lies ahead.
    """
    if n == 1:
        return GopPlan(1, [FrameSlot(0, "I", 0), FrameSlot(1, "I", 0)])
    if n != GOP_SIZE:
        raise ValueError(f"unsupported GOP size {n}; supported sizes are 1 and {GOP_SIZE}")
    slots = [FrameSlot(0, "I", 0), FrameSlot(12, "I", 0),
             FrameSlot(6, "M66", 1, 0, 12),
             FrameSlot(3, "M33", 2, 0, 6), FrameSlot(9, "M33", 2, 6, 12)]
    for t in (1, 4, 7, 10):
        slots.append(FrameSlot(t, "M12", 3, t - 1, t + 2))
    for t in (2, 5, 8, 11):
        slots.append(FrameSlot(t, "M21", 3, t - 2, t + 1))
    slots.sort(key=lambda s: (s.level, s.index))
    return GopPlan(n, slots)


@dataclass(frozen=True)
class RateCombo:
    """Iteration counts per level: (I, M66, M33, M12/M21)."""

    k0: int
    k1: int
    k2: int
    k3: int

    def __post_init__(self):
        for k in self.ks:
            if k < 0:
                raise ValueError("iteration counts must be non-negative")

    @property
    def ks(self):
        return (self.k0, self.k1, self.k2, self.k3)

    def k_for_level(self, level):
        return self.ks[level]


def average_bitrate(combo, motion_bpp=0.0):
    """Analytic payload bits per pixel of the n=12 schedule, I amortized.

    Each 12-frame stretch carries one I-frame (the closing boundary belongs
    to the next GOP), one M66, two M33 and eight M12/M21 frames. motion_bpp
    is the per-interpolated-frame motion overhead; 11 of every 12 frames
    carry motion fields.
    """
    k0, k1, k2, k3 = combo.ks if isinstance(combo, RateCombo) else combo
    payload = (k0 * 0.125 + k1 * 0.0625 + 2 * k2 * 0.0625 + 8 * k3 * 0.03125) / 12.0
    return payload + motion_bpp * 11.0 / 12.0


# -- GOP encode / decode ------------------------------------------------------


@dataclass
class GopRecord:
    """Everything the decoder needs for one GOP, plus encoder-side recons."""

    plan: GopPlan
    combo: RateCombo
    codes: dict          # frame index -> BinaryCode
    motion: dict         # frame index -> (forward MotionField, backward MotionField)
    recon: dict = field(default_factory=dict)  # frame index -> float32 (3, H, W)

    def payload_bits(self):
        return sum(c.n_bits for c in self.codes.values())


def _model_for(models, role):
    key = "M12" if role == "M21" else role
    if key not in models:
        raise ValueError(f"no model loaded for role {key}")
    return models[key]


def _spec_for(codec, role):
    return flip_model(codec.spec) if role == "M21" else codec.spec


def encode_gop(frames, plan, combo, models, search_range=SEARCH_RANGE):
    """Encode one GOP; frames is a list of plan.n + 1 float arrays (3, H, W).

    Interpolated frames reference previously decoded reconstructions, never
    originals, so the decoder sees identical conditioning. Motion is
    estimated from decoded references against the original target and
    transmitted.
    """
    if len(frames) != plan.n + 1:
        raise ValueError(f"expected {plan.n + 1} frames, got {len(frames)}")
    frames = [f.data if isinstance(f, T.Tensor) else np.asarray(f, dtype=np.float32)
              for f in frames]
    codes, motion, recon = {}, {}, {}
    for slot in plan.slots:
        tgt = frames[slot.index]
        if slot.role == "I":
            codec = _model_for(models, "I")
            code = encode_image(codec, T.Tensor(tgt), combo.k_for_level(0))
            recon[slot.index] = decode_image(codec, code).data
        else:
            codec = _model_for(models, slot.role)
            spec = _spec_for(codec, slot.role)
            r1 = recon[slot.ref1]
            r2 = recon[slot.ref2]
            f1 = estimate_block_motion(r1, tgt, search_range=search_range)
            f2 = estimate_block_motion(r2, tgt, search_range=search_range)
            code = encode_interp(codec, T.Tensor(tgt), T.Tensor(r1), T.Tensor(r2),
                                 f1, f2, spec, combo.k_for_level(slot.level))
            motion[slot.index] = (f1, f2)
            recon[slot.index] = decode_interp(codec, code, T.Tensor(r1), T.Tensor(r2),
                                              f1, f2, spec).data
        codes[slot.index] = code
    return GopRecord(plan, combo, codes, motion, recon)


def decode_gop(record, models):
    """Reconstruct all frames of a GOP from codes and motion alone."""
    recon = {}
    for slot in record.plan.slots:
        code = record.codes[slot.index]
        if slot.role == "I":
            codec = _model_for(models, "I")
            recon[slot.index] = decode_image(codec, code).data
        else:
            codec = _model_for(models, slot.role)
            spec = _spec_for(codec, slot.role)
            f1, f2 = record.motion[slot.index]
            recon[slot.index] = decode_interp(
                codec, code, T.Tensor(recon[slot.ref1]), T.Tensor(recon[slot.ref2]),
                f1, f2, spec).data
    return [recon[i] for i in range(record.plan.n + 1)]


# -- bitrate planner ----------------------------------------------------------


@dataclass(frozen=True)
class EnvelopePoint:
    combo: tuple
    bpp: float
    quality: float


def pareto_envelope(points):
    """Non-dominated subset under (lower BPP, higher quality), BPP ascending.

    A point is dominated when another has bpp <= and quality >= with at
    least one strict; coincident points are all kept.
    """
    ordered = sorted(points, key=lambda p: (p.bpp, -p.quality))
    kept = []
    best_q = -np.inf
    for p in ordered:
        if p.quality > best_q:
            kept.append(p)
            best_q = p.quality
        elif p.quality == best_q and kept and kept[-1].bpp == p.bpp \
                and kept[-1].quality == p.quality:
            kept.append(p)  # exact duplicate: mutually non-dominated
    return kept


def beam_search_rates(evaluator, m, n_levels=4, k_options=None):
    """Plan rate combos level by level, pruning to the Pareto envelope.

    evaluator(prefix) maps a partial combo (K values for the levels chosen
    so far) to (bpp, quality). Expanding only envelope survivors cuts the
    m**n_levels grid down to a few times m evaluations per level. Returns
    (envelope of full combos, number of evaluator calls).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    options = tuple(k_options) if k_options is not None else tuple(range(1, m + 1))
    if len(options) != m:
        raise ValueError(f"expected {m} iteration options, got {len(options)}")
    beams = [()]
    n_evals = 0
    envelope = []
    for _ in range(n_levels):
        candidates = [prefix + (k,) for prefix in beams for k in options]
        evaluated = []
        for combo in candidates:
            bpp, quality = evaluator(combo)
            n_evals += 1
            evaluated.append(EnvelopePoint(combo, bpp, quality))
        envelope = pareto_envelope(evaluated)
        beams = [p.combo for p in envelope]
    return envelope, n_evals
