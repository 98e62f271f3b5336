"""Train the desk-scale model family on the synthetic moving-pattern corpus.

Produces a complete checkpoint directory (all four roles, per-role context
models, and a no-motion ablation variant of the short-range interpolation
model) that the directional evaluation in the test suite consumes.

Usage: python3 scripts/train_toy.py --out tests/data/toy_ckpt
"""

import argparse
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from hivcodec import models as zoo
from hivcodec import tensor as T
from hivcodec.context_interp import InterpCodec, encode_interp
from hivcodec.entropy import train_context_model
from hivcodec.motion import estimate_block_motion
from hivcodec.nn import save_checkpoint
from hivcodec.progressive import encode_image
from hivcodec.synthetic import make_corpus
from hivcodec.training import (TrainConfig, train_image_codec, train_interp_model,
                               validate_image_codec, validate_interp_model)


def log(msg):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def collect_grids(role, codec, clips, k, n_samples, rng):
    grids = []
    for i in range(n_samples):
        clip = clips[rng.integers(0, len(clips))]
        if role == "I":
            code = encode_image(codec, T.Tensor(clip[rng.integers(0, len(clip))]), k)
        else:
            spec = codec.spec
            t = int(rng.integers(spec.a, len(clip) - spec.b))
            r1, tgt, r2 = clip[t - spec.a], clip[t], clip[t + spec.b]
            f1 = estimate_block_motion(r1, tgt, search_range=8)
            f2 = estimate_block_motion(r2, tgt, search_range=8)
            code = encode_interp(codec, T.Tensor(tgt), T.Tensor(r1), T.Tensor(r2),
                                 f1, f2, spec, k)
        grids.extend(code.iterations)
    return grids


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="tests/data/toy_ckpt")
    ap.add_argument("--clips", type=int, default=520)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--steps-image", type=int, default=2000)
    ap.add_argument("--steps-interp", type=int, default=900)
    ap.add_argument("--steps-context", type=int, default=600)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    log(f"generating {args.clips} synthetic clips")
    corpus = make_corpus(rng, args.clips, n_frames=13, size=64, max_speed=2)
    val_clips, train_clips = corpus[:20], corpus[20:]

    models = zoo.build_models("toy", seed=args.seed)

    frame_pool = np.stack([clip[t] for clip in train_clips[:400] for t in (0, 6, 12)])
    val_pool = np.stack([clip[0] for clip in val_clips[:8]])
    log(f"training I on {len(frame_pool)} frames")
    cfg = TrainConfig(steps=args.steps_image, batch_size=4, k=args.k, lr=5e-4,
                      val_every=250, seed=args.seed)
    train_image_codec(models["I"], frame_pool, val_pool, cfg)
    log(f"I val ms-ssim @K={args.k}: {validate_image_codec(models['I'], val_pool, args.k):.4f}")

    icfg = TrainConfig(steps=args.steps_interp, batch_size=4, k=args.k, lr=5e-4,
                       val_every=150, seed=args.seed)
    for role in ("M12", "M33", "M66"):
        log(f"training {role}")
        train_interp_model(models[role], train_clips, val_clips[:8], icfg)
        score = validate_interp_model(models[role], val_clips[:8], args.k)
        log(f"{role} val ms-ssim @K={args.k}: {score:.4f}")

    zoo.save_models(models, args.out, "toy")

    log("training no-motion ablation of the short-range model")
    nomo = InterpCodec(np.random.default_rng(args.seed), models["M12"].spec,
                       enc_widths=zoo.ARCHS["toy"]["enc_widths"],
                       dec_widths=zoo.ARCHS["toy"]["dec_widths"],
                       ctx_config=models["M12"].context_net.config)
    train_interp_model(nomo, train_clips, val_clips[:8], icfg, use_motion=False)
    score = validate_interp_model(nomo, val_clips[:8], args.k, use_motion=False)
    log(f"M12 (no motion) val ms-ssim @K={args.k}: {score:.4f}")
    save_checkpoint(os.path.join(args.out, "M12_nomotion.ckpt"), nomo.state())

    context = {}
    grid_rng = np.random.default_rng(args.seed + 1)
    for role in zoo.ROLES:
        log(f"training context model for {role}")
        grids = collect_grids(role, models[role], train_clips, 1, 160, grid_rng)
        context[role] = train_context_model(
            grids, grid_rng, zoo.ARCHS["toy"]["context"],
            steps=args.steps_context, batch_size=8, lr=1e-3)
    zoo.save_context_models(context, args.out)
    log(f"done; checkpoints in {args.out}")


if __name__ == "__main__":
    main()
