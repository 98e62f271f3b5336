"""Command-line surface: train, encode, decode, eval, sweep, plan."""

from __future__ import annotations

import argparse
import os
import struct
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import bitstream, models as zoo
from .entropy import train_context_model
from .hierarchy import RateCombo, beam_search_rates
from .progressive import encode_image
from .training import TrainConfig, train_image_codec, train_interp_model
from .video import (compute_metrics, decode_video, encode_video, payload_bpp,
                    video_bit_stats)

SWEEP_COMBOS = [(5, 3, 2, 1), (7, 3, 2, 2), (10, 4, 2, 2),
                (10, 10, 2, 2), (10, 10, 6, 2), (10, 10, 10, 2)]


def _parse_combo(text):
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError(f"--combo wants K0,K1,K2,K3, got {text!r}")
    return RateCombo(*(int(p) for p in parts))


def _load_corpus_frames(path):
    frames = bitstream.load_frames(path)
    return [np.asarray(f, dtype=np.float32) for f in frames]


def _clips_from_frames(frames, clip_len=13):
    """Split a frame sequence into non-overlapping training clips."""
    clips = [np.stack(frames[i:i + clip_len])
             for i in range(0, len(frames) - clip_len + 1, clip_len)]
    if not clips:
        raise ValueError(f"need at least {clip_len} frames for training clips")
    return clips


def _write_report(path, text):
    if path:
        with open(path, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_train(args):
    ckpt = args.checkpoint_dir
    frames = _load_corpus_frames(args.input)
    clips = _clips_from_frames(frames)
    split = max(1, len(clips) // 10)
    train_clips, val_clips = clips[split:] or clips, clips[:split]
    cfg = TrainConfig(steps=args.steps, batch_size=args.batch_size, k=args.k,
                      lr=args.lr, val_every=max(1, args.steps // 10), seed=args.seed)
    if args.role == "context":
        _train_context(args, ckpt, train_clips, cfg)
        return
    if os.path.exists(os.path.join(ckpt, "manifest.json")):
        role_models, arch = zoo.load_models(ckpt)
    else:
        arch = args.arch
        role_models = zoo.build_models(arch, seed=args.seed)
    codec = role_models[args.role]
    if args.role == "I":
        pool = np.concatenate([c for c in train_clips])
        val_pool = np.concatenate([c for c in val_clips])[:8]
        train_image_codec(codec, pool, val_pool, cfg)
    else:
        train_interp_model(codec, train_clips, val_clips[:8], cfg)
    zoo.save_models(role_models, ckpt, arch)
    print(f"trained {args.role}; checkpoints in {ckpt}")


def _train_context(args, ckpt, clips, cfg):
    """Fit per-role context models on codes produced by the trained codecs."""
    role_models, arch = zoo.load_models(ckpt)
    rng = np.random.default_rng(args.seed)
    context = {}
    for role in zoo.ROLES:
        grids = _collect_grids(role, role_models, clips, rng, args.k)
        context[role] = train_context_model(grids, rng, zoo.ARCHS[arch]["context"],
                                            steps=cfg.steps, batch_size=cfg.batch_size,
                                            lr=cfg.lr)
    zoo.save_context_models(context, ckpt)
    print(f"trained context models; checkpoints in {ckpt}")


def _collect_grids(role, role_models, clips, rng, k):
    from . import tensor as T
    from .context_interp import encode_interp
    from .motion import estimate_block_motion
    grids = []
    codec = role_models[role]
    for clip in clips[:32]:
        if role == "I":
            code = encode_image(codec, T.Tensor(clip[0]), k)
        else:
            spec = codec.spec
            t = spec.a
            r1, tgt, r2 = clip[t - spec.a], clip[t], clip[t + spec.b]
            f1 = estimate_block_motion(r1, tgt, search_range=8)
            f2 = estimate_block_motion(r2, tgt, search_range=8)
            code = encode_interp(codec, T.Tensor(tgt), T.Tensor(r1), T.Tensor(r2),
                                 f1, f2, spec, k)
        grids.extend(code.iterations)
    return grids


def _load_codecs(args, entropy):
    role_models, _ = zoo.load_models(args.checkpoint_dir)
    context = zoo.load_context_models(args.checkpoint_dir, required=entropy) \
        if entropy else None
    digest = bitstream.checkpoint_digest(
        zoo.checkpoint_files(args.checkpoint_dir, entropy=entropy))
    return role_models, context, digest


def cmd_encode(args):
    entropy = args.entropy == "on"
    role_models, context, digest = _load_codecs(args, entropy)
    frames = _load_corpus_frames(args.input)
    header, blobs = encode_video(frames, role_models, _parse_combo(args.combo),
                                 gop_n=args.gop, context_models=context,
                                 checkpoint_digest=digest)
    bitstream.write_container(args.output, header, blobs)
    stats = video_bit_stats(header, blobs, os.path.getsize(args.output))
    print(f"wrote {args.output}: {len(frames)} frames, "
          f"payload bpp {payload_bpp(stats, header):.6f}")


def cmd_decode(args):
    header, blobs = bitstream.read_container(args.input)
    role_models, context, digest = _load_codecs(args, header.entropy)
    if digest != header.checkpoint_digest:
        raise ValueError(
            f"checkpoint digest mismatch: container wants {header.checkpoint_digest:#010x}, "
            f"loaded models hash to {digest:#010x}")
    frames = decode_video(header, blobs, role_models, context)
    bitstream.save_frames(frames, args.output)
    print(f"decoded {len(frames)} frames into {args.output}")


def cmd_eval(args):
    originals = _load_corpus_frames(args.input)
    decoded = _load_corpus_frames(args.decoded)
    if len(originals) != len(decoded):
        raise ValueError(f"frame count mismatch: {len(originals)} vs {len(decoded)}")
    if args.container:
        header, blobs = bitstream.read_container(args.container)
        stats = video_bit_stats(header, blobs, os.path.getsize(args.container))
    else:
        from .video import BitStats
        from .bitstream import ContainerHeader
        _, h, w = originals[0].shape
        header = ContainerHeader((w + 15) // 16 * 16, (h + 15) // 16 * 16, w, h,
                                 len(originals), 12, {}, 0, False)
        stats = BitStats(0, 0, 0, 0)
    record = compute_metrics(originals, decoded, header, stats)
    _write_report(args.report, record.summary())


def _sweep_one(args, combo, frames):
    role_models, context, digest = _load_codecs(args, args.entropy == "on")
    header, blobs = encode_video(frames, role_models, RateCombo(*combo),
                                 gop_n=args.gop, context_models=context,
                                 checkpoint_digest=digest)
    decoded = decode_video(header, blobs, role_models, context)
    stats = video_bit_stats(header, blobs)
    rec = compute_metrics(frames, decoded, header, stats)
    return combo, rec


def cmd_sweep(args):
    frames = _load_corpus_frames(args.input)
    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        rows = list(pool.map(lambda c: _sweep_one(args, c, frames), SWEEP_COMBOS))
    lines = ["K0\tK1\tK2\tK3\tbpp_payload\tbpp_with_motion\tpsnr_db\tms_ssim"]
    for combo, rec in rows:
        lines.append("{}\t{}\t{}\t{}\t{:.6f}\t{:.6f}\t{:.4f}\t{:.6f}".format(
            *combo, rec.bpp_payload, rec.bpp_with_motion, rec.mean_psnr,
            rec.mean_ms_ssim))
    _write_report(args.report, "\n".join(lines) + "\n")


def cmd_plan(args):
    frames = _load_corpus_frames(args.input)
    if not frames:
        raise ValueError("empty validation set")
    entropy = args.entropy == "on"
    role_models, context, digest = _load_codecs(args, entropy)

    def evaluator(prefix):
        combo = tuple(prefix) + (1,) * (4 - len(prefix))
        header, blobs = encode_video(frames, role_models, RateCombo(*combo),
                                     gop_n=args.gop, context_models=context,
                                     checkpoint_digest=digest)
        decoded = decode_video(header, blobs, role_models, context)
        stats = video_bit_stats(header, blobs)
        rec = compute_metrics(frames, decoded, header, stats)
        return rec.bpp_payload, rec.mean_ms_ssim

    envelope, n_evals = beam_search_rates(evaluator, args.m)
    lines = ["K0\tK1\tK2\tK3\tbpp\tms_ssim"]
    for p in envelope:
        lines.append("{}\t{}\t{}\t{}\t{:.6f}\t{:.6f}".format(*p.combo, p.bpp, p.quality))
    text = "\n".join(lines) + f"\n# {n_evals} evaluations\n"
    _write_report(args.report, text)
    if args.report:
        with open(args.report + ".bin", "wb") as f:
            for p in envelope:
                f.write(struct.pack("<4Hdd", *p.combo, p.bpp, p.quality))


def build_parser():
    p = argparse.ArgumentParser(prog="hivcodec",
                                description="hierarchical interpolation video codec")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, output=False):
        sp.add_argument("--input", required=True)
        if output:
            sp.add_argument("--output", required=True)
        sp.add_argument("--checkpoint-dir", default="checkpoints")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=1)

    t = sub.add_parser("train", help="fit one model role on a frame corpus")
    common(t)
    t.add_argument("--role", required=True,
                   choices=list(zoo.ROLES) + ["context"])
    t.add_argument("--arch", default="toy", choices=sorted(zoo.ARCHS))
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--k", type=int, default=10)
    t.add_argument("--lr", type=float, default=5e-4)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", help="compress frames into a container")
    common(e, output=True)
    e.add_argument("--gop", type=int, default=12)
    e.add_argument("--combo", default="5,3,2,1")
    e.add_argument("--entropy", choices=["on", "off"], default="off")
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="reconstruct frames from a container")
    common(d, output=True)
    d.set_defaults(func=cmd_decode)

    v = sub.add_parser("eval", help="quality/bitrate report for decoded frames")
    common(v)
    v.add_argument("--decoded", required=True)
    v.add_argument("--container", default=None)
    v.add_argument("--report", default=None)
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="rate-distortion table over the stock combos")
    common(s)
    s.add_argument("--gop", type=int, default=12)
    s.add_argument("--entropy", choices=["on", "off"], default="off")
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_sweep)

    n = sub.add_parser("plan", help="beam-search bitrate planning on validation frames")
    common(n)
    n.add_argument("--gop", type=int, default=12)
    n.add_argument("--entropy", choices=["on", "off"], default="off")
    n.add_argument("-m", type=int, default=3)
    n.add_argument("--report", default=None)
    n.set_defaults(func=cmd_plan)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
