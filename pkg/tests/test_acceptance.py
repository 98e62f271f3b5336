"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS line on success (run with -s to see them).
Criterion 7 consumes the trained desk-scale checkpoints produced by
scripts/train_toy.py and checked in under tests/data/toy_ckpt.
"""

import itertools
import os

import numpy as np
import pytest

from hivcodec import models as zoo
from hivcodec import tensor as T
from hivcodec.entropy import ac_decode, ac_encode
from hivcodec.hierarchy import (EnvelopePoint, average_bitrate, beam_search_rates,
                                pareto_envelope)
from hivcodec.metrics import ms_ssim
from hivcodec.motion import estimate_block_motion
from hivcodec.progressive import decode_image, encode_image
from hivcodec.synthetic import make_corpus
from hivcodec.video import (decode_video, encode_video, payload_bpp, video_bit_stats)

DATA = os.path.join(os.path.dirname(__file__), "data")
TOY_CKPT = os.path.join(DATA, "toy_ckpt")


def _ok(n, msg):
    print(f"\nACCEPTANCE {n} PASS: {msg}")


def test_acceptance_1_bitrate_table():
    table = [((5, 3, 2, 1), 0.109), ((7, 3, 2, 2), 0.151), ((10, 4, 2, 2), 0.188),
             ((10, 10, 2, 2), 0.219), ((10, 10, 6, 2), 0.260), ((10, 10, 10, 2), 0.302)]
    for combo, expected in table:
        got = average_bitrate(combo)
        assert abs(got - expected) <= 0.0005 + 1e-12, (combo, got)
    _ok(1, "all six published rate combinations reproduced to +/-0.0005")


def test_acceptance_2_container_bpp_exact():
    models = zoo.build_models("toy", seed=0)
    rng = np.random.default_rng(0)
    base = rng.random((3, 288, 352 + 13)).astype(np.float32)
    frames = [np.ascontiguousarray(base[:, :, t:t + 352]) for t in range(13)]
    header, blobs = encode_video(frames, models, (5, 3, 2, 1), search_range=8)
    stats = video_bit_stats(header, blobs)
    bpp = payload_bpp(stats, header)
    assert bpp == 0.109375, bpp
    _ok(2, "13-frame 352x288 GOP at (5,3,2,1) yields payload BPP 0.109375 exactly")


def test_acceptance_3_arithmetic_coder_million_bits():
    rng = np.random.default_rng(42)
    n = 1_000_000
    probs = rng.uniform(2.0 ** -16, 1 - 2.0 ** -16, n)
    bits = (rng.random(n) < probs).astype(int).tolist()
    payload, bitlen = ac_encode(bits, probs)
    bound = float(np.sum(-np.log2(np.where(bits, probs, 1.0 - probs))))
    assert bitlen <= bound + 32
    assert ac_decode(payload, bitlen, n, lambda i, d: probs[i]) == bits
    _ok(3, f"1e6-bit round trip exact; {bitlen} bits <= entropy {bound:.0f} + 32")


def test_acceptance_4_gradient_suite():
    import sys
    sys.path.insert(0, os.path.dirname(__file__))
    from gradcheck import gradcheck
    rng = np.random.default_rng(1)

    x = rng.random((2, 3, 4, 4)) - 0.5
    w = rng.random((4, 3, 3, 3)) - 0.5
    b = rng.random(4) - 0.5
    gradcheck(lambda x, w, b: T.conv2d(x, w, b, stride=1, padding=1).tanh().sum(),
              [x, w, b])
    wt = rng.random((3, 2, 2, 2)) - 0.5
    gradcheck(lambda x, w: (T.conv_transpose2d(x, w, stride=2) * 0.5).abs().sum(),
              [x[:, :, :2, :2], wt])
    # keep test points away from the relu / abs kinks
    gradcheck(lambda a, c: (a.sigmoid() * c.relu() + (a - c).abs()).mean(),
              [rng.random((5, 5)) + 0.5, rng.random((5, 5)) + 2.0])
    gy, gx = np.meshgrid(np.arange(4.0), np.arange(4.0), indexing="ij")
    coords = np.ascontiguousarray(np.stack([gx, gy], axis=-1) + 0.3)
    feat = rng.random((2, 4, 4))
    gradcheck(lambda f: T.bilinear_sample(f, T.Tensor(coords)).sum(), [feat])

    # conv / conv-transpose adjoint identity
    worst = 0.0
    # sizes chosen so the transposed conv restores the input extent exactly
    for n, p, k, h in [(1, 0, 3, 7), (2, 1, 3, 7), (2, 0, 2, 8)]:
        x = T.Tensor(rng.standard_normal((n, 3, h, h)))
        w = T.Tensor(rng.standard_normal((2, 3, k, k)))
        y = T.conv2d(x, w, stride=2, padding=p)
        z = T.Tensor(rng.standard_normal(y.data.shape))
        wt = T.Tensor(w.data.transpose(1, 0, 2, 3).copy())
        lhs = float((y.data * z.data).sum())
        xt = T.conv_transpose2d(z, T.Tensor(w.data), stride=2, padding=p)
        rhs = float((x.data * xt.data).sum())
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1.0))
    assert worst < 1e-5
    _ok(4, f"finite-difference checks pass; adjoint identity off by {worst:.2e}")


def test_acceptance_5_motion_oracle():
    from test_motion import _sad_oracle
    rng = np.random.default_rng(2)
    for _ in range(50):
        ref = rng.random((1, 64, 64)).astype(np.float32)
        tgt = rng.random((1, 64, 64)).astype(np.float32)
        field = estimate_block_motion(ref, tgt, block_size=16, search_range=8)
        np.testing.assert_array_equal(field.vectors, _sad_oracle(ref, tgt, 16, 8))
    ref = rng.random((3, 64, 64)).astype(np.float32)
    tgt = np.roll(np.roll(ref, -2, axis=1), 3, axis=2)
    field = estimate_block_motion(ref, tgt, block_size=16, search_range=8)
    np.testing.assert_array_equal(field.vectors[1:-1, 1:-1, 0], 3)
    np.testing.assert_array_equal(field.vectors[1:-1, 1:-1, 1], -2)
    _ok(5, "50/50 oracle matches; planted (3,-2) shift recovered on interior blocks")


def test_acceptance_6_beam_search_oracle():
    weights = (0.125, 0.0625, 0.125, 0.25)
    gains = (0.30, 0.21, 0.14, 0.09)

    def evaluator(prefix):
        bpp = sum(w * k for w, k in zip(weights, prefix)) / 12.0
        q = sum(g * np.log1p(k) for g, k in zip(gains, prefix))
        return bpp, float(q)

    envelope, n_evals = beam_search_rates(evaluator, m=3)
    brute = pareto_envelope([EnvelopePoint(c, *evaluator(c))
                             for c in itertools.product((1, 2, 3), repeat=4)])
    assert [(p.combo, p.bpp, p.quality) for p in envelope] == \
        [(p.combo, p.bpp, p.quality) for p in brute]
    _ok(6, f"beam (m=3) equals the 81-combo brute-force frontier in {n_evals} evals")


@pytest.fixture(scope="module")
def trained():
    if not os.path.exists(os.path.join(TOY_CKPT, "manifest.json")):
        pytest.fail("trained checkpoints missing; run scripts/train_toy.py "
                    f"--out {TOY_CKPT}")
    models, _ = zoo.load_models(TOY_CKPT)
    context = zoo.load_context_models(TOY_CKPT, required=True)
    rng = np.random.default_rng(0)
    corpus = make_corpus(rng, 520, n_frames=13, size=64, max_speed=2)
    return models, context, corpus[:12]  # held-out validation clips


def test_acceptance_7a_hierarchy_beats_image_only(trained):
    models, _, clips = trained
    combo = (2, 1, 1, 1)
    assert average_bitrate(combo) <= 0.2
    hier, intra = [], []
    for clip in clips:
        header, blobs = encode_video(list(clip), models, combo, search_range=8)
        decoded = decode_video(header, blobs, models)
        hier.extend(ms_ssim(a, b) for a, b in zip(clip, decoded))
        for frame in clip:
            recon = decode_image(models["I"], encode_image(models["I"], T.Tensor(frame), 1))
            intra.append(ms_ssim(frame, np.clip(recon.data, 0, 1)))
    hier_bpp = payload_bpp(video_bit_stats(header, blobs), header)
    assert hier_bpp <= 0.125  # image-only spends 0.125 BPP at K=1
    assert np.mean(hier) > np.mean(intra)
    _ok("7a", f"hierarchy {np.mean(hier):.4f} MS-SSIM at {hier_bpp:.4f} BPP beats "
        f"image-only {np.mean(intra):.4f} at 0.125 BPP")


def test_acceptance_7b_motion_beats_no_motion(trained):
    from hivcodec.context_interp import InterpCodec
    from hivcodec.nn import load_checkpoint
    from hivcodec.training import validate_interp_model
    models, _, clips = trained
    nomo = InterpCodec(np.random.default_rng(0), models["M12"].spec,
                       enc_widths=zoo.ARCHS["toy"]["enc_widths"],
                       dec_widths=zoo.ARCHS["toy"]["dec_widths"],
                       ctx_config=models["M12"].context_net.config)
    nomo.load_state(load_checkpoint(os.path.join(TOY_CKPT, "M12_nomotion.ckpt")))
    k = 2  # same K, therefore identical BPP
    with_motion = validate_interp_model(models["M12"], clips, k, use_motion=True,
                                        search_range=8)
    without = validate_interp_model(nomo, clips, k, use_motion=False)
    assert with_motion > without
    _ok("7b", f"motion-conditioned {with_motion:.4f} MS-SSIM > "
        f"no-motion {without:.4f} at equal BPP")


def test_acceptance_7c_entropy_saves_ten_percent(trained):
    models, context, clips = trained
    combo = (1, 1, 1, 1)  # lowest tested rate
    raw_bits = coded_bits = 0
    for clip in clips[:4]:
        h_raw, b_raw = encode_video(list(clip), models, combo, search_range=8)
        h_ent, b_ent = encode_video(list(clip), models, combo, search_range=8,
                                    context_models=context)
        raw_bits += video_bit_stats(h_raw, b_raw).code_bits
        coded_bits += video_bit_stats(h_ent, b_ent).code_bits
    saving = 1.0 - coded_bits / raw_bits
    assert saving >= 0.10
    _ok("7c", f"entropy coding saves {100 * saving:.1f}% of code bits at {combo}")


def test_acceptance_8_determinism():
    models_a = zoo.build_models("toy", seed=7)
    models_b = zoo.build_models("toy", seed=7)
    rng = np.random.default_rng(7)
    base = rng.random((3, 32, 32 + 13)).astype(np.float32)
    frames = [np.ascontiguousarray(base[:, :, t:t + 32]) for t in range(13)]
    ha, ba = encode_video(frames, models_a, (2, 1, 1, 1), search_range=4)
    hb, bb = encode_video(frames, models_b, (2, 1, 1, 1), search_range=4)
    assert ba == bb and ha == hb
    da = decode_video(ha, ba, models_a)
    db = decode_video(hb, bb, models_b)
    for x, y in zip(da, db):
        np.testing.assert_array_equal(x, y)
    _ok(8, "independent runs produce byte-identical containers and reconstructions")


def test_acceptance_9_ms_ssim_cross_check():
    tf = pytest.importorskip("tensorflow")
    rng = np.random.default_rng(9)
    x = rng.random((3, 176, 176))
    assert ms_ssim(x, x) == 1.0
    worst = 0.0
    for _ in range(20):
        a = rng.random((176, 192, 3))
        b = np.clip(a + rng.normal(0, 0.02 + 0.1 * rng.random(), a.shape), 0, 1)
        ref = float(tf.image.ssim_multiscale(tf.constant(a[None]), tf.constant(b[None]),
                                             max_val=1.0).numpy()[0])
        got = ms_ssim(a.transpose(2, 0, 1), b.transpose(2, 0, 1))
        worst = max(worst, abs(got - ref))
    assert worst < 1e-4
    _ok(9, f"reference MS-SSIM agreement within {worst:.2e}; self-similarity exactly 1")
