import numpy as np
import pytest

from hivcodec import tensor as T
from hivcodec.binarizer import BinaryCode
from hivcodec.context_interp import (SPEC_M12, SPEC_M33, SPEC_M66, ContextNet,
                                     ContextNetConfig, InterpCodec, InterpModelSpec,
                                     decode_interp, encode_interp, extract_context,
                                     flip_model, interp_loss)
from hivcodec.motion import MotionField, estimate_block_motion
from hivcodec.nn import AdamState, adam_step, zero_grads

TOY_CTX = ContextNetConfig(widths=(2, 4, 4, 4, 4))


def _codec(seed=0, spec=SPEC_M12):
    return InterpCodec(np.random.default_rng(seed), spec,
                       enc_widths=(4, 8, 8, 8), dec_widths=(8, 8, 8, 4),
                       ctx_config=TOY_CTX)


def _frame(seed, h=32, w=32):
    rng = np.random.default_rng(seed)
    return T.tensor(rng.random((3, h, w)))


class TestContextNet:
    def test_pyramid_shapes(self):
        net = ContextNet(np.random.default_rng(0), TOY_CTX)
        feats = extract_context(net, _frame(1, 32, 48))
        assert feats.at(8).data.shape == (TOY_CTX.feature_channels(8), 4, 6)
        assert feats.at(4).data.shape == (TOY_CTX.feature_channels(4), 8, 12)
        assert feats.at(2).data.shape == (TOY_CTX.feature_channels(2), 16, 24)
        assert feats.at(1).data.shape == (3, 32, 48)

    def test_bad_size_rejected(self):
        net = ContextNet(np.random.default_rng(0), TOY_CTX)
        with pytest.raises(ValueError, match="multiple of 16"):
            extract_context(net, _frame(2, 24, 32))


class TestSpecs:
    def test_defaults(self):
        assert (SPEC_M66.a, SPEC_M66.b, SPEC_M66.bottleneck_bits) == (6, 6, 16)
        assert (SPEC_M33.a, SPEC_M33.b, SPEC_M33.bottleneck_bits) == (3, 3, 16)
        assert (SPEC_M12.a, SPEC_M12.b, SPEC_M12.bottleneck_bits) == (1, 2, 8)
        assert SPEC_M12.distance == 3

    def test_flip_is_involution(self):
        f = flip_model(SPEC_M12)
        assert (f.a, f.b, f.flipped) == (2, 1, True)
        assert flip_model(f) == SPEC_M12

    def test_bad_offsets_rejected(self):
        with pytest.raises(ValueError, match="offsets"):
            InterpModelSpec(0, 1, 8)


def _setup(seed=0, spec=SPEC_M12, h=32, w=32):
    codec = _codec(seed, spec)
    ref1, tgt, ref2 = _frame(seed + 1, h, w), _frame(seed + 2, h, w), _frame(seed + 3, h, w)
    f1 = estimate_block_motion(ref1.data, tgt.data, search_range=4)
    f2 = estimate_block_motion(ref2.data, tgt.data, search_range=4)
    return codec, tgt, ref1, ref2, f1, f2


class TestEncodeDecode:
    def test_grid_shape_and_determinism(self):
        codec, tgt, r1, r2, f1, f2 = _setup()
        code = encode_interp(codec, tgt, r1, r2, f1, f2, SPEC_M12, K=2)
        assert code.k == 2
        assert code.grid_shape == (8, 2, 2)
        again = encode_interp(codec, tgt, r1, r2, f1, f2, SPEC_M12, K=2)
        assert code == again

    def test_decode_matches_encoder_side_reconstruction(self):
        # the decoder must replay the encoder's decoder pass bit for bit
        codec, tgt, r1, r2, f1, f2 = _setup(seed=4)
        from hivcodec.context_interp import _fusion_inputs
        from hivcodec.progressive import run_iterations
        a, b, enc_ctx, dec_ctx = _fusion_inputs(codec, SPEC_M12, r1, r2, f1, f2)
        stack = T.Tensor(np.concatenate([a.data, tgt.data, b.data])[None])
        codes, outputs, _ = run_iterations(codec.net, stack, 3,
                                           ctx_enc=enc_ctx, ctx_dec=dec_ctx)
        recon_enc = outputs[0]
        for out in outputs[1:]:
            recon_enc = recon_enc + out
        code = BinaryCode([c.data[0].copy() for c in codes])
        recon_dec = decode_interp(codec, code, r1, r2, f1, f2, SPEC_M12)
        np.testing.assert_array_equal(recon_dec.data, recon_enc.data[0])

    def test_flipped_spec_swaps_references(self):
        # coding with the mirrored spec and exchanged inputs must reproduce
        # the canonical orientation exactly (one weight set, two directions)
        codec, tgt, r1, r2, f1, f2 = _setup(seed=5)
        fwd = encode_interp(codec, tgt, r1, r2, f1, f2, SPEC_M12, K=2)
        flipped = encode_interp(codec, tgt, r2, r1, f2, f1, flip_model(SPEC_M12), K=2)
        assert fwd == flipped

    def test_shape_mismatch_rejected(self):
        codec, tgt, r1, r2, f1, f2 = _setup(seed=6)
        bad = _frame(99, 32, 48)
        with pytest.raises(ValueError, match="shapes differ"):
            encode_interp(codec, tgt, bad, r2, f1, f2, SPEC_M12, K=1)

    def test_empty_code_rejected(self):
        codec, tgt, r1, r2, f1, f2 = _setup(seed=7)
        with pytest.raises(ValueError, match="empty"):
            decode_interp(codec, BinaryCode([]), r1, r2, f1, f2, SPEC_M12)

    def test_bottleneck_mismatch_rejected(self):
        codec, tgt, r1, r2, f1, f2 = _setup(seed=8)
        wrong = BinaryCode([np.ones((16, 2, 2), dtype=np.float32)])
        with pytest.raises(ValueError, match="L=16"):
            decode_interp(codec, wrong, r1, r2, f1, f2, SPEC_M12)


class TestLossAndTraining:
    def test_loss_backward_reaches_context_net(self):
        codec, tgt, r1, r2, f1, f2 = _setup(seed=9)
        loss = interp_loss(codec, tgt, r1, r2, f1, f2, SPEC_M12, K=2,
                           rng=np.random.default_rng(0))
        loss.backward()
        params = codec.parameters()
        ctx_params = {n: p for n, p in params.items() if n.startswith("context_net")}
        assert ctx_params
        for name, p in params.items():
            assert p.grad is not None, name
            assert np.isfinite(p.grad).all(), name
        assert any(np.abs(p.grad).sum() > 0 for p in ctx_params.values())

    def test_training_smoke_loss_decreases(self):
        rng = np.random.default_rng(12)
        codec = _codec(12, SPEC_M12)
        base = np.clip(rng.random((3, 16, 16)), 0, 1).astype(np.float32)
        r1 = T.tensor(np.roll(base, 1, axis=2))
        r2 = T.tensor(np.roll(base, -2, axis=2))
        tgt = T.tensor(base)
        zero = MotionField.zero(16, 16)
        params = codec.parameters()
        opt = AdamState(lr=3e-3)
        losses = []
        for step in range(80):
            loss = interp_loss(codec, tgt, r1, r2, zero, zero, SPEC_M12, K=1,
                               rng=np.random.default_rng(step))
            losses.append(float(loss.data))
            zero_grads(params)
            loss.backward()
            adam_step(params, opt)
        assert np.mean(losses[-15:]) < 0.7 * np.mean(losses[:15])
