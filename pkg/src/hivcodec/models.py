"""Named model architectures and checkpoint directory layout.

A checkpoint directory holds one file per model role (I.ckpt, M66.ckpt,
M33.ckpt, M12.ckpt), optional per-role context models for entropy coding
(context_<role>.ckpt), and a manifest.json naming the architecture.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .context_interp import SPEC_M12, SPEC_M33, SPEC_M66, ContextNetConfig, InterpCodec
from .entropy import ContextModel, ContextModelConfig
from .nn import load_checkpoint, save_checkpoint
from .progressive import CodecConfig, ImageCodec

ROLES = ("I", "M66", "M33", "M12")

ARCHS = {
    "toy": dict(
        enc_widths=(8, 16, 16, 16), dec_widths=(16, 16, 16, 8),
        ctx_widths=(4, 8, 8, 8, 8),
        context=ContextModelConfig(n_layers=3, channels=16)),
    "full": dict(
        enc_widths=(64, 128, 128, 128), dec_widths=(128, 128, 128, 64),
        ctx_widths=(32, 64, 128, 256, 512),
        context=ContextModelConfig(n_layers=11, channels=128)),
}


def build_models(arch="toy", seed=0):
    """Freshly initialized codecs for all four roles."""
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}; choose from {sorted(ARCHS)}")
    a = ARCHS[arch]
    rng = np.random.default_rng(seed)
    ctx = ContextNetConfig(widths=a["ctx_widths"])
    img_cfg = CodecConfig(bottleneck_bits=32, enc_widths=a["enc_widths"],
                          dec_widths=a["dec_widths"])
    kw = dict(enc_widths=a["enc_widths"], dec_widths=a["dec_widths"], ctx_config=ctx)
    return {"I": ImageCodec(rng, img_cfg),
            "M66": InterpCodec(rng, SPEC_M66, **kw),
            "M33": InterpCodec(rng, SPEC_M33, **kw),
            "M12": InterpCodec(rng, SPEC_M12, **kw)}


def build_context_model(arch="toy", seed=0):
    return ContextModel(np.random.default_rng(seed), ARCHS[arch]["context"])


def role_checkpoint_path(ckpt_dir, role):
    return os.path.join(ckpt_dir, f"{role}.ckpt")


def context_checkpoint_path(ckpt_dir, role):
    return os.path.join(ckpt_dir, f"context_{role}.ckpt")


def save_models(models, ckpt_dir, arch):
    os.makedirs(ckpt_dir, exist_ok=True)
    with open(os.path.join(ckpt_dir, "manifest.json"), "w") as f:
        json.dump({"arch": arch}, f)
    for role, codec in models.items():
        save_checkpoint(role_checkpoint_path(ckpt_dir, role), codec.state())


def save_context_models(context_models, ckpt_dir):
    for role, model in context_models.items():
        save_checkpoint(context_checkpoint_path(ckpt_dir, role), model.state())


def read_manifest(ckpt_dir):
    path = os.path.join(ckpt_dir, "manifest.json")
    if not os.path.exists(path):
        raise ValueError(f"{ckpt_dir}: missing manifest.json")
    with open(path) as f:
        return json.load(f)


def load_models(ckpt_dir):
    """Rebuild all role codecs from a checkpoint directory."""
    arch = read_manifest(ckpt_dir)["arch"]
    models = build_models(arch)
    for role, codec in models.items():
        path = role_checkpoint_path(ckpt_dir, role)
        if not os.path.exists(path):
            raise ValueError(f"{ckpt_dir}: missing checkpoint for role {role}")
        codec.load_state(load_checkpoint(path))
    return models, arch


def load_context_models(ckpt_dir, required=False):
    """Per-role context models if present; {} (or an error) otherwise."""
    arch = read_manifest(ckpt_dir)["arch"]
    out = {}
    for role in ROLES:
        path = context_checkpoint_path(ckpt_dir, role)
        if os.path.exists(path):
            model = build_context_model(arch)
            model.load_state(load_checkpoint(path))
            out[role] = model
        elif required:
            raise ValueError(f"{ckpt_dir}: missing context model for role {role}")
    return out


def checkpoint_files(ckpt_dir, entropy=False):
    """The checkpoint files covered by the container's model digest."""
    files = [role_checkpoint_path(ckpt_dir, r) for r in ROLES]
    if entropy:
        files += [context_checkpoint_path(ckpt_dir, r) for r in ROLES
                  if os.path.exists(context_checkpoint_path(ckpt_dir, r))]
    return files
