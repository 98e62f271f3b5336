"""Regenerate the golden sample stream under tests/data/golden/.

Encodes one deterministic synthetic clip with the checked-in desk-scale
checkpoints (entropy coding on) and records the container bytes plus CRC32
digests of every decoded frame. tests/test_golden.py replays both
directions against these artifacts.

Usage: python3 scripts/make_golden.py
"""

import json
import os
import sys
import zlib

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from hivcodec import models as zoo
from hivcodec.bitstream import checkpoint_digest, write_container
from hivcodec.synthetic import make_corpus
from hivcodec.video import decode_video, encode_video

HERE = os.path.dirname(os.path.abspath(__file__))
CKPT = os.path.join(HERE, "..", "tests", "data", "toy_ckpt")
OUT = os.path.join(HERE, "..", "tests", "data", "golden")

CLIP_SEED = 123
COMBO = (2, 1, 1, 1)


def main():
    models, _ = zoo.load_models(CKPT)
    context = zoo.load_context_models(CKPT, required=True)
    digest = checkpoint_digest(zoo.checkpoint_files(CKPT, entropy=True))
    clip = make_corpus(np.random.default_rng(CLIP_SEED), 1, n_frames=13, size=64)[0]

    header, blobs = encode_video(list(clip), models, COMBO, context_models=context,
                                 checkpoint_digest=digest, search_range=8)
    os.makedirs(OUT, exist_ok=True)
    path = os.path.join(OUT, "golden.hivc")
    write_container(path, header, blobs)

    decoded = decode_video(header, blobs, models, context_models=context)
    meta = {
        "clip_seed": CLIP_SEED,
        "combo": list(COMBO),
        "checkpoint_digest": digest,
        "container_crc32": zlib.crc32(open(path, "rb").read()),
        "frame_crc32": [zlib.crc32(np.ascontiguousarray(f, dtype=np.float32).tobytes())
                        for f in decoded],
    }
    with open(os.path.join(OUT, "golden.json"), "w") as f:
        json.dump(meta, f, indent=1)
    print(f"wrote {path} ({os.path.getsize(path)} bytes), digest {digest}")


if __name__ == "__main__":
    main()
