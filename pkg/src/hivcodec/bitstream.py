"""Container format, GOP record serialization, and raw frame file I/O.

The byte-level layout is documented in FORMAT.md at the repository root.
All multi-byte integers are little-endian; every variable-length blob is
u32 length-prefixed and carries its own CRC32.
"""

from __future__ import annotations

import os
import re
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .binarizer import pack_code
from .entropy import FLAG_RAW, _unwrap_blob, _wrap_blob, compress_code, decompress_code
from .motion import compress_motion, decompress_motion

MAGIC = b"HIVC"
VERSION = 1
FLAG_ENTROPY = 0x01

ROLE_ORDER = ("I", "M66", "M33", "M12")


@dataclass
class ContainerHeader:
    width: int               # padded frame size (multiple of 16)
    height: int
    orig_width: int          # size before padding
    orig_height: int
    frame_count: int
    gop_n: int
    role_table: dict         # role -> (bottleneck bits L, iterations K)
    checkpoint_digest: int   # CRC32 of the model checkpoints
    entropy: bool
    version: int = VERSION

    def __post_init__(self):
        if self.width % 16 or self.height % 16:
            raise ValueError("stored frame size must be a multiple of 16")
        for role in self.role_table:
            if role not in ROLE_ORDER:
                raise ValueError(f"unknown model role {role!r}")

    def combo(self):
        return tuple(self.role_table[r][1] for r in ROLE_ORDER if r in self.role_table)


def _pack_header(h):
    body = struct.pack("<HHHHHIB", h.version, h.width, h.height,
                       h.orig_width, h.orig_height, h.frame_count, h.gop_n)
    body += struct.pack("<B", FLAG_ENTROPY if h.entropy else 0)
    roles = [r for r in ROLE_ORDER if r in h.role_table]
    body += struct.pack("<B", len(roles))
    for role in roles:
        name = role.encode("ascii")
        l, k = h.role_table[role]
        body += struct.pack("<B", len(name)) + name + struct.pack("<HH", l, k)
    body += struct.pack("<I", h.checkpoint_digest & 0xFFFFFFFF)
    return MAGIC + struct.pack("<I", len(body)) + body + struct.pack("<I", zlib.crc32(body))


def _unpack_header(f):
    magic = f.read(4)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}; not a codec container")
    raw = f.read(4)
    if len(raw) < 4:
        raise ValueError("container truncated in header")
    (blen,) = struct.unpack("<I", raw)
    body = f.read(blen)
    tail = f.read(4)
    if len(body) < blen or len(tail) < 4:
        raise ValueError("container truncated in header")
    (crc,) = struct.unpack("<I", tail)
    if zlib.crc32(body) != crc:
        raise ValueError("header CRC mismatch")
    version, width, height, ow, oh, fc, gop_n = struct.unpack_from("<HHHHHIB", body, 0)
    if version != VERSION:
        raise ValueError(f"unsupported container version {version} (expected {VERSION})")
    off = 15
    (flags,) = struct.unpack_from("<B", body, off); off += 1
    (n_roles,) = struct.unpack_from("<B", body, off); off += 1
    table = {}
    for _ in range(n_roles):
        (nlen,) = struct.unpack_from("<B", body, off); off += 1
        name = body[off:off + nlen].decode("ascii"); off += nlen
        l, k = struct.unpack_from("<HH", body, off); off += 4
        table[name] = (l, k)
    (digest,) = struct.unpack_from("<I", body, off)
    return ContainerHeader(width, height, ow, oh, fc, gop_n, table, digest,
                           bool(flags & FLAG_ENTROPY), version)


# -- GOP record serialization -------------------------------------------------


def pack_code_blob(code, context_model=None):
    """Entropy-code a BinaryCode, or store it raw when no model is given."""
    if context_model is None:
        return _wrap_blob(FLAG_RAW, pack_code(code), code.n_bits)
    return compress_code(code, context_model)


def unpack_code_blob(blob, k, grid_shape, context_model=None):
    flags, _, _ = _unwrap_blob(blob)
    if not flags & FLAG_RAW and context_model is None:
        raise ValueError("entropy-coded payload but no context model loaded")
    return decompress_code(blob, context_model, k, grid_shape)


def code_payload_bits(blob):
    """Coded bit length of one code blob (excludes wrapper bytes)."""
    _, bitlen, _ = _unwrap_blob(blob)
    return bitlen


def serialize_gop(record, context_models=None, first_gop=True):
    """Flatten one GopRecord into blobs in coding order.

    context_models maps role -> trained ContextModel; None disables entropy
    coding. Continuation GOPs (first_gop=False) omit the opening boundary
    I-frame, which is the previous GOP's closing frame. Returns the GOP
    blob bytes.
    """
    context_models = context_models or {}
    out = bytearray()
    for slot in record.plan.slots:
        if slot.index == 0 and not first_gop:
            continue
        role = "M12" if slot.role == "M21" else slot.role
        if slot.role != "I":
            mblob = compress_motion(*record.motion[slot.index])
            out += struct.pack("<I", len(mblob)) + mblob
        cblob = pack_code_blob(record.codes[slot.index], context_models.get(role))
        out += struct.pack("<I", len(cblob)) + cblob
    return bytes(out)


def deserialize_gop(data, plan, header, context_models=None, first_gop=True,
                    boundary_code=None):
    """Inverse of serialize_gop; returns (codes dict, motion dict).

    Continuation GOPs take their opening I-frame code from boundary_code
    (the previous GOP's closing code) instead of the byte stream.
    """
    context_models = context_models or {}
    gh, gw = header.height // 16, header.width // 16
    codes, motion = {}, {}
    off = 0

    def take_blob():
        nonlocal off
        if off + 4 > len(data):
            raise ValueError("GOP record truncated")
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        blob = data[off:off + n]
        if len(blob) < n:
            raise ValueError("GOP record truncated")
        off += n
        return blob

    for slot in plan.slots:
        if slot.index == 0 and not first_gop:
            if boundary_code is None:
                raise ValueError("continuation GOP requires the previous boundary code")
            codes[0] = boundary_code
            continue
        role = "M12" if slot.role == "M21" else slot.role
        l, k = header.role_table[role]
        if slot.role != "I":
            motion[slot.index] = decompress_motion(take_blob())
        codes[slot.index] = unpack_code_blob(take_blob(), k, (l, gh, gw),
                                             context_models.get(role))
    if off != len(data):
        raise ValueError("trailing bytes in GOP record")
    return codes, motion


def gop_bit_stats(data, plan, first_gop):
    """Structural bit accounting for one serialized GOP (no models needed).

    Returns (code_bits, motion_bits, opening_i_bits, closing_i_bits) where
    the I-frame figures refer to coded payload bits of the boundary frames.
    """
    off = 0

    def take_blob():
        nonlocal off
        if off + 4 > len(data):
            raise ValueError("GOP record truncated")
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        blob = data[off:off + n]
        if len(blob) < n:
            raise ValueError("GOP record truncated")
        off += n
        return blob

    code_bits = motion_bits = opening = closing = 0
    for slot in plan.slots:
        if slot.index == 0 and not first_gop:
            continue
        if slot.role != "I":
            motion_bits += len(take_blob()) * 8
        bits = code_payload_bits(take_blob())
        code_bits += bits
        if slot.index == 0:
            opening = bits
        elif slot.index == plan.n:
            closing = bits
    return code_bits, motion_bits, opening, closing


def write_container(path, header, gop_blobs):
    with open(path, "wb") as f:
        f.write(_pack_header(header))
        f.write(struct.pack("<I", len(gop_blobs)))
        for blob in gop_blobs:
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)


def read_container(path):
    with open(path, "rb") as f:
        header = _unpack_header(f)
        raw = f.read(4)
        if len(raw) < 4:
            raise ValueError("container truncated before GOP index")
        (n_gops,) = struct.unpack("<I", raw)
        blobs = []
        for _ in range(n_gops):
            raw = f.read(4)
            if len(raw) < 4:
                raise ValueError("container truncated in GOP index")
            (blen,) = struct.unpack("<I", raw)
            blob = f.read(blen)
            if len(blob) < blen:
                raise ValueError("container truncated in GOP payload")
            blobs.append(blob)
        if f.read(1):
            raise ValueError("trailing bytes after last GOP")
    return header, blobs


def checkpoint_digest(paths):
    """CRC32 over the concatenated checkpoint files, sorted by basename."""
    crc = 0
    for p in sorted(paths, key=os.path.basename):
        with open(p, "rb") as f:
            crc = zlib.crc32(f.read(), crc)
    return crc


# -- frame padding ------------------------------------------------------------


def pad_frame(frame):
    """Edge-replicate a (3, H, W) frame up to multiples of 16."""
    c, h, w = frame.shape
    ph, pw = (-h) % 16, (-w) % 16
    if ph or pw:
        frame = np.pad(frame, ((0, 0), (0, ph), (0, pw)), mode="edge")
    return frame


def crop_frame(frame, orig_h, orig_w):
    return frame[:, :orig_h, :orig_w]


# -- raw frame I/O ------------------------------------------------------------


def _from_u8(plane):
    return plane.astype(np.float32) / 255.0


def _to_u8(frame):
    # round half away from zero so 1.0 maps to exactly 255
    return np.clip(np.floor(frame * 255.0 + 0.5), 0, 255).astype(np.uint8)


def _read_ppm(path):
    with open(path, "rb") as f:
        data = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        m = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)").match(data, pos)
        if not m:
            raise ValueError(f"{path}: malformed PPM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary P6 PPM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval} (need 255)")
    pos += 1  # single whitespace after maxval
    raster = data[pos:pos + 3 * w * h]
    if len(raster) < 3 * w * h:
        raise ValueError(f"{path}: PPM raster truncated")
    rgb = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)
    return _from_u8(rgb.transpose(2, 0, 1))


def _write_ppm(path, frame):
    u8 = _to_u8(frame).transpose(1, 2, 0)
    h, w, _ = u8.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(u8.tobytes())


def _read_y4m(path):
    with open(path, "rb") as f:
        data = f.read()
    nl = data.index(b"\n")
    header = data[:nl].decode("ascii", "replace")
    if not header.startswith("YUV4MPEG2"):
        raise ValueError(f"{path}: not a Y4M file")
    params = dict((p[0], p[1:]) for p in header.split()[1:])
    w, h = int(params["W"]), int(params["H"])
    chroma = params.get("C", "420jpeg")
    if not chroma.startswith("444"):
        raise ValueError(
            f"{path}: chroma subsampling {chroma} unsupported; convert to 4:4:4 "
            "first (e.g. ffmpeg -pix_fmt yuv444p)")
    frames = []
    pos = nl + 1
    fsize = 3 * w * h
    while pos < len(data):
        fnl = data.index(b"\n", pos)
        if not data[pos:fnl].startswith(b"FRAME"):
            raise ValueError(f"{path}: missing FRAME marker")
        pos = fnl + 1
        raster = data[pos:pos + fsize]
        if len(raster) < fsize:
            raise ValueError(f"{path}: Y4M frame truncated")
        planes = np.frombuffer(raster, dtype=np.uint8).reshape(3, h, w)
        frames.append(_from_u8(planes))
        pos += fsize
    return frames


def load_frames(path):
    """Frames as float32 (3, H, W) in [0, 1] from a PPM directory or Y4M file.

    Y4M 4:4:4 planes are passed through as the three channels without
    colorspace conversion.
    """
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path) if n.lower().endswith(".ppm"))
        if not names:
            raise ValueError(f"{path}: no .ppm files found")
        frames = [_read_ppm(os.path.join(path, n)) for n in names]
    elif path.lower().endswith(".y4m"):
        frames = _read_y4m(path)
    else:
        raise ValueError(f"{path}: expected a directory of PPMs or a .y4m file")
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ValueError(f"{path}: mixed frame dimensions {sorted(shapes)}")
    return frames


def save_frames(frames, path):
    """Write frames as zero-padded .ppm files into a directory."""
    os.makedirs(path, exist_ok=True)
    for i, frame in enumerate(frames):
        _write_ppm(os.path.join(path, f"frame_{i:05d}.ppm"), frame)
