"""Binary file formats for images, measurements, and learned models.

All integers are little-endian.  Every format ends with a CRC32 so a
truncated or corrupted file fails loudly instead of producing a subtly
wrong array.  Error messages carry the byte offset of the problem.
"""

import struct
import zlib

import numpy as np

from .cnn import ConvNetParams
from .core import Image
from .errors import FormatError
from .forward import Measurements
from .learning import (Dictionary, MultiLayerModel, Transform,
                       UnionTransformModel)
from .patches import PatchConfig
from .recon import ReconConfig
from .superlearn import SuperModel

IMAGE_MAGIC = b"BFI1"
MEAS_MAGIC = b"BFM1"
MODEL_MAGIC = b"STM1"

# model kind bytes
KIND_TRANSFORM = 1
KIND_UNION = 2
KIND_MULTILAYER = 3
KIND_DICTIONARY = 4
KIND_CONVNET = 5
KIND_SUPER = 6

_BOUNDARY_CODES = {"wrap": 0, "truncate": 1}
_BOUNDARY_NAMES = {v: k for k, v in _BOUNDARY_CODES.items()}


class _Reader:
    """Sequential parser that reports byte offsets on failure."""

    def __init__(self, buf, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n, what):
        if self.off + n > len(self.buf):
            raise FormatError(
                f"{self.path}: truncated reading {what} at byte {self.off}: "
                f"need {n} bytes, have {len(self.buf) - self.off}")
        chunk = self.buf[self.off:self.off + n]
        self.off += n
        return chunk

    def u8(self, what):
        return self.take(1, what)[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def f64(self, what):
        return struct.unpack("<d", self.take(8, what))[0]

    def f64_array(self, count, what):
        raw = self.take(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def done(self):
        if self.off != len(self.buf):
            raise FormatError(
                f"{self.path}: {len(self.buf) - self.off} trailing bytes "
                f"at byte {self.off}")


def _check_magic(reader, magic):
    got = reader.take(len(magic), "magic")
    if got != magic:
        raise FormatError(
            f"{reader.path}: bad magic at byte 0: "
            f"expected {magic!r}, got {bytes(got)!r}")


def _check_crc(path, body, stored, crc_offset):
    computed = zlib.crc32(body) & 0xFFFFFFFF
    if stored != computed:
        raise FormatError(
            f"{path}: checksum mismatch at byte {crc_offset}: "
            f"stored 0x{stored:08x}, computed 0x{computed:08x}")


# ---------------------------------------------------------------------------
# images

def write_image(path, img: Image):
    """Write an image: magic, u32 rows/cols/frames, f32 payload, CRC32.

    The payload is the flat frame-major data cast to float32; values that
    do not survive the cast finitely are refused.
    """
    with np.errstate(over="ignore"):
        payload = img.data.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise ValueError("image data is not finite in float32; refusing to write")
    header = IMAGE_MAGIC + struct.pack("<III", img.rows, img.cols, img.frames)
    raw = payload.tobytes()
    crc = zlib.crc32(raw) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(raw)
        fh.write(struct.pack("<I", crc))


def read_image(path) -> Image:
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf, str(path))
    _check_magic(r, IMAGE_MAGIC)
    rows = r.u32("rows")
    cols = r.u32("cols")
    frames = r.u32("frames")
    count = rows * cols * frames
    payload_off = r.off
    raw = r.take(4 * count, f"{count} float32 samples")
    crc_off = r.off
    stored = r.u32("checksum")
    r.done()
    _check_crc(r.path, raw, stored, crc_off)
    data = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise FormatError(
            f"{r.path}: non-finite sample in payload starting at byte {payload_off}")
    return Image(rows, cols, frames, data)


# ---------------------------------------------------------------------------
# measurements

def write_measurements(path, meas: Measurements):
    """Write a measurement vector with optional weights.

    Layout: magic, u8 dtype (0 real, 1 complex), u8 has_weights, u16 tag
    length plus UTF-8 tag, u32 sample count, float64 payload (re/im
    interleaved when complex), optional float64 weights, CRC32 of the
    numeric payload.
    """
    y = np.asarray(meas.y).ravel()
    is_complex = np.iscomplexobj(y)
    if is_complex:
        flat = np.empty(2 * y.size, dtype="<f8")
        flat[0::2] = y.real
        flat[1::2] = y.imag
    else:
        flat = y.astype("<f8")
    if not np.all(np.isfinite(flat)):
        raise ValueError("measurements are not finite; refusing to write")
    tag = meas.operator_tag.encode("utf-8")
    if len(tag) > 0xFFFF:
        raise ValueError("operator tag too long")
    parts = [flat.tobytes()]
    has_w = meas.weights is not None
    if has_w:
        w = meas.weights.astype("<f8")
        parts.append(w.tobytes())
    raw = b"".join(parts)
    crc = zlib.crc32(raw) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MEAS_MAGIC)
        fh.write(struct.pack("<BBH", 1 if is_complex else 0, 1 if has_w else 0,
                             len(tag)))
        fh.write(tag)
        fh.write(struct.pack("<I", y.size))
        fh.write(raw)
        fh.write(struct.pack("<I", crc))


def read_measurements(path) -> Measurements:
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf, str(path))
    _check_magic(r, MEAS_MAGIC)
    dtype_code = r.u8("dtype code")
    if dtype_code not in (0, 1):
        raise FormatError(
            f"{r.path}: unknown dtype code {dtype_code} at byte {r.off - 1}")
    has_w = r.u8("weights flag")
    tag_len = struct.unpack("<H", r.take(2, "tag length"))[0]
    tag = r.take(tag_len, "operator tag").decode("utf-8")
    m = r.u32("sample count")
    doubles = 2 * m if dtype_code else m
    raw_start = r.off
    y_raw = r.take(8 * doubles, f"{doubles} float64 samples")
    if has_w:
        w_raw = r.take(8 * m, f"{m} float64 weights")
    crc_off = r.off
    stored = r.u32("checksum")
    r.done()
    _check_crc(r.path, buf[raw_start:crc_off], stored, crc_off)
    flat = np.frombuffer(y_raw, dtype="<f8")
    if dtype_code:
        y = flat[0::2] + 1j * flat[1::2]
    else:
        y = flat.astype(np.float64)
    weights = np.frombuffer(w_raw, dtype="<f8").astype(np.float64) if has_w else None
    return Measurements(y, weights=weights, operator_tag=tag)


# ---------------------------------------------------------------------------
# models

def _pack_matrix(mat):
    return np.ascontiguousarray(mat, dtype="<f8").tobytes()


def _model_body(model):
    if isinstance(model, Transform):
        return KIND_TRANSFORM, struct.pack("<I", model.n) + _pack_matrix(model.omega)
    if isinstance(model, UnionTransformModel):
        body = struct.pack("<IId", len(model.transforms), model.n, model.gamma)
        for t in model.transforms:
            body += _pack_matrix(t.omega)
        return KIND_UNION, body
    if isinstance(model, MultiLayerModel):
        L = len(model.layers)
        n = model.layers[0].n
        body = struct.pack("<II", L, n)
        body += np.asarray(model.gammas, dtype="<f8").tobytes()
        for t in model.layers:
            body += _pack_matrix(t.omega)
        return KIND_MULTILAYER, body
    if isinstance(model, Dictionary):
        m, J = model.atoms.shape
        return KIND_DICTIONARY, struct.pack("<II", m, J) + _pack_matrix(model.atoms)
    if isinstance(model, ConvNetParams):
        vec = model.as_vector()
        body = struct.pack("<II", model.channels, vec.size)
        body += vec.astype("<f8").tobytes()
        return KIND_CONVNET, body
    if isinstance(model, SuperModel):
        _, union_body = _model_body(model.ultra)
        cfg = model.recon
        body = struct.pack("<Id", len(model.layers), model.mu)
        body += struct.pack("<I", len(union_body)) + union_body
        body += struct.pack("<dd", cfg.beta, cfg.gamma)
        body += struct.pack("<IIIB", cfg.patches.patch_rows, cfg.patches.patch_cols,
                            cfg.patches.stride, _BOUNDARY_CODES[cfg.patches.boundary])
        body += struct.pack("<IdIQ", cfg.outer_iters, cfg.cg_tol, cfg.cg_iters,
                            cfg.seed)
        for theta in model.layers:
            _, net_body = _model_body(theta)
            body += struct.pack("<I", len(net_body)) + net_body
        return KIND_SUPER, body
    raise TypeError(f"cannot serialize {type(model).__name__}")


def write_model(path, model):
    """Write any learned model; the kind byte after the magic selects the
    layout on read."""
    kind, body = _model_body(model)
    payload = bytes([kind]) + body
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(payload)
        fh.write(struct.pack("<I", crc))


def _parse_transform(r):
    n = r.u32("transform size")
    omega = r.f64_array(n * n, "transform matrix").reshape(n, n)
    return Transform(omega, unitary=True)


def _parse_union(r):
    K = r.u32("cluster count")
    n = r.u32("transform size")
    gamma = r.f64("gamma")
    mats = [r.f64_array(n * n, f"transform {k}").reshape(n, n) for k in range(K)]
    return UnionTransformModel([Transform(m, unitary=True) for m in mats], gamma)


def _parse_convnet(r):
    channels = r.u32("channel count")
    count = r.u32("parameter count")
    vec = r.f64_array(count, "parameter vector")
    return ConvNetParams.from_vector(channels, vec)


def _parse_body(kind, r):
    if kind == KIND_TRANSFORM:
        return _parse_transform(r)
    if kind == KIND_UNION:
        return _parse_union(r)
    if kind == KIND_MULTILAYER:
        L = r.u32("layer count")
        n = r.u32("transform size")
        gammas = r.f64_array(L, "layer gammas")
        layers = [Transform(r.f64_array(n * n, f"layer {l}").reshape(n, n),
                            unitary=True) for l in range(L)]
        return MultiLayerModel(layers, gammas)
    if kind == KIND_DICTIONARY:
        m = r.u32("atom length")
        J = r.u32("atom count")
        atoms = r.f64_array(m * J, "atom matrix").reshape(m, J)
        return Dictionary(atoms)
    if kind == KIND_CONVNET:
        return _parse_convnet(r)
    if kind == KIND_SUPER:
        L = r.u32("layer count")
        mu = r.f64("coupling weight")
        union_len = r.u32("embedded model length")
        sub = _Reader(r.take(union_len, "embedded union model"), r.path)
        ultra = _parse_union(sub)
        sub.done()
        beta = r.f64("beta")
        gamma = r.f64("gamma")
        p_rows = r.u32("patch rows")
        p_cols = r.u32("patch cols")
        stride = r.u32("patch stride")
        bcode = r.u8("boundary code")
        if bcode not in _BOUNDARY_NAMES:
            raise FormatError(
                f"{r.path}: unknown boundary code {bcode} at byte {r.off - 1}")
        outer_iters = r.u32("outer iterations")
        cg_tol = r.f64("cg tolerance")
        cg_iters = r.u32("cg iterations")
        seed = struct.unpack("<Q", r.take(8, "seed"))[0]
        cfg = ReconConfig(beta=beta, gamma=gamma,
                          patches=PatchConfig(p_rows, p_cols, stride=stride,
                                              boundary=_BOUNDARY_NAMES[bcode]),
                          outer_iters=outer_iters, cg_tol=cg_tol,
                          cg_iters=cg_iters, seed=seed)
        layers = []
        for l in range(L):
            net_len = r.u32(f"layer {l} length")
            sub = _Reader(r.take(net_len, f"layer {l} weights"), r.path)
            layers.append(_parse_convnet(sub))
            sub.done()
        return SuperModel(layers, mu, ultra, cfg)
    raise FormatError(f"unknown model kind {kind}")


def read_model(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf, str(path))
    _check_magic(r, MODEL_MAGIC)
    payload_start = r.off
    kind = r.u8("model kind")
    if kind not in (KIND_TRANSFORM, KIND_UNION, KIND_MULTILAYER,
                    KIND_DICTIONARY, KIND_CONVNET, KIND_SUPER):
        raise FormatError(
            f"{r.path}: unknown model kind {kind} at byte {payload_start}")
    body = _Reader(buf[payload_start + 1:-4], str(path))
    model = _parse_body(kind, body)
    body.done()
    crc_off = len(buf) - 4
    if crc_off < payload_start:
        raise FormatError(f"{r.path}: truncated before checksum")
    stored = struct.unpack_from("<I", buf, crc_off)[0]
    _check_crc(r.path, buf[payload_start:crc_off], stored, crc_off)
    return model


# ---------------------------------------------------------------------------
# display export

def write_pgm(path, img: Image, frame=0, window=None):
    """Export one frame as binary 8-bit PGM, windowed to [lo, hi].

    Display-only and lossy; there is no reader on purpose.  ``window``
    defaults to the frame's own min/max.
    """
    arr = img.frame(frame)
    lo, hi = window if window is not None else (float(arr.min()), float(arr.max()))
    if hi <= lo:
        scaled = np.zeros(arr.shape, dtype=np.uint8)
    else:
        scaled = np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
        scaled = np.round(255.0 * scaled).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.cols} {img.rows}\n255\n".encode("ascii"))
        fh.write(scaled.tobytes())


__all__ = [
    "read_image", "write_image", "read_measurements", "write_measurements",
    "read_model", "write_model", "write_pgm",
]
