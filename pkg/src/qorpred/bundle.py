"""Binary model bundle format.

Layout (all integers little-endian)::

    b"QORF"                 magic
    u32 version             currently 1
    32 bytes                SHA-256 of the canonical model-config text
    u32 n, n bytes          canonical model-config text (UTF-8)
    f64 label_mean, f64 label_std, i64 seed
    u32 count               number of arrays, then per array:
        u16 n, n bytes      name (UTF-8)
        u8 ndim, ndim x u32 shape
        prod(shape) x f64   row-major payload

Arrays are written in sorted name order, so identical models give
identical bytes.
"""

import hashlib
import io
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import BundleFormatError, FingerprintMismatchError
from .model import JointModel, ModelBundle
from .rng import make_rng

MAGIC = b"QORF"
VERSION = 1


def bundle_bytes(bundle):
    buf = io.BytesIO()
    text = bundle.config.to_text().encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(hashlib.sha256(text).digest())
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    buf.write(struct.pack("<ddq", bundle.label_mean, bundle.label_std, int(bundle.seed)))
    arrays = bundle.model.state_arrays()
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
        buf.write(a.tobytes())
    return buf.getvalue()


def save_bundle(bundle, path):
    Path(path).write_bytes(bundle_bytes(bundle))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise BundleFormatError(f"bundle truncated at byte {self.pos} (needed {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_bundle(data, expected_config=None):
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BundleFormatError("not a model bundle (bad magic bytes)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise BundleFormatError(f"unsupported bundle version {version}")
    fingerprint = r.take(32)
    (n,) = r.unpack("<I")
    text = r.take(n)
    if hashlib.sha256(text).digest() != fingerprint:
        raise BundleFormatError("config text does not match the stored fingerprint")
    try:
        config = ModelConfig.from_text(text.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise BundleFormatError(f"bad config section: {exc}") from None
    if config.fingerprint() != fingerprint:
        raise BundleFormatError("config text is not in canonical form")
    if expected_config is not None and expected_config.fingerprint() != fingerprint:
        raise FingerprintMismatchError("bundle was built for a different model config")
    label_mean, label_std, seed = r.unpack("<ddq")
    if not label_std > 0:
        raise BundleFormatError(f"label std must be positive, got {label_std}")
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode("utf-8", errors="replace")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise BundleFormatError(f"{len(data) - r.pos} trailing bytes after bundle payload")

    model = JointModel(make_rng(0), config)
    expected = model.state_arrays()
    if set(expected) != set(arrays):
        missing = sorted(set(expected) ^ set(arrays))
        raise BundleFormatError(f"bundle arrays do not match the model: {missing[:5]}")
    for name, a in arrays.items():
        if a.shape != expected[name].shape:
            raise BundleFormatError(f"array {name} has shape {a.shape}, expected {expected[name].shape}")
    model.load_state_arrays(arrays)
    model.eval()
    return ModelBundle(config, model, label_mean, label_std, seed)


def load_bundle(path, expected_config=None):
    return parse_bundle(Path(path).read_bytes(), expected_config)
