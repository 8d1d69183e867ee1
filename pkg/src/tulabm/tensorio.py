"""Versioned binary on-disk formats: tensors, checkpoints, flat configs, PGM previews.

All multi-byte fields are little-endian so files are byte-exact across
platforms; writes go through a temp file and an atomic rename.
"""

import hashlib
import os
import struct
import tempfile

import numpy as np

TENSOR_MAGIC = b"TLBM"
CHECKPOINT_MAGIC = b"TLCK"
FORMAT_VERSION = 1

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_TAG_FOR_KIND = {"f": 0, "u": 1}


class FormatError(ValueError):
    """Raised on malformed or corrupt files."""


class DigestMismatchError(FormatError):
    """Raised when a checkpoint's config digest does not match the loading config."""


def atomic_write(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    kind = np.asarray(arr).dtype.kind
    if kind not in _TAG_FOR_KIND:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    tag = _TAG_FOR_KIND[kind]
    a = np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).reshape(np.shape(arr))
    head = TENSOR_MAGIC + struct.pack("<HBB", FORMAT_VERSION, tag, a.ndim)
    dims = struct.pack(f"<{a.ndim}I", *a.shape)
    return head + dims + a.tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one tensor record; returns (array, next offset)."""
    if buf[offset:offset + 4] != TENSOR_MAGIC:
        raise FormatError("bad tensor magic")
    version, tag, rank = struct.unpack_from("<HBB", buf, offset + 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported tensor format version {version}")
    if tag not in _DTYPE_TAGS:
        raise FormatError(f"unknown dtype tag {tag}")
    pos = offset + 8
    dims = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    dtype = _DTYPE_TAGS[tag]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
    payload = buf[pos:pos + nbytes]
    if len(payload) != nbytes:
        raise FormatError("truncated tensor payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.copy(), pos + nbytes


def write_tensor(path: str, arr: np.ndarray) -> None:
    atomic_write(path, tensor_to_bytes(arr))


def read_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    arr, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after tensor payload")
    return arr


def config_digest(config_text: str) -> bytes:
    return hashlib.sha256(config_text.encode()).digest()


def write_checkpoint(path: str, params: dict[str, np.ndarray],
                     digest: bytes, step: int) -> None:
    """Write a checkpoint: magic, version, config digest, step, named tensors, content hash."""
    if len(digest) != 32:
        raise FormatError("config digest must be 32 bytes")
    parts = [CHECKPOINT_MAGIC, struct.pack("<H", FORMAT_VERSION), digest,
             struct.pack("<Q", step)]
    for name, arr in params.items():
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(tensor_to_bytes(arr))
    body = b"".join(parts)
    atomic_write(path, body + hashlib.sha256(body).digest())


def read_checkpoint(path: str, expect_digest: bytes | None = None
                    ) -> tuple[dict[str, np.ndarray], int]:
    """Read a checkpoint; verifies the content hash and, when given, the config digest."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 4 + 2 + 32 + 8 + 32 or buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint header")
    body, content_hash = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != content_hash:
        raise FormatError("checkpoint content hash mismatch")
    (version,) = struct.unpack_from("<H", body, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    digest = body[6:38]
    if expect_digest is not None and digest != expect_digest:
        raise DigestMismatchError("checkpoint config digest does not match loading config")
    (step,) = struct.unpack_from("<Q", body, 38)
    pos = 46
    params: dict[str, np.ndarray] = {}
    while pos < len(body):
        (name_len,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + name_len].decode()
        pos += name_len
        arr, pos = tensor_from_bytes(body, pos)
        if name in params:
            raise FormatError(f"duplicate parameter name {name!r}")
        params[name] = arr
    return params, step


def serialize_config(cfg: dict[str, object]) -> str:
    """Canonical flat `key = value` text, sorted by key."""
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, (list, tuple)):
            val = ",".join(repr(v) if isinstance(v, float) else str(v) for v in val)
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> dict[str, str]:
    """Parse flat `key = value` config text; `#` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def write_pgm(path: str, img: np.ndarray) -> None:
    """8-bit grayscale PGM (P5) preview of a [0, 1] image."""
    a = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    b = np.round(a * 255.0).astype(np.uint8)
    header = f"P5\n{b.shape[1]} {b.shape[0]}\n255\n".encode()
    atomic_write(path, header + b.tobytes())
