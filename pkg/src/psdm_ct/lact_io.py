"""LACT1 binary arrays and PNG export.

Layout (little endian)::

    4s   magic  b"LACT"
    u8   version (1)
    u8   kind    0 image, 1 sinogram, 2 vector field, 3 complex grid
    u16  reserved (0)
    u32  dim0    rows (image height or number of views)
    u32  dim1    columns (image width or detector bins)
    f64  spacing pixel size (mm) or bin spacing
    f32  payload, row major

Vector fields store both components back to back (``2 * dim0 * dim1``
values); complex grids interleave real and imaginary parts.
"""
from __future__ import annotations

import enum
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, TruncatedPayload, UnsupportedVersion

__all__ = ["Kind", "LactFile", "read_lact", "write_lact", "atomic_write_bytes", "write_png",
           "encode_lact"]

MAGIC = b"LACT"
VERSION = 1
_HEADER = struct.Struct("<4sBBHIId")


class Kind(enum.IntEnum):
    IMAGE = 0
    SINOGRAM = 1
    VECTOR_FIELD = 2
    COMPLEX = 3


@dataclass
class LactFile:
    data: np.ndarray
    kind: Kind
    spacing: float


def atomic_write_bytes(path, payload: bytes):
    """Write via a temporary file in the target directory and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_lact(data, kind=None, spacing: float = 1.0) -> bytes:
    data = np.asarray(data)
    if kind is None:
        if np.iscomplexobj(data):
            kind = Kind.COMPLEX
        elif data.ndim == 3 and data.shape[0] == 2:
            kind = Kind.VECTOR_FIELD
        else:
            kind = Kind.IMAGE
    kind = Kind(kind)
    if kind is Kind.VECTOR_FIELD:
        if data.ndim != 3 or data.shape[0] != 2:
            raise ValueError("vector field must have shape (2, rows, cols)")
        dims = data.shape[1:]
        payload = data.astype("<f4")
    elif kind is Kind.COMPLEX:
        if data.ndim != 2:
            raise ValueError("complex grid must be 2D")
        dims = data.shape
        payload = np.stack([data.real, data.imag], axis=-1).astype("<f4")
    else:
        if data.ndim != 2:
            raise ValueError("image/sinogram must be 2D")
        if np.iscomplexobj(data):
            raise ValueError("use kind=COMPLEX for complex data")
        dims = data.shape
        payload = data.astype("<f4")
    header = _HEADER.pack(MAGIC, VERSION, int(kind), 0, dims[0], dims[1], float(spacing))
    return header + np.ascontiguousarray(payload).tobytes()


def write_lact(path, data, kind=None, spacing: float = 1.0):
    """Atomically write ``data`` as a LACT1 file (float32 payload)."""
    atomic_write_bytes(path, encode_lact(data, kind, spacing))


def read_lact(path) -> LactFile:
    with open(path, "rb") as fh:
        return decode_lact(fh.read(), str(path))


def decode_lact(raw: bytes, path: str = "<bytes>") -> LactFile:
    if len(raw) < _HEADER.size:
        if not raw.startswith(MAGIC[: len(raw)]) or len(raw) < 4:
            raise BadMagic(f"{path}: not a LACT file")
        raise TruncatedPayload(f"{path}: header truncated")
    magic, version, kind, _, d0, d1, spacing = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version} not supported")
    try:
        kind = Kind(kind)
    except ValueError:
        raise UnsupportedVersion(f"{path}: unknown kind {kind}") from None
    n = d0 * d1 * (2 if kind in (Kind.VECTOR_FIELD, Kind.COMPLEX) else 1)
    body = raw[_HEADER.size:]
    if len(body) < 4 * n:
        raise TruncatedPayload(f"{path}: expected {4 * n} payload bytes, found {len(body)}")
    vals = np.frombuffer(body, dtype="<f4", count=n)
    if kind is Kind.VECTOR_FIELD:
        data = vals.reshape(2, d0, d1).copy()
    elif kind is Kind.COMPLEX:
        pairs = vals.reshape(d0, d1, 2)
        data = pairs[..., 0].astype(np.complex64) + 1j * pairs[..., 1].astype(np.complex64)
    else:
        data = vals.reshape(d0, d1).copy()
    return LactFile(data=data, kind=kind, spacing=spacing)


def write_png(path, img, window=None):
    """8-bit grayscale PNG; values are mapped linearly over ``window`` and clamped."""
    from io import BytesIO

    from PIL import Image

    img = np.asarray(img, dtype=float)
    lo, hi = (float(img.min()), float(img.max())) if window is None else map(float, window)
    if hi <= lo:
        hi = lo + 1.0
    u8 = np.round(np.clip((img - lo) / (hi - lo), 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = BytesIO()
    Image.fromarray(u8).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())
