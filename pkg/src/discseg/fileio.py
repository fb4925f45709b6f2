"""On-disk formats: tensor files, binary PNM images, flat key-value config.

Tensor file layout (all integers little-endian)::

    b"DSEG"            magic
    u16  version       currently 1
    u8   dtype tag     0 f32, 1 f64, 2 u16, 3 u8
    u8   ndim
    u32  dims[ndim]
    payload            row-major, little-endian, prod(dims) * itemsize bytes

Images are binary Netpbm: P6 (8-bit RGB) and P5 (8- or 16-bit gray).
16-bit P5 samples are big-endian, as the Netpbm format requires.

Every writer goes through ``atomic_write``: data lands in a temporary file
in the target directory and is renamed into place.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"DSEG"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<u2"), 3: np.dtype("u1")}
_TAGS = {(dt.kind, dt.itemsize): tag for tag, dt in _DTYPES.items()}


class FormatError(ValueError):
    pass


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


# -- tensor files --------------------------------------------------------------

def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    tag = _TAGS.get((arr.dtype.kind, arr.dtype.itemsize))
    if tag is None:
        raise FormatError(f"unsupported dtype {arr.dtype}; use float32, float64, uint16 or uint8")
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    header = MAGIC + struct.pack("<HBB", VERSION, tag, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError("not a DSEG tensor file")
    version, tag, ndim = struct.unpack_from("<HBB", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported tensor file version {version}")
    if tag not in _DTYPES:
        raise FormatError(f"unknown dtype tag {tag}")
    off = 8 + 4 * ndim
    if len(data) < off:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{ndim}I", data, 8)
    dt = _DTYPES[tag]
    expected = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(data) - off != expected:
        raise FormatError(f"payload is {len(data) - off} bytes, header implies {expected}")
    return np.frombuffer(data, dtype=dt, offset=off).reshape(dims).astype(dt.newbyteorder("="))


def write_tensor(path, arr: np.ndarray) -> None:
    atomic_write(path, encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# -- Netpbm --------------------------------------------------------------------

def encode_ppm(image: np.ndarray) -> bytes:
    """P6 from (H, W, 3) uint8, or floats in [0, 1] (rounded to 8 bits)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError(f"P6 needs an (H, W, 3) image, got {image.shape}")
    if image.dtype != np.uint8:
        image = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = image.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + image.tobytes()


def encode_pgm(gray: np.ndarray, maxval: int | None = None) -> bytes:
    """P5 from an (H, W) integer array; 16-bit when values exceed 255."""
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise FormatError(f"P5 needs an (H, W) image, got {gray.shape}")
    if gray.size and (gray.min() < 0 or gray.max() > 65535):
        raise FormatError("P5 values must be in [0, 65535]")
    if maxval is None:
        maxval = 65535 if gray.size and gray.max() > 255 else 255
    h, w = gray.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    dt = ">u2" if maxval > 255 else "u1"
    return header + gray.astype(dt).tobytes()


def _parse_header(data: bytes, magic: bytes):
    if data[:2] != magic:
        raise FormatError(f"expected {magic.decode()} image, got {data[:2]!r}")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated Netpbm header")
        fields.append(int(data[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    return fields[0], fields[1], fields[2], pos + 1


def decode_ppm(data: bytes) -> np.ndarray:
    w, h, maxval, off = _parse_header(data, b"P6")
    if maxval != 255:
        raise FormatError(f"only 8-bit P6 is supported, maxval {maxval}")
    raster = data[off:off + w * h * 3]
    if len(raster) != w * h * 3:
        raise FormatError("truncated P6 raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def decode_pgm(data: bytes) -> np.ndarray:
    w, h, maxval, off = _parse_header(data, b"P5")
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * dt.itemsize
    raster = data[off:off + n]
    if len(raster) != n:
        raise FormatError("truncated P5 raster")
    return np.frombuffer(raster, dtype=dt).reshape(h, w).astype(np.int64)


def write_ppm(path, image) -> None:
    atomic_write(path, encode_ppm(image))


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_pgm(path, gray, maxval: int | None = None) -> None:
    atomic_write(path, encode_pgm(gray, maxval))


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def write_labels(path, labels) -> None:
    """Label maps are always stored as 16-bit P5."""
    atomic_write(path, encode_pgm(labels, maxval=65535))


# -- config files --------------------------------------------------------------

def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; blank lines ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise FormatError(f"{source}:{lineno}: empty key")
        if key in out:
            raise FormatError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def format_key_values(items: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())
