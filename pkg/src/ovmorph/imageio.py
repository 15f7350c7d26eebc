"""Binary PPM (P6) and PGM (P5) raster I/O.

Patches are ``(height, width, 3)`` uint8 arrays; label masks are
``(height, width)`` integer arrays.  Writers emit the canonical header
``P6\\n<w> <h>\\n255\\n`` so a read/write round trip of a canonical file is
byte-identical.
"""
from __future__ import annotations

import os

import numpy as np

from .errors import InvalidInputError, ParseError

_WHITESPACE = b" \t\n\r\v\f"


def _read_header(data: bytes, path, n_fields: int):
    """Return (tokens, raster_offset) for a netpbm header with ``n_fields`` tokens."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < n_fields:
        while pos < n and data[pos] in _WHITESPACE:
            pos += 1
        if pos < n and data[pos] == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise ParseError("truncated header", path)
        tokens.append(data[start:pos])
    if pos >= n or data[pos] not in _WHITESPACE:
        raise ParseError("missing whitespace after header", path)
    return tokens, pos + 1


def _parse(data: bytes, path, magic: bytes):
    tokens, offset = _read_header(data, path, 4)
    if tokens[0] != magic:
        raise ParseError(f"expected magic {magic.decode()}, got {tokens[0]!r}", path)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ParseError("non-integer header field", path) from None
    if width <= 0 or height <= 0:
        raise ParseError(f"invalid dimensions {width}x{height}", path)
    if not 0 < maxval < 65536:
        raise ParseError(f"invalid maxval {maxval}", path)
    return width, height, maxval, offset


def decode_ppm(data: bytes, path=None) -> np.ndarray:
    width, height, maxval, offset = _parse(data, path, b"P6")
    if maxval != 255:
        raise ParseError(f"only maxval 255 is supported for PPM, got {maxval}", path)
    size = width * height * 3
    raster = data[offset:offset + size]
    if len(raster) != size:
        raise ParseError(f"raster truncated: expected {size} bytes, got {len(raster)}", path)
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()


def decode_pgm(data: bytes, path=None) -> np.ndarray:
    """Decode P5; 16-bit rasters are big-endian and returned as uint16."""
    width, height, maxval, offset = _parse(data, path, b"P5")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    size = width * height * dtype.itemsize
    raster = data[offset:offset + size]
    if len(raster) != size:
        raise ParseError(f"raster truncated: expected {size} bytes, got {len(raster)}", path)
    out = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return out.astype(np.uint16 if maxval > 255 else np.uint8)


def encode_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise InvalidInputError(f"PPM needs (h, w, 3) uint8, got {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    if h == 0 or w == 0:
        raise InvalidInputError("zero-sized image")
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(image).tobytes()


def encode_pgm(mask: np.ndarray, maxval: int = 65535) -> bytes:
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.size == 0:
        raise InvalidInputError(f"PGM needs a non-empty 2-D array, got {mask.shape}")
    if mask.min() < 0 or mask.max() > maxval:
        raise InvalidInputError(f"values outside [0, {maxval}]")
    h, w = mask.shape
    dtype = ">u2" if maxval > 255 else np.uint8
    return b"P5\n%d %d\n%d\n" % (w, h, maxval) + np.ascontiguousarray(mask.astype(dtype)).tobytes()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read(), path)


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read(), path)


def write_ppm(path, image: np.ndarray) -> None:
    _write_bytes(path, encode_ppm(image))


def write_pgm(path, mask: np.ndarray, maxval: int = 65535) -> None:
    _write_bytes(path, encode_pgm(mask, maxval))


def _write_bytes(path, payload: bytes) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(payload)
