"""Netpbm PGM reader/writer (plain ``P2`` and raw ``P5``).

Header tokens are separated by whitespace and may be interleaved with ``#``
comments running to end of line.  In ``P5`` files exactly one whitespace byte
separates the maxval from the raster; samples are one byte when
``maxval < 256`` and two big-endian bytes otherwise.
"""

from __future__ import annotations

import numpy as np

from .errors import PGMError

_WHITESPACE = b" \t\n\r\v\f"
MAX_MAXVAL = 65535


def _skip_space(data: bytes, pos: int) -> int:
    n = len(data)
    while pos < n:
        c = data[pos]
        if c == 0x23:  # '#': comment to end of line
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
        elif c in _WHITESPACE:
            pos += 1
        else:
            break
    return pos


def _read_int(data: bytes, pos: int, what: str) -> tuple[int, int]:
    pos = _skip_space(data, pos)
    start = pos
    while pos < len(data) and data[pos : pos + 1].isdigit():
        pos += 1
    if pos == start:
        if start >= len(data):
            raise PGMError(f"unexpected end of data while reading {what}", start)
        raise PGMError(f"expected decimal integer for {what}", start)
    return int(data[start:pos]), pos


def parse_header(data: bytes) -> tuple[str, int, int, int, int]:
    """Return ``(magic, width, height, maxval, raster_offset)``."""
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise PGMError(f"bad magic number {magic!r}; expected P2 or P5", 0)
    pos = 2
    width, pos = _read_int(data, pos, "width")
    height, pos = _read_int(data, pos, "height")
    maxval_at = _skip_space(data, pos)
    maxval, pos = _read_int(data, pos, "maxval")
    if width < 1 or height < 1:
        raise PGMError(f"image dimensions must be positive, got {width}x{height}", 2)
    if not 0 < maxval <= MAX_MAXVAL:
        raise PGMError(f"maxval must be in 1..{MAX_MAXVAL}, got {maxval}", maxval_at)
    if pos >= len(data):
        raise PGMError("unexpected end of data after maxval", pos)
    if data[pos] not in _WHITESPACE:
        raise PGMError("expected whitespace after maxval", pos)
    return magic.decode(), width, height, maxval, pos + 1


def decode_samples(data: bytes) -> tuple[np.ndarray, int]:
    """Return the raw integer raster (height x width) and maxval."""
    magic, width, height, maxval, pos = parse_header(data)
    count = width * height
    if magic == "P5":
        size = 2 if maxval > 255 else 1
        need = count * size
        if len(data) - pos < need:
            raise PGMError(
                f"truncated raster: need {need} bytes, have {max(len(data) - pos, 0)}",
                len(data),
            )
        dtype = ">u2" if size == 2 else "u1"
        raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.int64)
    else:
        values = []
        for _ in range(count):
            v, pos = _read_int(data, pos, "sample")
            values.append(v)
        raw = np.array(values, dtype=np.int64)
    if raw.size and raw.max() > maxval:
        bad = int(np.argmax(raw > maxval))
        raise PGMError(f"sample {bad} exceeds maxval {maxval}", pos)
    return raw.reshape(height, width), maxval


def encode(samples: np.ndarray, maxval: int, plain: bool = False) -> bytes:
    """Serialise an integer raster (height x width) as P2 or P5."""
    samples = np.asarray(samples)
    height, width = samples.shape
    if not 0 < maxval <= MAX_MAXVAL:
        raise ValueError(f"maxval must be in 1..{MAX_MAXVAL}, got {maxval}")
    header = f"{'P2' if plain else 'P5'}\n{width} {height}\n{maxval}\n".encode()
    if plain:
        rows = (" ".join(str(int(v)) for v in row) for row in samples)
        return header + "\n".join(rows).encode() + b"\n"
    dtype = ">u2" if maxval > 255 else "u1"
    return header + samples.astype(dtype).tobytes()
