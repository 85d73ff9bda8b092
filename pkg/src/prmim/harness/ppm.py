"""Zero-dependency binary PPM (P6, maxval 255) reader and writer."""

from __future__ import annotations

import numpy as np


class PpmError(ValueError):
    """Malformed or unsupported PPM payload."""


def _read_token(buf, pos):
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise PpmError("truncated PPM header")
    return buf[start:pos], pos


def read_ppm(path):
    """Read a P6/maxval-255 file into a (3, H, W) float tensor in [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != b"P6":
        raise PpmError(f"bad magic {buf[:2]!r}, expected b'P6'")
    pos = 2
    width, pos = _read_token(buf, pos)
    height, pos = _read_token(buf, pos)
    maxval, pos = _read_token(buf, pos)
    try:
        w, h, mv = int(width), int(height), int(maxval)
    except ValueError as exc:
        raise PpmError(f"non-numeric PPM header field: {exc}") from exc
    if mv != 255:
        raise PpmError(f"unsupported maxval {mv}, only 255")
    pos += 1  # single whitespace byte after maxval
    payload = buf[pos : pos + 3 * w * h]
    if len(payload) != 3 * w * h:
        raise PpmError(f"truncated payload: expected {3 * w * h} bytes, got {len(payload)}")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return img.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_ppm(image, path):
    """Write a (3, H, W) or (1, H, W) tensor in [0, 1]; rounds half up to 8-bit."""
    data = np.asarray(image, dtype=np.float64)
    if data.ndim != 3 or data.shape[0] not in (1, 3):
        raise PpmError(f"expected (1|3, H, W) image, got shape {data.shape}")
    if data.shape[0] == 1:
        data = np.repeat(data, 3, axis=0)
    c, h, w = data.shape
    quantized = np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(quantized.transpose(1, 2, 0).tobytes())
