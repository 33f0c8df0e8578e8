"""Binary PPM (P6) and PGM (P5) reading and writing, 8-bit only."""

from __future__ import annotations

import numpy as np

from .errors import ImageError

__all__ = ["read_ppm", "write_ppm", "read_pgm", "write_pgm"]


def _parse_header(data: bytes, magic: bytes):
    if not data.startswith(magic):
        raise ImageError(f"not a {magic.decode()} file")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise ImageError("truncated image header")
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise ImageError(f"unexpected byte {ch!r} in image header")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ImageError("image header must end with a whitespace byte")
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise ImageError(f"only 8-bit images supported, maxval={maxval}")
    if width < 1 or height < 1:
        raise ImageError(f"invalid image dimensions {width}x{height}")
    return width, height, pos


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 PPM into an (H, W, 3) uint8 array."""
    with open(path, "rb") as f:
        data = f.read()
    width, height, pos = _parse_header(data, b"P6")
    need = width * height * 3
    raw = data[pos:pos + need]
    if len(raw) < need:
        raise ImageError(f"truncated pixel data: expected {need} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3).copy()


def write_ppm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ImageError(f"PPM pixels must be (H, W, 3), got {pixels.shape}")
    h, w = pixels.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM into an (H, W) uint8 array."""
    with open(path, "rb") as f:
        data = f.read()
    width, height, pos = _parse_header(data, b"P5")
    need = width * height
    raw = data[pos:pos + need]
    if len(raw) < need:
        raise ImageError(f"truncated pixel data: expected {need} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise ImageError(f"PGM pixels must be (H, W), got {pixels.shape}")
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
