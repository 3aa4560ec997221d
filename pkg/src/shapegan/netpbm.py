"""Binary PPM/PGM image I/O.

Images are exchanged as float arrays in [0, 1], channel-first: (3, H, W) for
color, (1, H, W) for masks. Files are written with maxval 255; reading is
the exact inverse on quantized data. Parse failures raise
:class:`DataError` with the byte offset of the offending token.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError, UsageError

_WHITESPACE = b" \t\r\n\x0b\x0c"


def _quantize(values: np.ndarray) -> np.ndarray:
    return np.rint(values * 255.0).astype(np.uint8)


def _check_range(arr: np.ndarray) -> None:
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise UsageError("image values must lie in [0, 1] for writing")


def write_ppm(path, image: np.ndarray) -> None:
    """Write a (3, H, W) float image as binary PPM (P6, maxval 255)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise UsageError(f"write_ppm expects (3, H, W), got {image.shape}")
    _check_range(image)
    _, h, w = image.shape
    payload = _quantize(image).transpose(1, 2, 0).tobytes()
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(payload)


def write_pgm(path, mask: np.ndarray) -> None:
    """Write a (1, H, W) float mask as binary PGM (P5, maxval 255)."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 3 or mask.shape[0] != 1:
        raise UsageError(f"write_pgm expects (1, H, W), got {mask.shape}")
    _check_range(mask)
    _, h, w = mask.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(_quantize(mask[0]).tobytes())


class _Parser:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = str(path)

    def error(self, message: str):
        raise DataError(f"{self.path}: {message} at byte {self.pos}")

    def _skip_separators(self) -> None:
        buf, n = self.buf, len(self.buf)
        while self.pos < n:
            ch = buf[self.pos : self.pos + 1]
            if ch in (b"#",):
                nl = buf.find(b"\n", self.pos)
                self.pos = n if nl < 0 else nl + 1
            elif ch and ch in _WHITESPACE:
                self.pos += 1
            else:
                return

    def token(self) -> bytes:
        self._skip_separators()
        if self.pos >= len(self.buf):
            self.error("unexpected end of header")
        start = self.pos
        while self.pos < len(self.buf) and self.buf[self.pos : self.pos + 1] not in _WHITESPACE:
            self.pos += 1
        return self.buf[start : self.pos]

    def integer(self, what: str) -> int:
        tok = self.token()
        try:
            return int(tok)
        except ValueError:
            self.pos -= len(tok)
            self.error(f"expected integer {what}, got {tok!r}")

    def payload(self, count: int) -> np.ndarray:
        # exactly one whitespace byte separates the header from the raster
        if self.pos >= len(self.buf) or self.buf[self.pos : self.pos + 1] not in _WHITESPACE:
            self.error("expected single whitespace before raster data")
        self.pos += 1
        data = self.buf[self.pos : self.pos + count]
        if len(data) != count:
            self.pos = len(self.buf)
            self.error(f"truncated raster: need {count} bytes, have {len(data)}")
        return np.frombuffer(data, dtype=np.uint8)


def _read(path) -> tuple[bytes, np.ndarray, int, int]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    p = _Parser(buf, path)
    magic = p.token()
    if magic not in (b"P5", b"P6"):
        p.pos = 0
        p.error(f"unsupported magic {magic!r}")
    w = p.integer("width")
    h = p.integer("height")
    if w <= 0 or h <= 0:
        p.error(f"invalid dimensions {w}x{h}")
    maxval = p.integer("maxval")
    if maxval != 255:
        p.error(f"unsupported maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    raw = p.payload(w * h * channels)
    return magic, raw, w, h


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into a (3, H, W) float array in [0, 1]."""
    magic, raw, w, h = _read(path)
    if magic != b"P6":
        raise DataError(f"{path}: expected P6, found {magic.decode()}")
    return raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into a (1, H, W) float array in [0, 1]."""
    magic, raw, w, h = _read(path)
    if magic != b"P5":
        raise DataError(f"{path}: expected P5, found {magic.decode()}")
    return raw.reshape(1, h, w).astype(np.float64) / 255.0


def read_image(path) -> np.ndarray:
    """Dispatch on file magic: returns (3, H, W) or (1, H, W)."""
    magic, raw, w, h = _read(path)
    if magic == b"P6":
        return raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0
    return raw.reshape(1, h, w).astype(np.float64) / 255.0


def write_image(path, array: np.ndarray) -> None:
    """Dispatch on channel count: 3 channels -> PPM, 1 channel -> PGM."""
    array = np.asarray(array)
    if array.ndim != 3 or array.shape[0] not in (1, 3):
        raise UsageError(f"write_image expects (1|3, H, W), got {array.shape}")
    if array.shape[0] == 3:
        write_ppm(path, array)
    else:
        write_pgm(path, array)
