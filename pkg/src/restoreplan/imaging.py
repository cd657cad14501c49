"""Image container and on-disk formats.

Intensities live in ``[0, 1]`` and are stored as float32. Arithmetic is done
in float64 by callers; :meth:`ImageGrid.from_array` clamps and rounds on the
way back in.

JIR layout (little-endian)::

    magic     4 bytes   b"JIRI"
    version   u16       1
    height    u32
    width     u32
    channels  u32       1 or 3
    reserved  u32       0
    payload   f32 * height * width * channels, row-major, channels interleaved
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

JIR_MAGIC = b"JIRI"
JIR_VERSION = 1
_HEADER = struct.Struct("<4sHIIII")
HEADER_SIZE = _HEADER.size  # 22


class ImageGrid:
    """Immutable H x W x C grid of unit-interval intensities."""

    __slots__ = ("_data",)

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data)
        if arr.ndim != 3:
            raise ValidationError(f"expected an (H, W, C) array, got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise ValidationError(f"height and width must be positive, got {h}x{w}")
        if c not in (1, 3):
            raise ValidationError(f"channels must be 1 or 3, got {c}")
        arr = np.array(arr, dtype=np.float32, order="C", copy=True)
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("intensities must lie in [0, 1]")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageGrid":
        """Clamp-on-write constructor: clips to [0, 1] and rounds to float32."""
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        return cls(np.clip(np.nan_to_num(a, nan=0.0), 0.0, 1.0))

    @classmethod
    def full(cls, height: int, width: int, channels: int, value: float) -> "ImageGrid":
        return cls(np.full((height, width, channels), value, dtype=np.float32))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def height(self) -> int:
        return self._data.shape[0]

    @property
    def width(self) -> int:
        return self._data.shape[1]

    @property
    def channels(self) -> int:
        return self._data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._data.shape

    def as_float64(self) -> np.ndarray:
        return self._data.astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, ImageGrid):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._data, other._data)

    def __hash__(self):
        return hash((self.shape, self._data.tobytes()))

    def __repr__(self):
        return f"ImageGrid({self.height}x{self.width}x{self.channels})"


def residual_rmse(a: ImageGrid, b: ImageGrid) -> float:
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a.as_float64() - b.as_float64()
    return float(np.sqrt(np.mean(d * d)))


# -- serialization ---------------------------------------------------------


def encode_jir(img: ImageGrid) -> bytes:
    if not isinstance(img, ImageGrid):
        img = ImageGrid(img)
    header = _HEADER.pack(JIR_MAGIC, JIR_VERSION, img.height, img.width, img.channels, 0)
    return header + img.data.astype("<f4").tobytes()


def decode_jir(buf: bytes) -> ImageGrid:
    if len(buf) < HEADER_SIZE:
        raise FormatError("truncated JIR header")
    magic, version, h, w, c, reserved = _HEADER.unpack_from(buf)
    if magic != JIR_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != JIR_VERSION:
        raise FormatError(f"unsupported JIR version {version}")
    if reserved != 0:
        raise FormatError("reserved header field must be 0")
    if h < 1 or w < 1 or c not in (1, 3):
        raise FormatError(f"bad dimensions {h}x{w}x{c}")
    n = h * w * c
    if len(buf) != HEADER_SIZE + 4 * n:
        raise FormatError(f"payload size {len(buf) - HEADER_SIZE} does not match {h}x{w}x{c}")
    arr = np.frombuffer(buf, dtype="<f4", count=n, offset=HEADER_SIZE).reshape(h, w, c)
    # ImageGrid raises ValidationError on out-of-range payloads
    return ImageGrid(arr)


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated PNM header")
    return buf[start:pos], pos


def decode_pnm(buf: bytes) -> ImageGrid:
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"bad magic {magic!r}")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise FormatError(f"non-integer PNM header field {tok!r}") from None
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    # exactly one whitespace byte separates header and raster
    pos += 1
    c = 3 if magic == b"P6" else 1
    n = h * w * c
    raster = buf[pos:pos + n]
    if len(raster) != n:
        raise FormatError("truncated PNM raster")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, c)
    return ImageGrid(arr.astype(np.float64) / 255.0)


def encode_pnm(img: ImageGrid) -> bytes:
    magic = b"P6" if img.channels == 3 else b"P5"
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    q = np.rint(img.as_float64() * 255.0).astype(np.uint8)
    return header + q.tobytes()


def read_image(path: str | os.PathLike) -> ImageGrid:
    buf = Path(path).read_bytes()
    if buf[:4] == JIR_MAGIC:
        return decode_jir(buf)
    if buf[:2] in (b"P5", b"P6"):
        return decode_pnm(buf)
    raise FormatError(f"{path}: unrecognised magic {buf[:4]!r}")


def write_image(img: ImageGrid, path: str | os.PathLike) -> None:
    """Write JIR, or binary PPM/PGM when the suffix is .ppm/.pgm/.pnm."""
    if not isinstance(img, ImageGrid):
        raise ValidationError("write_image expects an ImageGrid")
    p = Path(path)
    if p.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        payload = encode_pnm(img)
    else:
        payload = encode_jir(img)
    p.write_bytes(payload)
