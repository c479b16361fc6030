"""Image container and bit-exact image IO.

Images are dense ``(height, width, channels)`` float64 rasters with a
nominal value range of [-1, 1]. A pixel may be MISSING, encoded as NaN in
every channel; helper predicates make the sentinel explicit so arithmetic
never consumes it silently.

PNG IO is implemented directly (8/16-bit, gray/RGB/alpha, no interlace)
so byte layouts stay deterministic. Lossless float round trips go through
the raw tensor blob format shared with the wire protocol.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import wire
from .errors import FormatError, SizeError, TruncationError

MISSING = np.nan


@dataclass(frozen=True)
class Image:
    """A float raster. ``data`` has shape (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise SizeError(f"image data must be 2-D or 3-D, got shape {arr.shape}")
        if not (1 <= arr.shape[2] <= 4):
            raise SizeError(f"channel count {arr.shape[2]} outside 1..4")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise SizeError(f"degenerate image shape {arr.shape}")
        nan = np.isnan(arr)
        partial = nan.any(axis=2) & ~nan.all(axis=2)
        if partial.any():
            raise ValueError("MISSING must cover all channels of a pixel")
        finite_ok = np.isfinite(arr) | nan
        if not finite_ok.all():
            raise ValueError("non-missing samples must be finite")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def missing_mask(self) -> np.ndarray:
        """Boolean (h, w) raster, True where the pixel is MISSING."""
        return np.isnan(self.data[:, :, 0])

    def has_missing(self) -> bool:
        return bool(np.isnan(self.data[:, :, 0]).any())

    def copy(self) -> "Image":
        return Image(self.data.copy())


def constant_image(height: int, width: int, channels: int, value: float) -> Image:
    return Image(np.full((height, width, channels), float(value)))


def with_missing(data: np.ndarray, defined: np.ndarray) -> Image:
    """Build an Image with MISSING wherever ``defined`` is False."""
    arr = np.array(data, dtype=np.float64, copy=True)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    arr[~defined] = MISSING
    return Image(arr)


# --------------------------------------------------------------------------
# PNG codec
# --------------------------------------------------------------------------

_PNG_SIG = b"\x89PNG\r\n\x1a\n"
_COLOR_TYPE = {1: 0, 2: 4, 3: 2, 4: 6}
_CHANNELS = {0: 1, 2: 3, 4: 2, 6: 4}


def _chunk(tag: bytes, body: bytes) -> bytes:
    return (
        struct.pack(">I", len(body))
        + tag
        + body
        + struct.pack(">I", zlib.crc32(tag + body) & 0xFFFFFFFF)
    )


def write_png(path: str, img: Image, bitdepth: int = 16) -> None:
    """Write a PNG, mapping [-1, 1] linearly onto the integer range.

    MISSING pixels are stored as the minimum code value (-1.0).
    """
    if bitdepth not in (8, 16):
        raise ValueError("bitdepth must be 8 or 16")
    maxval = (1 << bitdepth) - 1
    data = np.nan_to_num(img.data, nan=-1.0)
    codes = np.rint((np.clip(data, -1.0, 1.0) + 1.0) * (maxval / 2.0))
    if bitdepth == 8:
        raw = codes.astype(np.uint8)
    else:
        raw = codes.astype(">u2")
    rows = raw.reshape(img.height, -1).view(np.uint8) if bitdepth == 16 else raw.reshape(img.height, -1)
    # big-endian sample order is already in place for 16-bit via the view
    scan = b"".join(b"\x00" + rows[r].tobytes() for r in range(img.height))
    ihdr = struct.pack(
        ">IIBBBBB", img.width, img.height, bitdepth, _COLOR_TYPE[img.channels], 0, 0, 0
    )
    blob = (
        _PNG_SIG
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(scan, 6))
        + _chunk(b"IEND", b"")
    )
    with open(path, "wb") as fh:
        fh.write(blob)


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(scan: bytes, height: int, stride: int, bpp: int) -> bytearray:
    out = bytearray(height * stride)
    pos = 0
    for r in range(height):
        if pos >= len(scan):
            raise TruncationError("PNG scanline data truncated")
        ftype = scan[pos]
        pos += 1
        line = bytearray(scan[pos : pos + stride])
        if len(line) < stride:
            raise TruncationError("PNG scanline data truncated")
        pos += stride
        prev = out[(r - 1) * stride : r * stride] if r > 0 else bytes(stride)
        if ftype == 0:
            pass
        elif ftype == 1:
            for i in range(bpp, stride):
                line[i] = (line[i] + line[i - bpp]) & 0xFF
        elif ftype == 2:
            for i in range(stride):
                line[i] = (line[i] + prev[i]) & 0xFF
        elif ftype == 3:
            for i in range(stride):
                left = line[i - bpp] if i >= bpp else 0
                line[i] = (line[i] + ((left + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:
            for i in range(stride):
                left = line[i - bpp] if i >= bpp else 0
                up_left = prev[i - bpp] if i >= bpp else 0
                line[i] = (line[i] + _paeth(left, prev[i], up_left)) & 0xFF
        else:
            raise FormatError(f"unsupported PNG filter type {ftype}")
        out[r * stride : (r + 1) * stride] = line
    return out


def read_png(path: str) -> Image:
    """Read a PNG written by :func:`write_png` (or any non-interlaced one)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _PNG_SIG:
        raise FormatError("not a PNG file")
    pos = 8
    ihdr = None
    idat = []
    while pos + 8 <= len(blob):
        (length,) = struct.unpack(">I", blob[pos : pos + 4])
        tag = blob[pos + 4 : pos + 8]
        body = blob[pos + 8 : pos + 8 + length]
        if len(body) < length:
            raise TruncationError("PNG chunk truncated")
        pos += 12 + length
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", body)
        elif tag == b"IDAT":
            idat.append(body)
        elif tag == b"IEND":
            break
    if ihdr is None:
        raise FormatError("PNG missing IHDR")
    width, height, bitdepth, color_type, _, _, interlace = ihdr
    if interlace != 0:
        raise FormatError("interlaced PNG not supported")
    if color_type not in _CHANNELS or bitdepth not in (8, 16):
        raise FormatError(f"unsupported PNG layout (color {color_type}, depth {bitdepth})")
    channels = _CHANNELS[color_type]
    sample_bytes = bitdepth // 8
    stride = width * channels * sample_bytes
    scan = zlib.decompress(b"".join(idat))
    raw = _unfilter(scan, height, stride, channels * sample_bytes)
    if bitdepth == 8:
        arr = np.frombuffer(bytes(raw), dtype=np.uint8).astype(np.float64)
    else:
        arr = np.frombuffer(bytes(raw), dtype=">u2").astype(np.float64)
    maxval = (1 << bitdepth) - 1
    arr = arr.reshape(height, width, channels) * (2.0 / maxval) - 1.0
    return Image(arr)


# --------------------------------------------------------------------------
# Raw tensor blob (lossless float round trip)
# --------------------------------------------------------------------------


def write_blob(path: str, img: Image) -> None:
    """Write the image as one wire-format tensor frame (f64le, lossless)."""
    chw = np.moveaxis(img.data, 2, 0)
    header = {
        "op": "tensor",
        "shape": [img.channels, img.height, img.width],
        "dtype": "f64le",
    }
    with open(path, "wb") as fh:
        fh.write(wire.encode_frame(header, wire.tensor_to_payload(chw, "f64le")))


def read_blob(path: str) -> Image:
    with open(path, "rb") as fh:
        header, payload = wire.read_frame(fh)
    if header.get("op") != "tensor":
        raise FormatError(f"blob op is {header.get('op')!r}, expected 'tensor'")
    c, h, w = header["shape"]
    arr = wire.payload_to_tensor(payload, (c, h, w), header.get("dtype", "f32le"))
    return Image(np.moveaxis(arr, 0, 2))
