"""Length-prefixed frame codec for the backend wire protocol.

A frame is a little-endian u32 header length, a UTF-8 JSON header, then a
raw payload whose size is implied by the header (``shape`` x 4 bytes for
``f32le``, x 8 for ``f64le``). The same encoding doubles as the on-disk
raw tensor blob format.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

from .errors import ProtocolError, TruncationError

DTYPE_SIZES = {"f32le": 4, "f64le": 8}
DTYPE_NUMPY = {"f32le": "<f4", "f64le": "<f8"}


def payload_size(header: dict) -> int:
    """Byte size implied by a header's shape/dtype, 0 if it carries none."""
    shape = header.get("shape")
    if shape is None:
        return 0
    dtype = header.get("dtype", "f32le")
    if dtype not in DTYPE_SIZES:
        raise ProtocolError(f"unknown dtype {dtype!r}")
    n = 1
    for d in shape:
        if not isinstance(d, int) or d <= 0:
            raise ProtocolError(f"bad shape entry {d!r}")
        n *= d
    return n * DTYPE_SIZES[dtype]


def encode_frame(header: dict, payload: bytes = b"") -> bytes:
    expected = payload_size(header)
    if expected != len(payload):
        raise ProtocolError(
            f"payload is {len(payload)} bytes, header implies {expected}"
        )
    raw = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw + payload


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            raise TruncationError(f"stream ended with {remaining} bytes missing")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> tuple[dict, bytes]:
    """Read one frame; raises TruncationError on a short stream."""
    head = stream.read(4)
    if head == b"":
        raise EOFError("no frame available")
    if len(head) < 4:
        raise TruncationError("frame length prefix truncated")
    (header_len,) = struct.unpack("<I", head)
    if header_len > 1 << 24:
        raise ProtocolError(f"unreasonable header length {header_len}")
    try:
        header = json.loads(_read_exact(stream, header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed frame header: {exc}") from exc
    if not isinstance(header, dict):
        raise ProtocolError("frame header is not a JSON object")
    payload = _read_exact(stream, payload_size(header))
    return header, payload


def tensor_to_payload(arr: np.ndarray, dtype: str = "f32le") -> bytes:
    """Serialize a (c, h, w) tensor in C order."""
    return np.ascontiguousarray(arr, dtype=DTYPE_NUMPY[dtype]).tobytes()


def payload_to_tensor(payload: bytes, shape: tuple[int, ...], dtype: str = "f32le") -> np.ndarray:
    arr = np.frombuffer(payload, dtype=DTYPE_NUMPY[dtype])
    if arr.size != int(np.prod(shape)):
        raise ProtocolError("payload size does not match declared shape")
    return arr.reshape(shape).astype(np.float64)
