"""UV lookup maps, level-of-detail maps, and the UVM1 file format.

A UvMap stores, for every target-view pixel, normalized (u, v) coordinates
into the canonical unit square plus a validity flag. Invalid pixels hold
u = v = 0. The LOD map gives, per valid pixel, the pyramid level matching
the local compression of the mapping: log2 of the larger of the two UV
gradient magnitudes, measured in canonical pixel units.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, RangeError, SizeError, TruncationError

_UVM_MAGIC = b"UVM1"


@dataclass(frozen=True)
class UvMap:
    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if u.ndim != 2 or u.shape != v.shape or u.shape != valid.shape:
            raise SizeError("u, v, valid must share one 2-D shape")
        inside = (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (v <= 1.0)
        if not inside[valid].all():
            raise RangeError("valid pixels must have u, v in [0, 1]")
        # invalid pixels store zeros, matching the file convention
        u = np.where(valid, u, 0.0)
        v = np.where(valid, v, 0.0)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]


@dataclass(frozen=True)
class LodMap:
    """Per-pixel pyramid level; NaN where the source UvMap is invalid."""

    level: np.ndarray

    def __post_init__(self):
        lv = np.asarray(self.level, dtype=np.float64)
        if lv.ndim != 2:
            raise SizeError("LOD level raster must be 2-D")
        defined = ~np.isnan(lv)
        if not (lv[defined] >= 0.0).all() or not np.isfinite(lv[defined]).all():
            raise RangeError("defined LOD levels must be finite and >= 0")
        object.__setattr__(self, "level", lv)

    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.level)


def identity_map(size: int) -> UvMap:
    """The identity view at a square resolution: pixel centers map to themselves."""
    centers = (np.arange(size) + 0.5) / size
    u = np.broadcast_to(centers[None, :], (size, size)).copy()
    v = np.broadcast_to(centers[:, None], (size, size)).copy()
    return UvMap(u, v, np.ones((size, size), dtype=bool))


def is_identity_map(m: UvMap, tol: float = 1e-6) -> bool:
    if m.height != m.width or not m.valid.all():
        return False
    ident = identity_map(m.width)
    return bool(
        np.abs(m.u - ident.u).max() <= tol and np.abs(m.v - ident.v).max() <= tol
    )


def _axis_gradient(field: np.ndarray, valid: np.ndarray, axis: int):
    """Forward difference along ``axis`` with edge replication.

    A pixel whose forward neighbor is invalid falls back to the backward
    difference; if both neighbors are invalid the gradient is undefined.
    Returns (gradient, defined) arrays.
    """
    f = np.moveaxis(field, axis, 0)
    ok = np.moveaxis(valid, axis, 0)
    n = f.shape[0]
    grad = np.zeros_like(f)
    defined = np.ones(f.shape, dtype=bool)
    if n == 1:
        return np.moveaxis(grad, 0, axis), np.moveaxis(defined, 0, axis)

    fwd = f[1:] - f[:-1]
    fwd_ok = ok[1:]
    bwd_ok = ok[:-1]
    # rows 0..n-2: forward preferred, backward fallback, else undefined
    body = np.where(fwd_ok, fwd, 0.0)
    bwd_fallback = np.zeros_like(fwd)
    bwd_fallback[1:] = f[1:-1] - f[:-2]
    use_bwd = ~fwd_ok & np.concatenate([np.zeros((1,) + ok.shape[1:], bool), bwd_ok[:-1]])
    body = np.where(use_bwd, bwd_fallback, body)
    undef = ~fwd_ok & ~use_bwd
    grad[:-1] = body
    defined[:-1] = ~undef
    # last row: replicated edge value, derivative 0, always defined
    return np.moveaxis(grad, 0, axis), np.moveaxis(defined, 0, axis)


def compute_lod(m: UvMap, canonical_size: int) -> LodMap:
    """LOD level per pixel: log2(max(|grad u|, |grad v|)) in canonical pixel units."""
    if canonical_size < 2:
        raise SizeError("canonical_size must be at least 2")
    upix = m.u * float(canonical_size)
    vpix = m.v * float(canonical_size)

    dux, okux = _axis_gradient(upix, m.valid, axis=1)
    duy, okuy = _axis_gradient(upix, m.valid, axis=0)
    dvx, okvx = _axis_gradient(vpix, m.valid, axis=1)
    dvy, okvy = _axis_gradient(vpix, m.valid, axis=0)

    grad_u = np.hypot(dux, duy)
    grad_v = np.hypot(dvx, dvy)
    magnitude = np.maximum(grad_u, grad_v)

    with np.errstate(divide="ignore"):
        raw = np.log2(magnitude)
    lod = np.maximum(raw, 0.0)

    defined = m.valid & okux & okuy & okvx & okvy
    lod = np.where(defined, lod, np.nan)
    return LodMap(lod)


def downscale_uvmap(m: UvMap, factor: int) -> UvMap:
    """Block-subsample, keeping the top-left sample of each block."""
    if factor < 1:
        raise SizeError("factor must be >= 1")
    if m.height % factor or m.width % factor:
        raise SizeError(f"factor {factor} does not divide {m.height}x{m.width}")
    return UvMap(m.u[::factor, ::factor], m.v[::factor, ::factor], m.valid[::factor, ::factor])


# --------------------------------------------------------------------------
# UVM1 file format: magic, LE u32 width/height, then per pixel (row-major)
# three LE float32 values u, v, validity (exactly 1.0 or 0.0). No padding.
# --------------------------------------------------------------------------


def write_uvm(m: UvMap, path: str) -> None:
    records = np.empty((m.height, m.width, 3), dtype="<f4")
    records[:, :, 0] = m.u
    records[:, :, 1] = m.v
    records[:, :, 2] = m.valid.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_UVM_MAGIC)
        fh.write(struct.pack("<II", m.width, m.height))
        fh.write(records.tobytes())


def read_uvm(path: str) -> UvMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _UVM_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {_UVM_MAGIC!r}")
    if len(blob) < 12:
        raise TruncationError("UVM1 header truncated")
    width, height = struct.unpack("<II", blob[4:12])
    need = 12 + width * height * 12
    if len(blob) < need:
        raise TruncationError(f"UVM1 payload is {len(blob) - 12} bytes, need {need - 12}")
    records = np.frombuffer(blob[12:need], dtype="<f4").reshape(height, width, 3)
    flags = records[:, :, 2]
    if not np.isin(flags, (0.0, 1.0)).all():
        raise FormatError("validity flags must be exactly 0.0 or 1.0")
    valid = flags == 1.0
    u = records[:, :, 0].astype(np.float64)
    v = records[:, :, 1].astype(np.float64)
    inside = (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (v <= 1.0)
    if not inside[valid].all():
        raise RangeError("valid pixels must have u, v in [0, 1]")
    return UvMap(u, v, valid)
