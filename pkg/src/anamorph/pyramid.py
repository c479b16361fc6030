"""Gaussian/Laplacian pyramid construction and reconstruction.

The resampling pair is built around one separable 5-tap binomial kernel
([1, 4, 6, 4, 1] / 16) on co-sited stride-2 grids with periodic (wrap)
boundary handling:

* ``downsample_blur`` is binomial blur + stride-2 decimation.
* ``upsample`` is the column-normalized transpose of that decimation:
  classic zero-insertion pyrUp in the interior, normalized so constants
  stay constant at every size.

The pairing is deliberate. Inverse warping transports samples to coarser
levels through the exact adjoint of the upsample chain and divides by the
transported weight; with wrap boundaries at even sizes that normalized
adjoint *is* ``downsample_blur``, so inverting an identity warp reproduces
the plain pyramid decomposition at every pixel and the warp round trip is
exact up to float rounding. Replicated edges cannot satisfy both this
adjoint identity and constant preservation (the border tap masses are
incompatible), which is why wrap was chosen. At odd sizes the seam taps
are renormalized; constants, linearity, and reconstruction stay exact.

All operators are linear and deterministic; per-pixel summation order is
fixed, so results are identical across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .errors import DepthError, KindError, MissingDataError, SizeError
from .image import Image

KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True)
class Kernel:
    """Odd-length symmetric taps summing to 1."""

    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size % 2 == 0:
            raise ValueError("kernel taps must be a 1-D odd-length vector")
        if not np.allclose(taps, taps[::-1]):
            raise ValueError("kernel taps must be symmetric")
        if abs(taps.sum() - 1.0) > 1e-9:
            raise ValueError("kernel taps must sum to 1")
        object.__setattr__(self, "taps", taps)


BINOMIAL5 = Kernel(KERNEL)


class PyramidKind(Enum):
    GAUSSIAN = "gaussian"
    LAPLACIAN = "laplacian"


@dataclass(frozen=True)
class Pyramid:
    levels: list[Image]
    kind: PyramidKind

    @property
    def depth(self) -> int:
        return len(self.levels)

    def shapes(self) -> list[tuple[int, int]]:
        return [(lv.height, lv.width) for lv in self.levels]


def level_sizes(height: int, width: int, depth: int) -> list[tuple[int, int]]:
    """Per-level (h, w) using ceiling halving."""
    out = [(height, width)]
    for _ in range(depth - 1):
        h, w = out[-1]
        out.append(((h + 1) // 2, (w + 1) // 2))
    return out


def max_depth(height: int, width: int) -> int:
    return int(math.floor(math.log2(min(height, width)))) + 1


def default_depth(height: int, width: int) -> int:
    """Depth 6 for 1024-class images, clamped to what the size allows."""
    return min(6, max_depth(height, width))


def _check_depth(img_h: int, img_w: int, depth: int) -> None:
    if depth < 1 or depth > max_depth(img_h, img_w):
        raise DepthError(
            f"depth {depth} outside 1..{max_depth(img_h, img_w)} for {img_h}x{img_w}"
        )


# --------------------------------------------------------------------------
# 1-D separable operators and exact transposes
# --------------------------------------------------------------------------


def _blur1d(arr: np.ndarray, axis: int) -> np.ndarray:
    """Edge-replicated 5-tap binomial blur along one axis."""
    a = np.moveaxis(arr, axis, 0)
    pad = np.concatenate([a[:1], a[:1], a, a[-1:], a[-1:]], axis=0)
    n = a.shape[0]
    out = np.zeros_like(a)
    for j, k in enumerate(KERNEL):
        out += k * pad[j : j + n]
    return np.moveaxis(out, 0, axis)


def _down1d(arr: np.ndarray, axis: int) -> np.ndarray:
    """Wrap-padded binomial blur then keep even-indexed samples."""
    a = np.moveaxis(arr, axis, 0)
    n = a.shape[0]
    pad = np.concatenate([a[-2:], a, a[:2]], axis=0) if n >= 2 else np.concatenate([a, a, a, a, a], axis=0)
    out = np.zeros_like(a)
    for j, k in enumerate(KERNEL):
        out += k * pad[j : j + n]
    return np.moveaxis(out[::2], 0, axis)


def _down1d_t(arr: np.ndarray, axis: int, n_fine: int) -> np.ndarray:
    """Exact transpose of :func:`_down1d` onto a fine axis of length n_fine."""
    z = np.moveaxis(arr, axis, 0)
    m = z.shape[0]
    if m != (n_fine + 1) // 2:
        raise SizeError(f"coarse length {m} does not pair with fine length {n_fine}")
    if n_fine == 1:
        return np.moveaxis(z.copy(), 0, axis)
    work = np.zeros((n_fine + 4,) + z.shape[1:], dtype=np.float64)
    for j, k in enumerate(KERNEL):
        work[j : j + 2 * m : 2] += k * z
    out = work[2 : 2 + n_fine].copy()
    out[-2] += work[0]
    out[-1] += work[1]
    out[0] += work[n_fine + 2]
    out[1] += work[n_fine + 3]
    return np.moveaxis(out, 0, axis)


@lru_cache(maxsize=256)
def _colsum1d(n_fine: int) -> np.ndarray:
    """Column sums of the 1-D downsample matrix (mass each fine sample sends up)."""
    m = (n_fine + 1) // 2
    sums = _down1d_t(np.ones(m), 0, n_fine)
    sums.setflags(write=False)
    return sums


def blur(arr: np.ndarray) -> np.ndarray:
    """Separable binomial blur of an (h, w, ...) array."""
    return _blur1d(_blur1d(arr, 0), 1)


def upsample_array(arr: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Column-normalized transpose of binomial decimation, per axis."""
    h, w = out_shape
    up0 = _down1d_t(arr, 0, h) / _colsum1d(h).reshape(-1, *([1] * (arr.ndim - 1)))
    up1 = _down1d_t(up0, 1, w) / _colsum1d(w).reshape(1, -1, *([1] * (arr.ndim - 2)))
    return up1


def upsample_adjoint_array(arr: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Exact transpose of :func:`upsample_array` (fine -> coarse)."""
    h, w = arr.shape[:2]
    ch, cw = out_shape
    if ch != (h + 1) // 2 or cw != (w + 1) // 2:
        raise SizeError(f"adjoint target {out_shape} does not pair with {(h, w)}")
    t1 = _down1d(arr / _colsum1d(w).reshape(1, -1, *([1] * (arr.ndim - 2))), 1)
    t0 = _down1d(t1 / _colsum1d(h).reshape(-1, *([1] * (arr.ndim - 1))), 0)
    return t0


@lru_cache(maxsize=128)
def _adjoint_mass(h: int, w: int) -> np.ndarray:
    """Weight an all-ones fine raster accumulates under the upsample adjoint."""
    mass = upsample_adjoint_array(np.ones((h, w)), ((h + 1) // 2, (w + 1) // 2))
    mass.setflags(write=False)
    return mass


def downsample_blur_array(arr: np.ndarray) -> np.ndarray:
    """Normalized adjoint of :func:`upsample_array`.

    Equals binomial blur + stride 2 except at raster borders, where the
    taps are renormalized so the operator stays an exact weighted average.
    """
    h, w = arr.shape[:2]
    coarse = upsample_adjoint_array(arr, ((h + 1) // 2, (w + 1) // 2))
    mass = _adjoint_mass(h, w)
    return coarse / mass.reshape(mass.shape + (1,) * (arr.ndim - 2))


# --------------------------------------------------------------------------
# Public image-level operations
# --------------------------------------------------------------------------


def _require_defined(img: Image, op: str) -> None:
    if img.has_missing():
        raise MissingDataError(f"{op} requires a MISSING-free image")


def downsample_blur(img: Image) -> Image:
    """Binomial blur then stride-2 decimation."""
    if min(img.height, img.width) < 2:
        raise SizeError("cannot downsample a raster with a side below 2")
    _require_defined(img, "downsample_blur")
    return Image(downsample_blur_array(img.data))


def upsample(img: Image, out_size: tuple[int, int] | None = None) -> Image:
    """Upsample to ``out_size`` (default exactly doubled)."""
    _require_defined(img, "upsample")
    if out_size is None:
        out_size = (img.height * 2, img.width * 2)
    return Image(upsample_array(img.data, out_size))


def build_gaussian(img: Image, depth: int) -> Pyramid:
    _check_depth(img.height, img.width, depth)
    _require_defined(img, "build_gaussian")
    levels = [img.copy()]
    for _ in range(depth - 1):
        levels.append(Image(downsample_blur_array(levels[-1].data)))
    return Pyramid(levels, PyramidKind.GAUSSIAN)


def build_laplacian(img: Image, depth: int) -> Pyramid:
    gauss = build_gaussian(img, depth)
    levels = []
    for l in range(depth - 1):
        parent = gauss.levels[l]
        up = upsample_array(gauss.levels[l + 1].data, (parent.height, parent.width))
        levels.append(Image(parent.data - up))
    levels.append(gauss.levels[-1])
    return Pyramid(levels, PyramidKind.LAPLACIAN)


def reconstruct(pyr: Pyramid) -> Image:
    """Collapse a Laplacian pyramid back to the full-resolution image."""
    if pyr.kind is not PyramidKind.LAPLACIAN:
        raise KindError("reconstruct expects a Laplacian pyramid")
    for lv in pyr.levels:
        if lv.has_missing():
            raise MissingDataError("reconstruct requires MISSING-free levels")
    acc = pyr.levels[-1].data
    for l in range(pyr.depth - 2, -1, -1):
        target = pyr.levels[l]
        acc = target.data + upsample_array(acc, (target.height, target.width))
    return Image(acc)


def laplacian_to_gaussian(pyr: Pyramid) -> Pyramid:
    """Reparameterize Laplacian levels into the Gaussian levels they encode."""
    if pyr.kind is not PyramidKind.LAPLACIAN:
        raise KindError("laplacian_to_gaussian expects a Laplacian pyramid")
    out: list[Image] = [pyr.levels[-1]]
    for l in range(pyr.depth - 2, -1, -1):
        target = pyr.levels[l]
        up = upsample_array(out[0].data, (target.height, target.width))
        out.insert(0, Image(target.data + up))
    return Pyramid(out, PyramidKind.GAUSSIAN)
