"""Masked pyramid blending across partially covering views.

Per level and pixel, the defined samples are combined by interpolating
between the plain average and a value-weighted average that favors
extreme values:

    avg  = sum(x_i) / n
    vavg = sum(|x_i| x_i) / sum(|x_i|)      (0 when the denominator is 0)
    out  = avg + alpha * (vavg - avg)

Mask boundaries get a one-pixel feather: a defined sample whose 4-neighbor
is undefined weighs half as much as interior samples. The feather acts on
the relative blending weights, so a pixel covered by a single view keeps
its value exactly regardless of the feather.
"""

from __future__ import annotations

import numpy as np

from .errors import CoverageError, SizeError
from .image import Image
from .pyramid import Pyramid, PyramidKind
from .warp import MaskedPyramid

DEFAULT_ALPHA = 0.375  # midpoint of the working range [0.25, 0.5]


def vavg(values) -> float:
    """Value-weighted average of a non-empty sequence in [-1, 1]."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("vavg needs at least one value")
    denom = np.abs(arr).sum()
    if denom == 0.0:
        return 0.0
    return float((np.abs(arr) * arr).sum() / denom)


def _feather_weights(mask: np.ndarray) -> np.ndarray:
    """1.0 on interior defined cells, 0.5 on defined cells that touch an
    undefined 4-neighbor, 0.0 on undefined cells."""
    inner = mask.copy()
    inner[:-1, :] &= mask[1:, :]
    inner[1:, :] &= mask[:-1, :]
    inner[:, :-1] &= mask[:, 1:]
    inner[:, 1:] &= mask[:, :-1]
    return np.where(inner, 1.0, np.where(mask, 0.5, 0.0))


def blend_pyramids(pyrs: list[MaskedPyramid], alpha: float = DEFAULT_ALPHA) -> Pyramid:
    """Blend masked Laplacian pyramids into one fully defined pyramid.

    Uncovered pixels contribute zero detail; the coarsest level must be
    covered by at least one input everywhere.
    """
    if not pyrs:
        raise ValueError("need at least one pyramid")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    depth = pyrs[0].depth
    shapes = [(lv.height, lv.width) for lv in pyrs[0].levels]
    for p in pyrs:
        if p.depth != depth or [(lv.height, lv.width) for lv in p.levels] != shapes:
            raise SizeError("pyramids must share depth and level sizes")

    base_cover = np.zeros(shapes[-1], dtype=bool)
    for p in pyrs:
        base_cover |= p.masks[-1]
    if not base_cover.all():
        raise CoverageError("coarsest level must be covered by at least one view")

    out_levels: list[Image] = []
    for l in range(depth):
        vals = np.stack(
            [np.where(p.masks[l][:, :, None], p.levels[l].data, 0.0) for p in pyrs]
        )
        if l < depth - 1:
            weights = np.stack([_feather_weights(p.masks[l]) for p in pyrs])
        else:
            weights = np.stack([p.masks[l].astype(np.float64) for p in pyrs])
        weights = weights[:, :, :, None]

        wsum = weights.sum(axis=0)
        covered = wsum > 0.0
        avg = np.zeros_like(vals[0])
        np.divide((weights * vals).sum(axis=0), wsum, out=avg, where=covered)

        mag = np.abs(vals)
        vsum = (weights * mag).sum(axis=0)
        vav = np.zeros_like(avg)
        np.divide((weights * mag * vals).sum(axis=0), vsum, out=vav, where=vsum > 0.0)
        # all-zero samples: vavg degenerates to 0, which equals avg there

        mixed = avg + alpha * (vav - avg)
        out_levels.append(Image(np.where(covered, mixed, 0.0)))
    return Pyramid(out_levels, PyramidKind.LAPLACIAN)


def blend_images(imgs: list) -> "Image | np.ndarray":
    """Per-pixel mean over defined samples; pixels nobody defines become 0.

    Accepts Images or raw (h, w, c) arrays with NaN pixels (the latter for
    latent-resolution tensors whose channel count exceeds image limits);
    the return type matches the inputs.
    """
    if not imgs:
        raise ValueError("need at least one image")
    as_image = isinstance(imgs[0], Image)
    arrays = [im.data if isinstance(im, Image) else np.asarray(im, float) for im in imgs]
    shape = arrays[0].shape
    for arr in arrays:
        if arr.shape != shape:
            raise SizeError("images must share dimensions")
    stack = np.stack(arrays)
    defined = ~np.isnan(stack[:, :, :, 0])
    counts = defined.sum(axis=0)[:, :, None]
    sums = np.where(defined[:, :, :, None], stack, 0.0).sum(axis=0)
    out = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return Image(out) if as_image else out
