import numpy as np
import pytest

from anamorph.image import Image
from anamorph.uvmap import UvMap


@pytest.fixture
def rng():
    return np.random.default_rng(20250808)


def rand_image(rng, h, w, c=3):
    return Image(rng.uniform(-1.0, 1.0, (h, w, c)))


def scaling_map(size: int, s: float) -> UvMap:
    """Uniform s-times minifying map; pixels mapping past the square are invalid."""
    centers = (np.arange(size) + 0.5) / size
    u = np.broadcast_to(s * centers[None, :], (size, size))
    v = np.broadcast_to(s * centers[:, None], (size, size))
    valid = (u <= 1.0) & (v <= 1.0)
    return UvMap(np.where(valid, u, 0.0), np.where(valid, v, 0.0), valid)


def smooth_image(size: int, channels: int = 3) -> Image:
    yy, xx = np.mgrid[0:size, 0:size] / size
    data = np.zeros((size, size, channels))
    waves = [
        0.6 * np.sin(2 * np.pi * xx) * np.cos(2 * np.pi * yy),
        0.5 * np.cos(4 * np.pi * (xx + yy)),
        0.4 * np.sin(2 * np.pi * (xx - yy)),
        0.3 * np.cos(2 * np.pi * xx),
    ]
    for c in range(channels):
        data[:, :, c] = waves[c % len(waves)]
    return Image(data)
