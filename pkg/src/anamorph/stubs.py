"""Stub denoiser and VAE backends for model-free end-to-end runs.

These keep the full synchronization loop executable (and testable to tight
tolerances) without any pretrained weights: targets give closed-form Euler
trajectories, the lossy VAE produces real nonzero residuals, and the noisy
variant exercises time travel.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .image import Image
from .pyramid import blur
from .sync import LatentTensor

_T_CLIP = 0.999


class IdentityVae:
    """Latents are images: encode/decode are exact copies at scale 1."""

    scale_factor = 1

    def __init__(self, channels: int = 3):
        self.latent_channels = channels

    def encode(self, x: Image) -> LatentTensor:
        return LatentTensor(x.data.copy(), 1)

    def decode(self, z: LatentTensor) -> Image:
        return Image(z.data.copy())


class LossyVae:
    """decode(encode(x)) flattens k x k blocks, killing high frequencies.

    The loss sits on the encoder, so residual correction has real work to
    do while latents stay image-shaped at scale 1.
    """

    scale_factor = 1

    def __init__(self, k: int = 2, channels: int = 3):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.latent_channels = channels

    def encode(self, x: Image) -> LatentTensor:
        k = self.k
        h, w, c = x.data.shape
        if h % k or w % k:
            raise ValueError(f"image size {h}x{w} not divisible by k={k}")
        pooled = x.data.reshape(h // k, k, w // k, k, c).mean(axis=(1, 3))
        flat = np.repeat(np.repeat(pooled, k, axis=0), k, axis=1)
        return LatentTensor(flat, 1)

    def decode(self, z: LatentTensor) -> Image:
        return Image(z.data.copy())


class TargetDenoiser:
    """Velocity field whose flow lines head straight to a fixed target.

    predict_clean recovers the target exactly at every t, so a single-view
    Euler run lands on the target no matter the step count.
    """

    def __init__(self, targets: dict[str, np.ndarray], default: np.ndarray | None = None):
        self.targets = {k: np.asarray(v, dtype=np.float64) for k, v in targets.items()}
        self.default = None if default is None else np.asarray(default, dtype=np.float64)

    def _target(self, z: LatentTensor, prompt_id: str) -> np.ndarray:
        tgt = self.targets.get(prompt_id, self.default)
        if tgt is None:
            tgt = np.zeros(z.shape())
        return np.broadcast_to(tgt, z.shape())

    def velocity(self, z: LatentTensor, t: float, prompt_id: str) -> LatentTensor:
        a = self._target(z, prompt_id)
        return LatentTensor((a - z.data) / (1.0 - min(t, _T_CLIP)), z.scale_factor)


class BlurDenoiser:
    """Velocity toward a blurred copy of the current latent (stability probe)."""

    def velocity(self, z: LatentTensor, t: float, prompt_id: str) -> LatentTensor:
        smoothed = blur(z.data)
        return LatentTensor((smoothed - z.data) / (1.0 - min(t, _T_CLIP)), z.scale_factor)


class NoisyTargetDenoiser(TargetDenoiser):
    """Target denoiser plus timestep-keyed pseudo-noise.

    The perturbation is a pure function of (t, prompt, shape), so repeated
    evaluation at one timestep is reproducible; it looks stochastic across
    the schedule without hiding any hidden state.
    """

    def __init__(self, targets, default=None, noise_scale: float = 0.1):
        super().__init__(targets, default)
        self.noise_scale = noise_scale

    def velocity(self, z: LatentTensor, t: float, prompt_id: str) -> LatentTensor:
        base = super().velocity(z, t, prompt_id)
        key = f"{round(t, 9)}|{prompt_id}".encode()
        seed = int.from_bytes(hashlib.sha256(key).digest()[:8], "little")
        eps = np.random.default_rng(seed).standard_normal(z.shape())
        return LatentTensor(base.data + self.noise_scale * eps, z.scale_factor)
