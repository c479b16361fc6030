"""Multi-view denoising synchronization for latent rectified-flow models.

The loop keeps one noisy latent per view. Every step it asks the denoiser
for a guided velocity, extrapolates the clean latent, and replaces each
view's clean estimate with a consensus built in image space: decode,
inverse-warp every view into a canonical Laplacian pyramid, blend the
pyramids, warp the blended canonical back through each view, and
re-encode. A first-order residual (latent minus its decode/encode round
trip) rides along at latent resolution and is added back after warping,
so an imperfect VAE cannot wash out the value range. The Euler step then
advances toward the synchronized estimate.

Two schedule refinements: steps inside a configurable window may repeat,
re-entering the interpolation path at the same timestep with fresh noise
("time travel", segment size 1), and a chosen view can own the final
fraction of steps, freezing the rest so its details dominate.

Backends are pluggable: anything with ``velocity(z, t, prompt_id)`` is a
denoiser, anything with ``encode``/``decode`` plus ``scale_factor`` and
``latent_channels`` is a VAE. In-repo stubs and a wire-protocol bridge
both satisfy these interfaces.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, runtime_checkable

import numpy as np

from .blend import DEFAULT_ALPHA, blend_images, blend_pyramids
from .errors import SizeError, TimeError
from .image import Image
from .pyramid import Pyramid, PyramidKind, build_gaussian, default_depth, reconstruct
from .uvmap import LodMap, UvMap, compute_lod, downscale_uvmap, is_identity_map
from .warp import forward_warp, gather_nearest, inverse_warp, scatter_nearest


@dataclass(frozen=True)
class LatentTensor:
    """Latent grid samples, shape (height, width, channels)."""

    data: np.ndarray
    scale_factor: int = 1

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise SizeError(f"latent data must be 3-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("latent samples must be finite")
        if self.scale_factor < 1:
            raise ValueError("scale_factor must be a positive integer")
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

    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@runtime_checkable
class Denoiser(Protocol):
    def velocity(self, z: LatentTensor, t: float, prompt_id: str) -> LatentTensor: ...


@runtime_checkable
class Vae(Protocol):
    scale_factor: int
    latent_channels: int

    def decode(self, z: LatentTensor) -> Image: ...

    def encode(self, x: Image) -> LatentTensor: ...


@dataclass(frozen=True)
class TimeTravel:
    start_frac: float = 0.2
    end_frac: float = 0.8
    repeats: int = 1
    renoise: bool = True  # False repeats steps without re-noising (determinism hook)

    def __post_init__(self):
        if not 0.0 <= self.start_frac < self.end_frac <= 1.0:
            raise ValueError("need 0 <= start_frac < end_frac <= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


@dataclass(frozen=True)
class Priority:
    view_index: int | None = None
    last_frac: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.last_frac < 1.0:
            raise ValueError("last_frac must lie in [0, 1)")


@dataclass(frozen=True)
class SyncConfig:
    steps: int = 30
    cfg_scale: float = 0.0
    alpha: float = DEFAULT_ALPHA
    seed: int = 0
    pyramid_depth: int | None = None
    warp_mode: str = "nearest"
    time_travel: TimeTravel = field(default_factory=TimeTravel)
    priority: Priority = field(default_factory=Priority)
    schedule: tuple[float, ...] | None = None  # optional T+1 boundaries, 0 .. 1

    def boundaries(self) -> list[float]:
        if self.schedule is not None:
            sched = list(self.schedule)
            if len(sched) < 2 or sched[0] != 0.0 or sched[-1] != 1.0:
                raise ValueError("schedule must run from 0.0 to 1.0")
            if any(b <= a for a, b in zip(sched, sched[1:])):
                raise ValueError("schedule must be strictly increasing")
            return sched
        return [k / self.steps for k in range(self.steps + 1)]


@dataclass(frozen=True)
class ViewSpec:
    uvmap: UvMap
    lod: LodMap
    latent_map: UvMap
    prompt_id: str
    negative_prompt_id: str = ""


@dataclass(frozen=True)
class ViewBundle:
    canonical_size: int
    scale_factor: int
    views: list[ViewSpec]

    @property
    def count(self) -> int:
        return len(self.views)


def build_view_bundle(
    maps: list[UvMap],
    prompts: list[str],
    canonical_size: int,
    scale_factor: int = 1,
    negatives: list[str] | None = None,
) -> ViewBundle:
    """Compute LOD and latent-resolution maps for a set of views."""
    if len(maps) != len(prompts) or not maps:
        raise ValueError("need one prompt per view")
    negatives = negatives or [""] * len(maps)
    if canonical_size % scale_factor:
        raise SizeError("scale_factor must divide the canonical size")
    views = []
    for m, prompt, neg in zip(maps, prompts, negatives):
        if m.height % scale_factor or m.width % scale_factor:
            raise SizeError("scale_factor must divide every view resolution")
        views.append(
            ViewSpec(
                uvmap=m,
                lod=compute_lod(m, canonical_size),
                latent_map=downscale_uvmap(m, scale_factor) if scale_factor > 1 else m,
                prompt_id=prompt,
                negative_prompt_id=neg,
            )
        )
    return ViewBundle(canonical_size, scale_factor, views)


# --------------------------------------------------------------------------
# Flow-matching primitives
# --------------------------------------------------------------------------


def predict_clean(z: LatentTensor, t: float, u: LatentTensor) -> LatentTensor:
    """One-step extrapolation of the clean latent: z + u * (1 - t)."""
    if not 0.0 <= t < 1.0:
        raise TimeError(f"t={t} outside [0, 1)")
    if u.shape() != z.shape():
        raise SizeError("velocity shape must match the latent")
    return LatentTensor(z.data + u.data * (1.0 - t), z.scale_factor)


def cfg_velocity(cond: LatentTensor, uncond: LatentTensor, omega: float) -> LatentTensor:
    """Guided velocity: (1 + omega) * conditional - omega * unconditional."""
    if cond.shape() != uncond.shape():
        raise SizeError("conditional and unconditional shapes differ")
    return LatentTensor(
        (1.0 + omega) * cond.data - omega * uncond.data, cond.scale_factor
    )


def denoising_step(
    z_clean_hat: LatentTensor, z_t: LatentTensor, t: float, t_next: float
) -> LatentTensor:
    """Euler step toward the clean estimate over [t, t_next]."""
    if not 0.0 <= t < t_next <= 1.0:
        raise TimeError(f"need 0 <= t < t_next <= 1, got ({t}, {t_next})")
    if z_clean_hat.shape() != z_t.shape():
        raise SizeError("clean estimate shape must match the latent")
    step = (t_next - t) / (1.0 - t)
    return LatentTensor(z_t.data + (z_clean_hat.data - z_t.data) * step, z_t.scale_factor)


def renoise(z_clean_hat: LatentTensor, t_target: float, rng: np.random.Generator) -> LatentTensor:
    """Re-enter the interpolation path at t_target with fresh noise."""
    if not 0.0 <= t_target < 1.0:
        raise TimeError(f"t_target={t_target} outside [0, 1)")
    eps = rng.standard_normal(z_clean_hat.shape())
    return LatentTensor(
        (1.0 - t_target) * eps + t_target * z_clean_hat.data, z_clean_hat.scale_factor
    )


# --------------------------------------------------------------------------
# View aggregation (the image-space consensus)
# --------------------------------------------------------------------------


def aggregate_views(
    clean_latents: list[LatentTensor],
    residuals: list[LatentTensor] | None,
    bundle: ViewBundle,
    vae: Vae,
    alpha: float = DEFAULT_ALPHA,
    mode: str = "nearest",
    depth: int | None = None,
    allow_identity_shortcut: bool = True,
    _decoded: list[Image] | None = None,
) -> list[LatentTensor]:
    """Synchronize per-view clean latents through the canonical space.

    With a single identity view the whole chain is algebraically the
    identity (the residual cancels the decode/encode round trip exactly),
    so that case returns its input unchanged unless the shortcut is
    disabled.
    """
    n = bundle.count
    if len(clean_latents) != n:
        raise SizeError("one clean latent per view required")
    if n == 1 and allow_identity_shortcut and is_identity_map(bundle.views[0].uvmap):
        return [clean_latents[0]]

    size = bundle.canonical_size
    depth = depth or default_depth(size, size)

    decoded = _decoded or [vae.decode(z) for z in clean_latents]
    for img, view in zip(decoded, bundle.views):
        if (img.height, img.width) != (view.uvmap.height, view.uvmap.width):
            raise SizeError("decoded image must match its view resolution")
    if residuals is None:
        residuals = [
            LatentTensor(z.data - vae.encode(x).data, z.scale_factor)
            for z, x in zip(clean_latents, decoded)
        ]

    # image-space consensus through masked pyramid blending
    pyramids = [
        inverse_warp(img, view.uvmap, view.lod, depth, size)
        for img, view in zip(decoded, bundle.views)
    ]
    canonical = reconstruct(blend_pyramids(pyramids, alpha))

    # latent-space residual consensus (single level, masked mean)
    latent_size = size // bundle.scale_factor
    residual_fields = [
        scatter_nearest(res.data, view.latent_map, latent_size)
        for res, view in zip(residuals, bundle.views)
    ]
    residual_canonical = blend_images(residual_fields)

    gaussian = build_gaussian(canonical, depth)
    outputs = []
    for z, img, res, view in zip(clean_latents, decoded, residuals, bundle.views):
        warped = forward_warp(gaussian, view.uvmap, view.lod, mode)
        # target pixels outside this view's coverage keep their own content
        filled = Image(
            np.where(warped.missing_mask()[:, :, None], img.data, warped.data)
        )
        encoded = vae.encode(filled)
        res_back = gather_nearest(residual_canonical, view.latent_map, fill=res.data)
        outputs.append(LatentTensor(encoded.data + res_back, z.scale_factor))
    return outputs


# --------------------------------------------------------------------------
# The synchronized sampling loop
# --------------------------------------------------------------------------

StepCallback = Callable[[dict], None]


def run_sync(
    bundle: ViewBundle,
    denoiser: Denoiser,
    vae: Vae,
    config: SyncConfig,
    on_step: StepCallback | None = None,
) -> list[Image]:
    """Run the full synchronized denoising loop; returns one image per view."""
    sched = config.boundaries()
    steps = len(sched) - 1
    rng = np.random.default_rng(config.seed)
    size = bundle.canonical_size
    depth = config.pyramid_depth or default_depth(size, size)

    latents: list[LatentTensor] = []
    for view in bundle.views:
        h = view.uvmap.height // bundle.scale_factor
        w = view.uvmap.width // bundle.scale_factor
        latents.append(
            LatentTensor(
                rng.standard_normal((h, w, vae.latent_channels)), bundle.scale_factor
            )
        )

    pv = config.priority.view_index
    if pv is not None and not 0 <= pv < bundle.count:
        raise ValueError(f"priority view {pv} out of range")
    priority_from = steps - int(np.ceil(config.priority.last_frac * steps))

    for k in range(steps):
        t, t_next = sched[k], sched[k + 1]
        frac = k / steps
        started = time.perf_counter()
        in_window = config.time_travel.start_frac <= frac < config.time_travel.end_frac
        repeats = config.time_travel.repeats if in_window else 1
        prioritized = pv is not None and k >= priority_from

        step_info: dict = {"step": k, "t": t, "repeats": repeats, "priority": prioritized}

        for rep in range(repeats):
            if prioritized:
                active = [pv]
            else:
                active = list(range(bundle.count))

            cleans: dict[int, LatentTensor] = {}
            for i in active:
                view = bundle.views[i]
                cond = denoiser.velocity(latents[i], t, view.prompt_id)
                uncond = denoiser.velocity(latents[i], t, view.negative_prompt_id)
                guided = cfg_velocity(cond, uncond, config.cfg_scale)
                cleans[i] = predict_clean(latents[i], t, guided)

            if prioritized:
                aggregated = {pv: cleans[pv]}
            else:
                decoded = [vae.decode(cleans[i]) for i in active]
                residuals = [
                    LatentTensor(
                        cleans[i].data - vae.encode(decoded[j]).data,
                        cleans[i].scale_factor,
                    )
                    for j, i in enumerate(active)
                ]
                step_info["residual_max"] = max(
                    float(np.abs(r.data).max()) for r in residuals
                )
                merged = aggregate_views(
                    [cleans[i] for i in active],
                    residuals,
                    bundle,
                    vae,
                    config.alpha,
                    config.warp_mode,
                    depth,
                    _decoded=decoded,
                )
                aggregated = dict(zip(active, merged))

            if rep < repeats - 1:
                if config.time_travel.renoise:
                    for i in active:
                        latents[i] = renoise(aggregated[i], t, rng)
                # with renoise disabled the state is reused so repeated
                # segments are idempotent for deterministic backends
            else:
                for i in active:
                    latents[i] = denoising_step(aggregated[i], latents[i], t, t_next)

        if on_step is not None:
            step_info["seconds"] = time.perf_counter() - started
            on_step(step_info)

    return [vae.decode(z) for z in latents]


def plain_euler(
    denoiser: Denoiser,
    z0: LatentTensor,
    prompt_id: str,
    negative_prompt_id: str,
    cfg_scale: float,
    boundaries: list[float],
) -> LatentTensor:
    """Reference single-latent Euler sampler (no synchronization)."""
    z = z0
    for t, t_next in zip(boundaries, boundaries[1:]):
        cond = denoiser.velocity(z, t, prompt_id)
        uncond = denoiser.velocity(z, t, negative_prompt_id)
        z = denoising_step(predict_clean(z, t, cfg_velocity(cond, uncond, cfg_scale)), z, t, t_next)
    return z
