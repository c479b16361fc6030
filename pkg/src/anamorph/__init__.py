"""Frequency-aware image warping and multi-view denoising synchronization."""

from .blend import blend_images, blend_pyramids, vavg
from .image import Image, constant_image, read_blob, read_png, with_missing, write_blob, write_png
from .pyramid import (
    Kernel,
    Pyramid,
    PyramidKind,
    build_gaussian,
    build_laplacian,
    default_depth,
    downsample_blur,
    laplacian_to_gaussian,
    reconstruct,
    upsample,
)
from .sync import (
    LatentTensor,
    Priority,
    SyncConfig,
    TimeTravel,
    ViewBundle,
    aggregate_views,
    build_view_bundle,
    cfg_velocity,
    denoising_step,
    plain_euler,
    predict_clean,
    renoise,
    run_sync,
)
from .uvmap import LodMap, UvMap, compute_lod, downscale_uvmap, identity_map, read_uvm, write_uvm
from .views import ViewScene, load_scene, make_2d_map, render_validation, trace_view
from .warp import MaskedPyramid, forward_warp, impute_nearest, inverse_warp, transport

__all__ = [
    "Image",
    "Kernel",
    "LatentTensor",
    "LodMap",
    "MaskedPyramid",
    "Priority",
    "Pyramid",
    "PyramidKind",
    "SyncConfig",
    "TimeTravel",
    "UvMap",
    "ViewBundle",
    "ViewScene",
    "aggregate_views",
    "blend_images",
    "blend_pyramids",
    "build_gaussian",
    "build_laplacian",
    "build_view_bundle",
    "cfg_velocity",
    "compute_lod",
    "constant_image",
    "default_depth",
    "denoising_step",
    "downsample_blur",
    "downscale_uvmap",
    "forward_warp",
    "identity_map",
    "impute_nearest",
    "inverse_warp",
    "laplacian_to_gaussian",
    "load_scene",
    "make_2d_map",
    "plain_euler",
    "predict_clean",
    "read_blob",
    "read_png",
    "read_uvm",
    "reconstruct",
    "render_validation",
    "renoise",
    "run_sync",
    "trace_view",
    "transport",
    "upsample",
    "vavg",
    "with_missing",
    "write_blob",
    "write_png",
    "write_uvm",
]
