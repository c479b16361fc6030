"""Command-line surface: view generation, warping, and synchronized runs.

Exit codes are stable: 0 success, 2 scene/format parse errors, 3 geometry
errors, 4 backend handshake failures, 5 mid-run backend errors. Human
diagnostics go to stderr; with --quiet, stdout carries only machine
output (paths and the manifest location).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import shlex
import sys
import time
from pathlib import Path

import numpy as np

from .blend import DEFAULT_ALPHA
from .bridge import BridgeBackend
from .errors import AnamorphError, BackendError, FormatError, GeometryError
from .image import Image, read_png, write_png
from .pyramid import Pyramid, PyramidKind, build_gaussian, default_depth, reconstruct
from .stubs import BlurDenoiser, IdentityVae, LossyVae, NoisyTargetDenoiser, TargetDenoiser
from .sync import Priority, SyncConfig, TimeTravel, build_view_bundle, run_sync
from .uvmap import compute_lod, read_uvm, write_uvm
from .views import load_scene, parse_key_values, render_validation, trace_view
from .warp import forward_warp, inverse_warp

EXIT_PARSE = 2
EXIT_GEOMETRY = 3
EXIT_HANDSHAKE = 4
EXIT_BACKEND = 5


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


# --------------------------------------------------------------------------
# uvgen
# --------------------------------------------------------------------------


def cmd_uvgen(args) -> int:
    try:
        scene = load_scene(args.scene)
    except (FormatError, OSError) as exc:
        return _fail(EXIT_PARSE, f"scene: {exc}")
    try:
        uvmap, hook = trace_view(scene, args.size, threads=args.threads)
    except GeometryError as exc:
        return _fail(EXIT_GEOMETRY, f"geometry: {exc}")
    write_uvm(uvmap, args.out)
    if not args.quiet:
        print(args.out)
    if args.render:
        canonical = read_png(args.render)
        out = hook(canonical)
        write_png(args.render_out or "render.png", out, bitdepth=args.bitdepth)
        if not args.quiet:
            print(args.render_out or "render.png")
    return 0


# --------------------------------------------------------------------------
# warp
# --------------------------------------------------------------------------


def cmd_warp(args) -> int:
    try:
        uvmap = read_uvm(args.map)
        source = read_png(args.infile)
    except (AnamorphError, OSError) as exc:
        return _fail(EXIT_PARSE, str(exc))

    if args.inverse:
        canonical_size = args.canonical_size or max(uvmap.height, uvmap.width)
        depth = args.depth or default_depth(canonical_size, canonical_size)
        lod = compute_lod(uvmap, canonical_size)
        try:
            masked = inverse_warp(source, uvmap, lod, depth, canonical_size)
        except AnamorphError as exc:
            return _fail(EXIT_PARSE, str(exc))
        # preview: zero-fill undefined detail, reconstruct
        filled = [
            Image(np.where(mk[:, :, None], lv.data, 0.0))
            for lv, mk in zip(masked.levels, masked.masks)
        ]
        preview = reconstruct(Pyramid(filled, PyramidKind.LAPLACIAN))
        write_png(args.out, preview, bitdepth=args.bitdepth)
        if args.masks_out:
            for l, mask in enumerate(masked.masks):
                mask_img = Image(mask[:, :, None] * 2.0 - 1.0)
                write_png(f"{args.masks_out}_level{l}.png", mask_img, bitdepth=8)
    else:
        if source.height != source.width:
            return _fail(EXIT_PARSE, "forward warp expects a square canonical image")
        depth = args.depth or default_depth(source.height, source.width)
        lod = compute_lod(uvmap, source.width)
        try:
            out = forward_warp(build_gaussian(source, depth), uvmap, lod, args.mode)
        except AnamorphError as exc:
            return _fail(EXIT_PARSE, str(exc))
        write_png(args.out, out, bitdepth=args.bitdepth)
    if not args.quiet:
        print(args.out)
    return 0


# --------------------------------------------------------------------------
# sync
# --------------------------------------------------------------------------

_CONFIG_KEYS = {
    "steps": int,
    "cfg_scale": float,
    "alpha": float,
    "seed": int,
    "warp_mode": str,
    "pyramid_depth": int,
    "canonical_size": int,
    "tt_start": float,
    "tt_end": float,
    "tt_repeats": int,
    "tt_renoise": int,
    "priority_view": int,
    "priority_last_frac": float,
}


def _load_sync_config(path: str | None) -> dict:
    values: dict = {}
    if path:
        pairs = parse_key_values(Path(path).read_text(encoding="utf-8"))
        for key, raw in pairs.items():
            if key not in _CONFIG_KEYS:
                raise FormatError(f"unknown config key {key!r}")
            values[key] = _CONFIG_KEYS[key](raw)
    return values


def _build_config(values: dict) -> SyncConfig:
    return SyncConfig(
        steps=values.get("steps", 30),
        cfg_scale=values.get("cfg_scale", 0.0),
        alpha=values.get("alpha", DEFAULT_ALPHA),
        seed=values.get("seed", 0),
        pyramid_depth=values.get("pyramid_depth"),
        warp_mode=values.get("warp_mode", "nearest"),
        time_travel=TimeTravel(
            start_frac=values.get("tt_start", 0.2),
            end_frac=values.get("tt_end", 0.8),
            repeats=values.get("tt_repeats", 1),
            renoise=bool(values.get("tt_renoise", 1)),
        ),
        priority=Priority(
            view_index=values.get("priority_view"),
            last_frac=values.get("priority_last_frac", 0.2),
        ),
        schedule=tuple(values["schedule"]) if "schedule" in values else None,
    )


def _parse_view_arg(spec: str) -> tuple[str, str, str]:
    parts = spec.split(":")
    if len(parts) == 1:
        return parts[0], "", ""
    if len(parts) == 2:
        return parts[0], parts[1], ""
    return parts[0], parts[1], ":".join(parts[2:])


def _make_stub_backend(kind: str, vae_spec: str, prompts: list[str], negatives: list[str]):
    if vae_spec == "identity":
        vae = IdentityVae(3)
    elif vae_spec.startswith("lossy"):
        k = int(vae_spec.split(":", 1)[1]) if ":" in vae_spec else 2
        vae = LossyVae(k, 3)
    else:
        raise FormatError(f"unknown vae spec {vae_spec!r}")

    if kind == "blur":
        return BlurDenoiser(), vae

    targets: dict[str, np.ndarray] = {}
    for prompt in {p for p in prompts + negatives if p}:
        path = Path(prompt)
        if not path.exists():
            raise FormatError(
                f"stub:{kind} interprets prompts as target image paths; {prompt!r} not found"
            )
        targets[prompt] = vae.encode(read_png(str(path))).data
    cls = NoisyTargetDenoiser if kind == "noisy" else TargetDenoiser
    return cls(targets), vae


def cmd_sync(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.replay:
        manifest = json.loads(Path(args.replay).read_text(encoding="utf-8"))
        values = manifest["config"]
        view_specs = [
            (v["map"], v["prompt"], v.get("negative", "")) for v in manifest["views"]
        ]
        backend_spec = manifest["backend"]
        vae_spec = manifest.get("vae", "identity")
    else:
        if not args.views:
            return _fail(EXIT_PARSE, "sync needs --views or --replay")
        try:
            values = _load_sync_config(args.config)
        except (AnamorphError, OSError) as exc:
            return _fail(EXIT_PARSE, f"config: {exc}")
        view_specs = [_parse_view_arg(v) for v in args.views]
        backend_spec = args.backend
        vae_spec = args.vae
    if args.seed is not None:
        values["seed"] = args.seed

    try:
        maps = [read_uvm(path) for path, _, _ in view_specs]
    except (AnamorphError, OSError) as exc:
        return _fail(EXIT_PARSE, f"views: {exc}")
    prompts = [p for _, p, _ in view_specs]
    negatives = [n for _, _, n in view_specs]

    bridge = None
    try:
        if backend_spec.startswith("stub:"):
            denoiser, vae = _make_stub_backend(
                backend_spec.split(":", 1)[1], vae_spec, prompts, negatives
            )
        elif backend_spec.startswith("bridge:tcp://"):
            host, _, port = backend_spec[len("bridge:tcp://"):].partition(":")
            bridge = BridgeBackend.connect_tcp(host, int(port))
            denoiser = vae = bridge
        elif backend_spec.startswith("bridge:cmd:"):
            bridge = BridgeBackend.spawn(shlex.split(backend_spec[len("bridge:cmd:"):]))
            denoiser = vae = bridge
        else:
            return _fail(EXIT_PARSE, f"unknown backend {backend_spec!r}")
    except FormatError as exc:
        return _fail(EXIT_PARSE, str(exc))
    except BackendError as exc:
        return _fail(EXIT_HANDSHAKE, f"handshake: {exc}")

    try:
        canonical_size = values.get("canonical_size", maps[0].width)
        bundle = build_view_bundle(
            maps, prompts, canonical_size, vae.scale_factor, negatives
        )
        if bridge is not None and bridge.schedule and "steps" not in values:
            values["schedule"] = bridge.schedule
        config = _build_config(values)

        timings: list[dict] = []

        def on_step(info: dict) -> None:
            timings.append({k: info[k] for k in ("step", "t", "repeats", "priority", "seconds") if k in info})
            if not args.quiet:
                print(f"step {info['step']:3d} t={info['t']:.3f} {info['seconds']:.2f}s", file=sys.stderr)

        started = time.perf_counter()
        images = run_sync(bundle, denoiser, vae, config, on_step=on_step)
        elapsed = time.perf_counter() - started
    except BackendError as exc:
        if bridge is not None:
            bridge.close()
        return _fail(EXIT_BACKEND, f"backend failed mid-run: {exc}")
    except AnamorphError as exc:
        if bridge is not None:
            bridge.close()
        return _fail(EXIT_PARSE, str(exc))
    finally:
        if bridge is not None:
            bridge.close()

    outputs = []
    for i, img in enumerate(images):
        path = out_dir / f"view_{i:02d}.png"
        write_png(str(path), img, bitdepth=args.bitdepth)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        outputs.append({"path": path.name, "sha256": digest})
        if not args.quiet:
            print(path)

    manifest = {
        "config": {**values, "seed": config.seed},
        "views": [
            {"map": m, "prompt": p, "negative": n} for m, p, n in view_specs
        ],
        "backend": backend_spec,
        "vae": vae_spec,
        "canonical_size": canonical_size,
        "outputs": outputs,
        "timings": timings,
        "elapsed_seconds": elapsed,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    print(manifest_path)
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anamorph")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="machine output only on stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("uvgen", help="trace a scene into a UVM1 map", parents=[common])
    p.add_argument("--scene", required=True)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--render", default=None, help="canonical PNG for a validation render")
    p.add_argument("--render-out", default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--bitdepth", type=int, choices=(8, 16), default=16)
    p.set_defaults(func=cmd_uvgen)

    p = sub.add_parser("warp", help="forward or inverse warp an image", parents=[common])
    p.add_argument("--map", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("nearest", "trilinear"), default="nearest")
    p.add_argument("--inverse", action="store_true")
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--canonical-size", type=int, default=None)
    p.add_argument("--masks-out", default=None, help="prefix for per-level mask PNGs")
    p.add_argument("--bitdepth", type=int, choices=(8, 16), default=16)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("sync", help="run the synchronized denoising loop", parents=[common])
    p.add_argument("--config", default=None, help="flat key = value config file")
    p.add_argument("--views", nargs="*", default=None, metavar="MAP.uvm:PROMPT[:NEGATIVE]")
    p.add_argument("--backend", default="stub:blur",
                   help="stub:target | stub:noisy | stub:blur | bridge:tcp://H:P | bridge:cmd:CMD")
    p.add_argument("--vae", default="identity", help="identity | lossy[:K] (stub backends)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--replay", default=None, help="manifest.json from a previous run")
    p.add_argument("--bitdepth", type=int, choices=(8, 16), default=16)
    p.set_defaults(func=cmd_sync)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
