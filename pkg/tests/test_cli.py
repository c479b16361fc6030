import hashlib
import json
import sys

import numpy as np
import pytest

from anamorph.cli import main
from anamorph.image import read_png, write_png
from anamorph.pyramid import Pyramid, PyramidKind, build_gaussian, reconstruct
from anamorph.uvmap import compute_lod, identity_map, read_uvm, write_uvm
from anamorph.views import ViewScene, trace_view
from anamorph.warp import forward_warp, inverse_warp, transport
from conftest import smooth_image


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "flip.scene").write_text("kind = flip\noutput_resolution = 64\n")
    (tmp_path / "cone.scene").write_text(
        "kind = cone\nbase_radius = 0.3\napex_half_angle = 30\noutput_resolution = 64\n"
    )
    write_png(str(tmp_path / "canonical.png"), smooth_image(64))
    write_uvm(identity_map(64), str(tmp_path / "ident.uvm"))
    return tmp_path


class TestUvgen:
    def test_flip_involution(self, workspace):
        out = workspace / "flip.uvm"
        assert main(["uvgen", "--scene", str(workspace / "flip.scene"), "--out", str(out), "--quiet"]) == 0
        m = read_uvm(str(out))
        img = read_png(str(workspace / "canonical.png"))
        lod = compute_lod(m, 64)
        once = forward_warp(build_gaussian(img, 4), m, lod)
        twice = forward_warp(build_gaussian(once, 4), m, lod)
        assert np.array_equal(twice.data, img.data)

    def test_cone_exterior_identity_and_render(self, workspace):
        out = workspace / "cone.uvm"
        render = workspace / "render.png"
        code = main(
            [
                "uvgen",
                "--scene",
                str(workspace / "cone.scene"),
                "--out",
                str(out),
                "--render",
                str(workspace / "canonical.png"),
                "--render-out",
                str(render),
                "--quiet",
            ]
        )
        assert code == 0 and render.exists()
        m = read_uvm(str(out))
        centers = (np.arange(64) + 0.5) / 64
        px = np.broadcast_to(centers[None, :], (64, 64))
        py = np.broadcast_to(centers[:, None], (64, 64))
        outside = np.hypot(px - 0.5, py - 0.5) >= 0.3
        assert np.abs(m.u[outside] - px[outside]).max() <= 1e-6

    def test_byte_determinism(self, workspace):
        a, b = workspace / "a.uvm", workspace / "b.uvm"
        for out, threads in ((a, "1"), (b, "8")):
            main(
                [
                    "uvgen",
                    "--scene",
                    str(workspace / "cone.scene"),
                    "--out",
                    str(out),
                    "--threads",
                    threads,
                    "--quiet",
                ]
            )
        assert a.read_bytes() == b.read_bytes()

    def test_scene_parse_error_exit2(self, workspace):
        bad = workspace / "bad.scene"
        bad.write_text("kind = cone\nbase_radius = huge\n")
        assert main(["uvgen", "--scene", str(bad), "--out", str(workspace / "x.uvm")]) == 2

    def test_geometry_error_exit3(self, workspace):
        bad = workspace / "degenerate.scene"
        bad.write_text("kind = cone\napex_half_angle = 45\n")
        assert main(["uvgen", "--scene", str(bad), "--out", str(workspace / "x.uvm")]) == 3


class TestWarpCommand:
    def test_identity_round_trip(self, workspace):
        out = workspace / "warped.png"
        assert (
            main(
                [
                    "warp",
                    "--map",
                    str(workspace / "ident.uvm"),
                    "--in",
                    str(workspace / "canonical.png"),
                    "--out",
                    str(out),
                    "--quiet",
                ]
            )
            == 0
        )
        assert np.array_equal(
            read_png(str(out)).data, read_png(str(workspace / "canonical.png")).data
        )

    def test_format_error_exit2(self, workspace):
        junk = workspace / "junk.uvm"
        junk.write_bytes(b"XXXX1234")
        assert (
            main(
                [
                    "warp",
                    "--map",
                    str(junk),
                    "--in",
                    str(workspace / "canonical.png"),
                    "--out",
                    str(workspace / "o.png"),
                ]
            )
            == 2
        )

    def test_inverse_writes_preview_and_masks(self, workspace):
        main(["uvgen", "--scene", str(workspace / "cone.scene"), "--out", str(workspace / "cone.uvm"), "--quiet"])
        main(
            [
                "warp",
                "--map",
                str(workspace / "cone.uvm"),
                "--in",
                str(workspace / "canonical.png"),
                "--out",
                str(workspace / "fwd.png"),
                "--quiet",
            ]
        )
        code = main(
            [
                "warp",
                "--map",
                str(workspace / "cone.uvm"),
                "--in",
                str(workspace / "fwd.png"),
                "--out",
                str(workspace / "inv.png"),
                "--inverse",
                "--depth",
                "4",
                "--masks-out",
                str(workspace / "m"),
                "--quiet",
            ]
        )
        assert code == 0
        assert (workspace / "inv.png").exists()
        for level in range(4):
            assert (workspace / f"m_level{level}.png").exists()

    def test_cone_round_trip_preserves_coarse_content(self, workspace):
        # forward-then-inverse through the cone keeps ring content at the
        # levels it was routed to
        canonical = smooth_image(64)
        scene = ViewScene(kind="cone", output_resolution=64)
        m, _ = trace_view(scene, 64)
        lod = compute_lod(m, 64)
        fwd = forward_warp(build_gaussian(canonical, 4), m, lod)
        vals, masks = transport(fwd, m, lod, 4, 64)
        gauss = build_gaussian(canonical, 4)
        for level in range(1, 4):
            hit = masks[level]
            if not hit.any():
                continue
            err = np.abs(vals[level][hit] - gauss.levels[level].data[hit]).mean()
            assert err < 0.05


class TestSyncCommand:
    def test_single_identity_target_reproduces_png(self, workspace):
        out_dir = workspace / "run"
        code = main(
            [
                "sync",
                "--views",
                f"{workspace / 'ident.uvm'}:{workspace / 'canonical.png'}",
                "--backend",
                "stub:target",
                "--vae",
                "identity",
                "--out-dir",
                str(out_dir),
                "--seed",
                "3",
                "--quiet",
            ]
        )
        assert code == 0
        got = read_png(str(out_dir / "view_00.png"))
        want = read_png(str(workspace / "canonical.png"))
        assert np.abs(got.data - want.data).max() <= 1e-3

    def test_fixed_seed_reproducible_hashes_and_replay(self, workspace):
        (workspace / "cfg").write_text("steps = 8\nseed = 5\nalpha = 0.0\n")
        write_png(str(workspace / "target_b.png"), smooth_image(64, 1))
        argv = [
            "sync",
            "--config",
            str(workspace / "cfg"),
            "--views",
            f"{workspace / 'ident.uvm'}:{workspace / 'canonical.png'}",
            f"{workspace / 'ident.uvm'}:{workspace / 'canonical.png'}",
            "--backend",
            "stub:target",
            "--out-dir",
        ]
        assert main(argv + [str(workspace / "r1"), "--quiet"]) == 0
        assert main(argv + [str(workspace / "r2"), "--quiet"]) == 0
        m1 = json.loads((workspace / "r1" / "manifest.json").read_text())
        m2 = json.loads((workspace / "r2" / "manifest.json").read_text())
        hashes1 = [o["sha256"] for o in m1["outputs"]]
        assert hashes1 == [o["sha256"] for o in m2["outputs"]]
        assert (
            main(
                [
                    "sync",
                    "--replay",
                    str(workspace / "r1" / "manifest.json"),
                    "--out-dir",
                    str(workspace / "r3"),
                    "--quiet",
                ]
            )
            == 0
        )
        m3 = json.loads((workspace / "r3" / "manifest.json").read_text())
        assert hashes1 == [o["sha256"] for o in m3["outputs"]]

    def test_missing_target_file_exit2(self, workspace):
        assert (
            main(
                [
                    "sync",
                    "--views",
                    f"{workspace / 'ident.uvm'}:nonexistent.png",
                    "--backend",
                    "stub:target",
                    "--out-dir",
                    str(workspace / "rx"),
                    "--quiet",
                ]
            )
            == 2
        )

    def test_handshake_failure_exit4(self, workspace):
        assert (
            main(
                [
                    "sync",
                    "--views",
                    f"{workspace / 'ident.uvm'}:p",
                    "--backend",
                    "bridge:tcp://127.0.0.1:1",
                    "--out-dir",
                    str(workspace / "rx"),
                    "--quiet",
                ]
            )
            == 4
        )

    def test_midrun_backend_failure_exit5(self, workspace):
        # a responder that answers the handshake and the first frame, then dies
        flaky = workspace / "flaky_responder.py"
        flaky.write_text(
            "import sys\n"
            "from anamorph import wire\n"
            "from anamorph.mock_bridge import ProceduralModel, serve_stream\n"
            "model = ProceduralModel(scale_factor=1, latent_channels=3)\n"
            "inp, out = sys.stdin.buffer, sys.stdout.buffer\n"
            "for _ in range(2):\n"
            "    header, payload = wire.read_frame(inp)\n"
            "    if header['op'] == 'hello':\n"
            "        out.write(wire.encode_frame({'op': 'hello', 'scale_factor': 1,\n"
            "            'latent_channels': 3, 'capabilities': ['serial']}))\n"
            "    else:\n"
            "        out.write(wire.encode_frame(header, payload))\n"
            "    out.flush()\n"
            "sys.exit(1)\n"
        )
        code = main(
            [
                "sync",
                "--views",
                f"{workspace / 'ident.uvm'}:p",
                "--backend",
                f"bridge:cmd:{sys.executable} {flaky}",
                "--out-dir",
                str(workspace / "r5"),
                "--quiet",
            ]
        )
        assert code == 5

    def test_bridge_cmd_run_completes(self, workspace):
        out_dir = workspace / "rb"
        code = main(
            [
                "sync",
                "--views",
                f"{workspace / 'ident.uvm'}:sunrise",
                f"{workspace / 'ident.uvm'}:forest",
                "--backend",
                f"bridge:cmd:{sys.executable} -m anamorph.mock_bridge",
                "--out-dir",
                str(out_dir),
                "--seed",
                "1",
                "--quiet",
            ]
        )
        assert code == 0
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert len(manifest["outputs"]) == 2
