"""Frame codec unit tests plus the responder conformance suite.

The conformance suite runs identically against every available responder:
always the in-repo mock, and the external bridge when its build exists.
"""

import io
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from anamorph import wire
from anamorph.bridge import BridgeBackend
from anamorph.errors import BackendError, ProtocolError, TruncationError
from anamorph.image import Image
from anamorph.sync import LatentTensor

MOCK_ARGV = [sys.executable, "-m", "anamorph.mock_bridge"]
BRIDGE_MAIN = Path(__file__).resolve().parent.parent / "bridge" / "dist" / "src" / "main.js"


def responder_params():
    params = [pytest.param(MOCK_ARGV, id="mock")]
    if BRIDGE_MAIN.exists() and shutil.which("node"):
        params.append(
            pytest.param(["node", str(BRIDGE_MAIN), "--listen", "stdio"], id="bridge")
        )
    else:
        params.append(
            pytest.param(
                None,
                id="bridge",
                marks=pytest.mark.skip(reason="bridge build not present"),
            )
        )
    return params


@pytest.fixture(params=responder_params())
def responder_argv(request):
    return request.param


class TestFrameCodec:
    def test_round_trip(self):
        arr = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
        frame = wire.encode_frame(
            {"op": "velocity", "shape": [2, 3, 4], "dtype": "f32le", "t": 0.5},
            wire.tensor_to_payload(arr, "f32le"),
        )
        header, payload = wire.read_frame(io.BytesIO(frame))
        assert header["op"] == "velocity" and header["t"] == 0.5
        back = wire.payload_to_tensor(payload, (2, 3, 4), "f32le")
        assert np.abs(back - arr).max() <= 1e-6

    def test_payload_size_mismatch(self):
        with pytest.raises(ProtocolError):
            wire.encode_frame({"op": "encode", "shape": [1, 2, 2], "dtype": "f32le"}, b"xx")

    def test_truncated_stream(self):
        frame = wire.encode_frame({"op": "hello"})
        with pytest.raises(TruncationError):
            wire.read_frame(io.BytesIO(frame[:-1] if len(frame) > 4 else b"\x01"))

    def test_eof_is_distinct(self):
        with pytest.raises(EOFError):
            wire.read_frame(io.BytesIO(b""))

    def test_malformed_header(self):
        import struct

        blob = struct.pack("<I", 4) + b"!!!!"
        with pytest.raises(ProtocolError):
            wire.read_frame(io.BytesIO(blob))

    def test_f64_payload(self):
        arr = np.array([[[0.1234567890123]]])
        frame = wire.encode_frame(
            {"op": "tensor", "shape": [1, 1, 1], "dtype": "f64le"},
            wire.tensor_to_payload(arr, "f64le"),
        )
        _, payload = wire.read_frame(io.BytesIO(frame))
        assert wire.payload_to_tensor(payload, (1, 1, 1), "f64le")[0, 0, 0] == arr[0, 0, 0]


class TestConformance:
    """Identical frame-level expectations for the mock and the real bridge."""

    def test_hello_negotiation(self, responder_argv):
        with BridgeBackend.spawn(responder_argv) as backend:
            assert isinstance(backend.scale_factor, int) and backend.scale_factor >= 1
            assert isinstance(backend.latent_channels, int) and backend.latent_channels >= 1
            if backend.schedule is not None:
                assert backend.schedule[0] == 0.0 and backend.schedule[-1] == 1.0
                assert all(b > a for a, b in zip(backend.schedule, backend.schedule[1:]))
            assert "serial" in backend.capabilities

    def test_shapes_and_byte_counts(self, responder_argv):
        with BridgeBackend.spawn(responder_argv) as backend:
            k = backend.scale_factor
            size = 8 * k
            rng = np.random.default_rng(0)
            img = Image(rng.uniform(-1, 1, (size, size, 3)))
            z = backend.encode(img)
            assert z.shape() == (8, 8, backend.latent_channels)
            x = backend.decode(z)
            assert (x.height, x.width) == (size, size)
            u = backend.velocity(z, 0.25, "prompt")
            assert u.shape() == z.shape()

    def test_responses_in_request_order(self, responder_argv):
        with BridgeBackend.spawn(responder_argv) as backend:
            k = backend.scale_factor
            size = 4 * k
            images = [Image(np.full((size, size, 3), v)) for v in (-0.5, 0.1, 0.7)]
            singles = [backend.encode(img).data for img in images]
            # pipeline all three requests before reading any response
            frames = []
            for img in images:
                chw = np.moveaxis(img.data, 2, 0)
                frames.append(
                    wire.encode_frame(
                        {"op": "encode", "shape": list(chw.shape), "dtype": "f32le"},
                        wire.tensor_to_payload(chw, "f32le"),
                    )
                )
            backend._writer.write(b"".join(frames))
            backend._writer.flush()
            for want in singles:
                header, payload = wire.read_frame(backend._reader)
                got = np.moveaxis(
                    wire.payload_to_tensor(payload, tuple(header["shape"])), 0, 2
                )
                assert np.array_equal(got, want)

    def test_unknown_op_gets_error_frame(self, responder_argv):
        with BridgeBackend.spawn(responder_argv) as backend:
            backend._writer.write(wire.encode_frame({"op": "daydream"}))
            backend._writer.flush()
            header, _ = wire.read_frame(backend._reader)
            assert header["op"] == "error"
            assert header.get("message")

    def test_error_frame_aborts_client_call(self, responder_argv):
        with BridgeBackend.spawn(responder_argv) as backend:
            k = backend.scale_factor
            if k == 1:
                pytest.skip("responder accepts any size at scale 1")
            odd = Image(np.zeros((k + 1, k + 1, 3)))
            with pytest.raises(BackendError):
                backend.encode(odd)

    def test_velocity_deterministic(self, responder_argv):
        with BridgeBackend.spawn(responder_argv) as backend:
            rng = np.random.default_rng(3)
            z = LatentTensor(
                rng.standard_normal((6, 6, backend.latent_channels)),
                backend.scale_factor,
            )
            a = backend.velocity(z, 0.4, "same text")
            b = backend.velocity(z, 0.4, "same text")
            assert np.array_equal(a.data, b.data)

    def test_sync_loop_runs_unchanged_over_the_wire(self, responder_argv):
        # the loop's code path is backend-agnostic: a full run through the
        # framed protocol completes and reproduces itself deterministically
        from anamorph.sync import SyncConfig, build_view_bundle, run_sync
        from anamorph.uvmap import identity_map
        from anamorph.views import make_2d_map

        outputs = []
        for _ in range(2):
            with BridgeBackend.spawn(responder_argv) as backend:
                size = 8 * backend.scale_factor
                maps = [identity_map(size), make_2d_map("flip", 0.0, size)]
                bundle = build_view_bundle(
                    maps, ["east", "west"], size, backend.scale_factor
                )
                cfg = SyncConfig(steps=5, seed=12)
                outputs.append(run_sync(bundle, backend, backend, cfg))
        for a, b in zip(*outputs):
            assert np.abs(a.data - b.data).max() <= 1e-6
