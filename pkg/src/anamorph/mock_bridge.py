"""Mock wire-protocol responder with a deterministic procedural model.

Runs as ``python -m anamorph.mock_bridge`` over stdio (default) or TCP.
It mimics the shape contract of a real latent-model server: scale factor
8, 16 latent channels, a mildly shifted schedule, serial responses. The
"model" is procedural: each prompt hashes to a smooth target latent and
velocities point straight at it, encode/decode are fixed random channel
projections around 8x8 patch means. Useful for protocol conformance tests
and full pipeline runs without weights.
"""

from __future__ import annotations

import argparse
import hashlib
import socket
import sys
from typing import BinaryIO

import numpy as np

from . import wire
from .errors import ProtocolError, TruncationError

_T_CLIP = 0.999


class ProceduralModel:
    """Deterministic stand-in for a latent rectified-flow model."""

    def __init__(self, scale_factor: int = 8, latent_channels: int = 16, image_channels: int = 3):
        self.scale_factor = scale_factor
        self.latent_channels = latent_channels
        self.image_channels = image_channels
        rng = np.random.default_rng(1234)
        self._lift = rng.standard_normal((latent_channels, image_channels)) / np.sqrt(image_channels)
        self._drop = np.linalg.pinv(self._lift)
        self._targets: dict[tuple[str, tuple[int, ...]], np.ndarray] = {}

    def schedule(self, steps: int = 30) -> list[float]:
        # mildly front-loaded boundaries, the kind a real server would own
        ts = np.linspace(0.0, 1.0, steps + 1)
        return list(np.round(ts**1.2, 10))

    def _target(self, prompt_id: str, shape: tuple[int, ...]) -> np.ndarray:
        key = (prompt_id, shape)
        if key not in self._targets:
            seed = int.from_bytes(hashlib.sha256(prompt_id.encode()).digest()[:8], "little")
            rng = np.random.default_rng(seed)
            c, h, w = shape
            coarse = rng.standard_normal((c, (h + 3) // 4, (w + 3) // 4))
            field = np.repeat(np.repeat(coarse, 4, axis=1), 4, axis=2)[:, :h, :w]
            self._targets[key] = field
        return self._targets[key]

    def velocity(self, z: np.ndarray, t: float, prompt_id: str) -> np.ndarray:
        target = self._target(prompt_id, z.shape)
        return (target - z) / (1.0 - min(t, _T_CLIP))

    def encode(self, x: np.ndarray) -> np.ndarray:
        c, h, w = x.shape
        k = self.scale_factor
        if h % k or w % k:
            raise ProtocolError(f"image size {h}x{w} not divisible by {k}")
        pooled = x.reshape(c, h // k, k, w // k, k).mean(axis=(2, 4))
        return np.einsum("lc,chw->lhw", self._lift, pooled)

    def decode(self, z: np.ndarray) -> np.ndarray:
        back = np.einsum("cl,lhw->chw", self._drop, z)
        k = self.scale_factor
        return np.repeat(np.repeat(back, k, axis=1), k, axis=2)


def serve_stream(reader: BinaryIO, writer: BinaryIO, model: ProceduralModel) -> None:
    """Answer frames until the peer closes; responses stay in request order."""

    def send(header: dict, payload: bytes = b"") -> None:
        writer.write(wire.encode_frame(header, payload))
        writer.flush()

    def send_tensor(op: str, arr: np.ndarray) -> None:
        send(
            {"op": op, "shape": list(arr.shape), "dtype": "f32le"},
            wire.tensor_to_payload(arr, "f32le"),
        )

    while True:
        try:
            header, payload = wire.read_frame(reader)
        except EOFError:
            return
        except (TruncationError, ProtocolError) as exc:
            try:
                send({"op": "error", "message": f"malformed frame: {exc}"})
            except OSError:
                pass
            return

        op = header.get("op")
        try:
            if op == "hello":
                send(
                    {
                        "op": "hello",
                        "scale_factor": model.scale_factor,
                        "latent_channels": model.latent_channels,
                        "schedule": model.schedule(),
                        "capabilities": ["serial"],
                    }
                )
            elif op in ("velocity", "encode", "decode"):
                shape = tuple(header["shape"])
                tensor = wire.payload_to_tensor(payload, shape, header.get("dtype", "f32le"))
                if op == "velocity":
                    out = model.velocity(tensor, float(header.get("t", 0.0)), str(header.get("prompt_id", "")))
                elif op == "encode":
                    out = model.encode(tensor)
                else:
                    out = model.decode(tensor)
                send_tensor(op, out)
            else:
                send({"op": "error", "message": f"unknown op {op!r}"})
        except (KeyError, ProtocolError, ValueError) as exc:
            send({"op": "error", "message": str(exc)})


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="mock wire-protocol responder")
    parser.add_argument("--listen", default="stdio", help="stdio or tcp://HOST:PORT")
    parser.add_argument("--scale", type=int, default=8)
    parser.add_argument("--channels", type=int, default=16)
    args = parser.parse_args(argv)

    model = ProceduralModel(scale_factor=args.scale, latent_channels=args.channels)

    if args.listen == "stdio":
        serve_stream(sys.stdin.buffer, sys.stdout.buffer, model)
        return 0
    if args.listen.startswith("tcp://"):
        host, _, port = args.listen[6:].partition(":")
        server = socket.create_server((host, int(port)))
        print(f"listening on {server.getsockname()[0]}:{server.getsockname()[1]}", file=sys.stderr, flush=True)
        conn, _ = server.accept()
        stream = conn.makefile("rwb")
        serve_stream(stream, stream, model)
        conn.close()
        server.close()
        return 0
    parser.error(f"bad --listen value {args.listen!r}")
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
