"""Client side of the backend wire protocol.

A bridge backend is a separate process (local model server, GPU box, or
the in-repo mock) speaking length-prefixed frames over stdio or TCP. One
connection serves both interfaces the loop needs: the denoiser velocity
and the VAE encode/decode pair. Constants the core must not assume
(latent scale factor, channel count, native schedule) arrive in the hello
handshake.

Responders declare themselves serial; the loop already sequences its
calls, so no extra locking is needed beyond one in-flight request.
"""

from __future__ import annotations

import socket
import subprocess
from typing import BinaryIO

import numpy as np

from . import wire
from .errors import BackendError, ProtocolError
from .image import Image
from .sync import LatentTensor


class BridgeBackend:
    """Denoiser + Vae facade over a framed byte stream."""

    def __init__(self, reader: BinaryIO, writer: BinaryIO, owns: object = None):
        self._reader = reader
        self._writer = writer
        self._owns = owns
        self.scale_factor = 1
        self.latent_channels = 0
        self.schedule: list[float] | None = None
        self.capabilities: list[str] = []
        self._hello()

    # -- connection helpers -------------------------------------------------

    @classmethod
    def connect_tcp(cls, host: str, port: int, timeout: float = 30.0) -> "BridgeBackend":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise BackendError(f"cannot connect to bridge at {host}:{port}: {exc}") from exc
        sock.settimeout(timeout)
        stream = sock.makefile("rwb")
        return cls(stream, stream, owns=sock)

    @classmethod
    def spawn(cls, argv: list[str]) -> "BridgeBackend":
        try:
            proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE
            )
        except OSError as exc:
            raise BackendError(f"cannot spawn bridge {argv!r}: {exc}") from exc
        return cls(proc.stdout, proc.stdin, owns=proc)

    def close(self) -> None:
        for stream in (self._writer, self._reader):
            try:
                stream.close()
            except Exception:
                pass
        if isinstance(self._owns, subprocess.Popen):
            self._owns.terminate()
            try:
                self._owns.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._owns.kill()
        elif isinstance(self._owns, socket.socket):
            self._owns.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- framing ------------------------------------------------------------

    def _roundtrip(self, header: dict, payload: bytes = b"") -> tuple[dict, bytes]:
        try:
            self._writer.write(wire.encode_frame(header, payload))
            self._writer.flush()
            reply, body = wire.read_frame(self._reader)
        except (OSError, EOFError, ProtocolError) as exc:
            raise BackendError(f"bridge transport failed: {exc}") from exc
        if reply.get("op") == "error":
            raise BackendError(f"bridge error: {reply.get('message', 'unspecified')}")
        if reply.get("op") != header["op"]:
            raise BackendError(
                f"bridge answered {reply.get('op')!r} to a {header['op']!r} request"
            )
        return reply, body

    def _hello(self) -> None:
        reply, _ = self._roundtrip({"op": "hello"})
        try:
            self.scale_factor = int(reply["scale_factor"])
            self.latent_channels = int(reply["latent_channels"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"hello response missing constants: {reply}") from exc
        if self.scale_factor < 1 or self.latent_channels < 1:
            raise BackendError(f"hello advertised nonsense constants: {reply}")
        sched = reply.get("schedule")
        self.schedule = [float(t) for t in sched] if sched else None
        self.capabilities = list(reply.get("capabilities", []))

    # -- tensor helpers -----------------------------------------------------

    @staticmethod
    def _pack(arr: np.ndarray) -> tuple[list[int], bytes]:
        chw = np.moveaxis(arr, 2, 0)
        return list(chw.shape), wire.tensor_to_payload(chw, "f32le")

    @staticmethod
    def _unpack(reply: dict, body: bytes) -> np.ndarray:
        shape = reply.get("shape")
        if not shape or len(shape) != 3:
            raise BackendError(f"response lacks a [c, h, w] shape: {reply}")
        arr = wire.payload_to_tensor(body, tuple(shape), reply.get("dtype", "f32le"))
        return np.moveaxis(arr, 0, 2)

    # -- Denoiser / Vae surface ----------------------------------------------

    def velocity(self, z: LatentTensor, t: float, prompt_id: str) -> LatentTensor:
        shape, payload = self._pack(z.data)
        reply, body = self._roundtrip(
            {
                "op": "velocity",
                "t": float(t),
                "prompt_id": prompt_id,
                "shape": shape,
                "dtype": "f32le",
            },
            payload,
        )
        out = self._unpack(reply, body)
        if out.shape != z.data.shape:
            raise BackendError("velocity response shape differs from the request")
        return LatentTensor(out, z.scale_factor)

    def encode(self, x: Image) -> LatentTensor:
        shape, payload = self._pack(x.data)
        reply, body = self._roundtrip(
            {"op": "encode", "shape": shape, "dtype": "f32le"}, payload
        )
        return LatentTensor(self._unpack(reply, body), self.scale_factor)

    def decode(self, z: LatentTensor) -> Image:
        shape, payload = self._pack(z.data)
        reply, body = self._roundtrip(
            {"op": "decode", "shape": shape, "dtype": "f32le"}, payload
        )
        return Image(self._unpack(reply, body))
