"""Newline-delimited JSON score oracle, over a child process's stdio or TCP.

Request:  {"id": <int>, "inputs": [[<reals>], ...]}
Response: {"id": <int>, "scores": [[<reals>], ...]}

One JSON document per line, UTF-8, ids strictly increasing per connection.
A server that cannot score a request answers {"id": <int>, "error": "..."}.
"""

from __future__ import annotations

import json
import logging
import queue
import shlex
import socket
import socketserver
import subprocess
import threading
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class RemoteError(RuntimeError):
    pass


class RemoteTimeout(RemoteError):
    pass


class RemoteProtocolError(RemoteError):
    """The peer sent something that is not a valid response."""


class RemoteConnectionLost(RemoteError):
    pass


@dataclass(frozen=True)
class RemoteOracleConfig:
    """Where to reach an oracle: exactly one of ``command`` or ``address``."""

    command: tuple[str, ...] | None = None
    address: tuple[str, int] | None = None
    timeout_ms: int = 30000

    def __post_init__(self):
        if (self.command is None) == (self.address is None):
            raise ValueError("give exactly one of a command line or a host:port address")
        if self.timeout_ms <= 0:
            raise ValueError("timeout must be positive")
        if isinstance(self.command, str):
            object.__setattr__(self, "command", tuple(shlex.split(self.command)))

    @classmethod
    def tcp(cls, endpoint: str, timeout_ms: int = 30000) -> "RemoteOracleConfig":
        host, _, port = endpoint.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"expected HOST:PORT, got {endpoint!r}")
        return cls(address=(host, int(port)), timeout_ms=timeout_ms)

    def describe(self) -> str:
        if self.address is not None:
            return f"tcp://{self.address[0]}:{self.address[1]}"
        return "cmd:" + " ".join(self.command)


def encode_request(req_id: int, xs: np.ndarray) -> bytes:
    doc = {"id": req_id, "inputs": [[float(v) for v in row] for row in xs]}
    return (json.dumps(doc, separators=(",", ":")) + "\n").encode("utf-8")


def decode_response(line: bytes, expected_id: int, count: int) -> np.ndarray:
    try:
        doc = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RemoteProtocolError(f"malformed response: {exc}") from None
    if not isinstance(doc, dict) or doc.get("id") != expected_id:
        raise RemoteProtocolError(f"response id mismatch: expected {expected_id}")
    if "error" in doc:
        raise RemoteProtocolError(f"oracle reported an error: {doc['error']}")
    scores = doc.get("scores")
    try:
        arr = np.array(scores, dtype=np.float64)
    except (TypeError, ValueError):
        raise RemoteProtocolError("scores are not a matrix of numbers") from None
    if arr.ndim != 2 or arr.shape[0] != count or arr.shape[1] == 0:
        raise RemoteProtocolError(f"expected {count} score rows, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise RemoteProtocolError("non-finite score in response")
    return arr


class RemoteBackend:
    """Client side of the protocol; usable wherever a model backend is."""

    def __init__(self, config: RemoteOracleConfig):
        self.config = config
        self._next_id = 1
        self._proc: subprocess.Popen | None = None
        self._sock: socket.socket | None = None
        self._lines: queue.Queue | None = None
        self._rfile = None
        self._connect()

    def _connect(self) -> None:
        cfg = self.config
        if cfg.address is not None:
            try:
                self._sock = socket.create_connection(cfg.address, timeout=cfg.timeout_ms / 1000)
            except OSError as exc:
                raise RemoteConnectionLost(f"cannot connect to {cfg.describe()}: {exc}") from None
            self._sock.settimeout(cfg.timeout_ms / 1000)
            self._rfile = self._sock.makefile("rb")
        else:
            try:
                self._proc = subprocess.Popen(
                    list(cfg.command), stdin=subprocess.PIPE, stdout=subprocess.PIPE
                )
            except OSError as exc:
                raise RemoteConnectionLost(f"cannot start {cfg.describe()}: {exc}") from None
            self._lines = queue.Queue()
            threading.Thread(target=self._pump, args=(self._proc.stdout, self._lines), daemon=True).start()

    @staticmethod
    def _pump(stream, sink: queue.Queue) -> None:
        for line in iter(stream.readline, b""):
            sink.put(line)
        sink.put(None)

    def _send(self, payload: bytes) -> None:
        try:
            if self._sock is not None:
                self._sock.sendall(payload)
            else:
                self._proc.stdin.write(payload)
                self._proc.stdin.flush()
        except OSError as exc:
            raise RemoteConnectionLost(f"send to {self.config.describe()} failed: {exc}") from None

    def _receive(self) -> bytes:
        timeout = self.config.timeout_ms / 1000
        if self._sock is not None:
            try:
                line = self._rfile.readline()
            except socket.timeout:
                raise RemoteTimeout(f"no response from {self.config.describe()} within {timeout}s") from None
            except OSError as exc:
                raise RemoteConnectionLost(str(exc)) from None
        else:
            try:
                line = self._lines.get(timeout=timeout)
            except queue.Empty:
                raise RemoteTimeout(f"no response from {self.config.describe()} within {timeout}s") from None
            if line is None:
                line = b""
        if not line.endswith(b"\n"):
            raise RemoteConnectionLost(f"connection to {self.config.describe()} closed mid-response")
        return line

    def evaluate_batch(self, xs: Sequence) -> np.ndarray:
        batch = np.asarray(xs, dtype=np.float64)
        if batch.ndim == 1:
            batch = batch[None, :]
        req_id = self._next_id
        self._next_id += 1
        self._send(encode_request(req_id, batch))
        return decode_response(self._receive(), req_id, len(batch))

    def evaluate(self, x) -> np.ndarray:
        return self.evaluate_batch([x])[0]

    def close(self) -> None:
        if self._sock is not None:
            self._rfile.close()
            self._sock.close()
            self._sock = None
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def remote_query(config: RemoteOracleConfig, xs: Sequence) -> np.ndarray:
    """One round trip on a fresh connection."""
    with RemoteBackend(config) as client:
        return client.evaluate_batch(xs)


def handle_line(model, line: bytes) -> bytes:
    req_id = None
    try:
        doc = json.loads(line.decode("utf-8"))
        req_id = doc["id"]
        xs = np.array(doc["inputs"], dtype=np.float64)
        if xs.ndim != 2:
            raise ValueError("inputs must be a list of vectors")
        scores = model.evaluate_batch(xs)
        resp = {"id": req_id, "scores": [[float(v) for v in row] for row in scores]}
    except Exception as exc:  # reported to the client, the server keeps going
        resp = {"id": req_id, "error": f"{type(exc).__name__}: {exc}"}
    return (json.dumps(resp, separators=(",", ":")) + "\n").encode("utf-8")


def serve_stream(model, rfile: BinaryIO, wfile: BinaryIO) -> None:
    last_id = None
    for line in iter(rfile.readline, b""):
        if not line.strip():
            continue
        out = handle_line(model, line)
        try:
            req_id = json.loads(line).get("id")
        except Exception:
            req_id = None
        if isinstance(req_id, int) and last_id is not None and req_id <= last_id:
            logger.warning("request id %s is not increasing", req_id)
        last_id = req_id if isinstance(req_id, int) else last_id
        wfile.write(out)
        wfile.flush()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        serve_stream(self.server.model, self.rfile, self.wfile)


class OracleServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, model, address=("127.0.0.1", 0)):
        self.model = model
        super().__init__(address, _Handler)

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t
