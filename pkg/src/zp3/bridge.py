"""External noise-predictor bridge.

Wire protocol (little-endian, bit-exact):
  request = magic "ZP3B", u32 version=1, u8 kind (0=MVD, 1=HF), u32 t,
            u32 n_condition, then per tensor [u32 H, u32 W, u32 C,
            H*W*C float32]; the first tensor is x_t, the rest are
            condition images.
  reply   = magic "ZP3R", u32 status (0=ok), then one tensor in the same
            encoding.

Transports: stdio-subprocess (one request per process invocation) and
directory-handoff (req_<id>.bin / rep_<id>.bin polling).
"""
from __future__ import annotations

import io
import os
import struct
import subprocess
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BackendError, BridgeTimeoutError, InvalidArgumentError, ProtocolError

REQUEST_MAGIC = b"ZP3B"
REPLY_MAGIC = b"ZP3R"
PROTOCOL_VERSION = 1
KIND_MVD = 0
KIND_HF = 1

STDIO = "stdio-subprocess"
DIRECTORY = "directory-handoff"


@dataclass
class BridgeConfig:
    transport: str = STDIO
    executable: tuple[str, ...] = ()   # argv for stdio transport
    watch_dir: str = ""                # directory for handoff transport
    timeout: float = 10.0
    poll_interval: float = 0.02

    def __post_init__(self):
        if self.timeout <= 0.0:
            raise InvalidArgumentError("bridge timeout must be > 0")
        if self.transport not in (STDIO, DIRECTORY):
            raise InvalidArgumentError(f"unknown transport {self.transport!r}")


def _pack_tensor(arr: np.ndarray) -> bytes:
    if arr.ndim != 3:
        raise InvalidArgumentError("bridge tensors must be H x W x C")
    h, w, c = arr.shape
    return struct.pack("<III", h, w, c) + arr.astype("<f4").tobytes()


def _unpack_tensor(buf: memoryview, offset: int) -> tuple[np.ndarray, int]:
    if len(buf) - offset < 12:
        raise ProtocolError("truncated tensor header")
    h, w, c = struct.unpack_from("<III", buf, offset)
    offset += 12
    n = h * w * c * 4
    if len(buf) - offset < n:
        raise ProtocolError("truncated tensor payload")
    data = np.frombuffer(buf, dtype="<f4", count=h * w * c, offset=offset)
    return data.reshape(h, w, c).astype(np.float64), offset + n


def encode_request(x_t: np.ndarray, t: int, condition: list[np.ndarray],
                   kind: int = KIND_MVD) -> bytes:
    out = io.BytesIO()
    out.write(REQUEST_MAGIC)
    out.write(struct.pack("<IBI I", PROTOCOL_VERSION, kind, int(t), len(condition)))
    out.write(_pack_tensor(x_t))
    for c in condition:
        out.write(_pack_tensor(c))
    return out.getvalue()


def decode_request(payload: bytes) -> tuple[int, int, np.ndarray, list[np.ndarray]]:
    """Returns (kind, t, x_t, condition images); used by backends and tests."""
    buf = memoryview(payload)
    if bytes(buf[:4]) != REQUEST_MAGIC:
        raise ProtocolError("bad request magic")
    version, kind, t, n_cond = struct.unpack_from("<IBI I", buf, 4)
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    offset = 4 + struct.calcsize("<IBI I")
    x_t, offset = _unpack_tensor(buf, offset)
    condition = []
    for _ in range(n_cond):
        c, offset = _unpack_tensor(buf, offset)
        condition.append(c)
    return kind, t, x_t, condition


def encode_reply(eps: np.ndarray, status: int = 0) -> bytes:
    out = io.BytesIO()
    out.write(REPLY_MAGIC)
    out.write(struct.pack("<I", status))
    out.write(_pack_tensor(eps))
    return out.getvalue()


def decode_reply(payload: bytes, expect_shape: tuple[int, int, int]) -> np.ndarray:
    buf = memoryview(payload)
    if len(buf) < 8 or bytes(buf[:4]) != REPLY_MAGIC:
        raise ProtocolError("bad reply magic")
    (status,) = struct.unpack_from("<I", buf, 4)
    if status != 0:
        raise BackendError(f"bridge backend returned status {status}")
    eps, offset = _unpack_tensor(buf, 8)
    if offset != len(buf):
        raise ProtocolError("trailing bytes after reply tensor")
    if eps.shape != expect_shape:
        raise ProtocolError(f"reply shape {eps.shape} != request shape {expect_shape}")
    if not np.all(np.isfinite(eps)):
        raise BackendError("bridge backend produced non-finite values")
    return eps


def _stdio_roundtrip(request: bytes, cfg: BridgeConfig) -> bytes:
    try:
        proc = subprocess.Popen(list(cfg.executable), stdin=subprocess.PIPE,
                                stdout=subprocess.PIPE)
    except OSError as exc:
        raise BridgeTimeoutError(f"cannot start bridge executable: {exc}") from exc
    try:
        out, _ = proc.communicate(request, timeout=cfg.timeout)
    except subprocess.TimeoutExpired as exc:
        proc.kill()
        proc.communicate()
        raise BridgeTimeoutError(
            f"bridge did not reply within {cfg.timeout}s") from exc
    if proc.returncode != 0:
        raise BackendError(f"bridge exited with status {proc.returncode}")
    return out


def _directory_roundtrip(request: bytes, cfg: BridgeConfig) -> bytes:
    root = Path(cfg.watch_dir)
    if not root.is_dir():
        raise BridgeTimeoutError(f"handoff directory {root} does not exist")
    rid = uuid.uuid4().hex
    req = root / f"req_{rid}.bin"
    rep = root / f"rep_{rid}.bin"
    tmp = root / f"req_{rid}.tmp"
    tmp.write_bytes(request)
    tmp.rename(req)  # atomic publish
    deadline = time.monotonic() + cfg.timeout
    try:
        while time.monotonic() < deadline:
            if rep.exists():
                return rep.read_bytes()
            time.sleep(cfg.poll_interval)
        raise BridgeTimeoutError(f"no reply file within {cfg.timeout}s")
    finally:
        for p in (req, rep):
            try:
                p.unlink()
            except OSError:
                pass


def bridge_predict(x_t: np.ndarray, t: int, condition: list[np.ndarray],
                   cfg: BridgeConfig, kind: int = KIND_MVD) -> np.ndarray:
    """One request/reply cycle; validates shape and finiteness of the reply."""
    request = encode_request(x_t, t, condition, kind=kind)
    if cfg.transport == STDIO:
        reply = _stdio_roundtrip(request, cfg)
    else:
        reply = _directory_roundtrip(request, cfg)
    return decode_reply(reply, x_t.shape)


class BridgePredictor:
    """NoisePredictor adapter over the bridge; one in-flight request at a time."""

    def __init__(self, cfg: BridgeConfig, condition: list[np.ndarray],
                 kind: int = KIND_MVD):
        self._cfg = cfg
        self._condition = condition
        self._kind = kind
        self._lock = threading.Lock()

    def predict(self, x_t: np.ndarray, t: int) -> np.ndarray:
        with self._lock:
            return bridge_predict(x_t, t, self._condition, self._cfg, self._kind)
