"""Binary checkpoint format: bit-exact round-trip of a training state.

Little-endian layout, in order:

  magic     b"SNCE"
  version   u32 (currently 1)
  precision u8 (0 single, 1 double) + 3 reserved zero bytes
  seed      u64   step u64   epoch u64
  config    u32 byte length + UTF-8 config document
  arch      backbone dim count u32 + dims (u32 each), then projector likewise
  m0        f64
  params    three groups in order (query, key, velocity); each group is a
            u32 array count, then per array: u32 ndim, u32 shape entries,
            raw values in the run precision
  queue     capacity u32, dim u32, head u32, filled u32, raw ring storage
  crc32     u32 over every preceding byte (zlib.crc32)

Everything needed for bit-identical resumption is here: parameters,
optimizer velocities, the raw queue ring (including head position), the
seed, and the loop counters.  Random streams are derived from
(seed, purpose, counters), so no generator state is serialized.
"""

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import IncompatibleCheckpoint, MalformedFile

MAGIC = b"SNCE"
VERSION = 1

_PREC_CODE = {"single": 0, "double": 1}
_PREC_NAME = {0: "single", 1: "double"}
_PREC_DTYPE = {"single": np.float32, "double": np.float64}


@dataclass
class CheckpointData:
    """Everything a run needs to continue exactly where it stopped."""

    config_text: str
    precision: str
    seed: int
    step: int
    epoch: int
    m0: float
    backbone_dims: list
    projector_dims: list
    query_params: list
    key_params: list
    velocities: list
    queue_capacity: int
    queue_dim: int
    queue_head: int
    queue_filled: int
    queue_slots: np.ndarray


def _pack_arrays(buf: bytearray, arrays, dtype):
    buf += struct.pack("<I", len(arrays))
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=dtype)
        buf += struct.pack("<I", a.ndim)
        buf += struct.pack(f"<{a.ndim}I", *a.shape)
        buf += a.tobytes()


def save_checkpoint(path, data: CheckpointData):
    dtype = _PREC_DTYPE[data.precision]
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    buf += struct.pack("<B3x", _PREC_CODE[data.precision])
    buf += struct.pack("<QQQ", data.seed, data.step, data.epoch)
    cfg = data.config_text.encode("utf-8")
    buf += struct.pack("<I", len(cfg))
    buf += cfg
    for dims in (data.backbone_dims, data.projector_dims):
        buf += struct.pack("<I", len(dims))
        buf += struct.pack(f"<{len(dims)}I", *dims)
    buf += struct.pack("<d", data.m0)
    for group in (data.query_params, data.key_params, data.velocities):
        _pack_arrays(buf, group, dtype)
    buf += struct.pack(
        "<IIII", data.queue_capacity, data.queue_dim, data.queue_head, data.queue_filled
    )
    buf += np.ascontiguousarray(data.queue_slots, dtype=dtype).tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


class _Cursor:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise MalformedFile("checkpoint truncated")
        out = self.raw[self.pos: self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_arrays(cur: _Cursor, dtype):
    (count,) = cur.unpack("<I")
    if count > 10_000:
        raise MalformedFile(f"implausible array count {count}")
    arrays = []
    itemsize = np.dtype(dtype).itemsize
    for _ in range(count):
        (ndim,) = cur.unpack("<I")
        if ndim > 8:
            raise MalformedFile(f"implausible array rank {ndim}")
        shape = cur.unpack(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        a = np.frombuffer(cur.take(n * itemsize), dtype=dtype).reshape(shape).copy()
        arrays.append(a)
    return arrays


def load_checkpoint(path) -> CheckpointData:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise MalformedFile("not a checkpoint file (bad magic)")
    if len(raw) < 8:
        raise MalformedFile("checkpoint truncated")
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(raw[:-4]) != stored_crc:
        raise MalformedFile("checkpoint checksum mismatch")
    cur = _Cursor(raw[:-4])
    cur.take(4)  # magic
    (version,) = cur.unpack("<I")
    if version != VERSION:
        raise IncompatibleCheckpoint(f"checkpoint version {version}, expected {VERSION}")
    (prec_code,) = cur.unpack("<B3x")
    if prec_code not in _PREC_NAME:
        raise MalformedFile(f"unknown precision code {prec_code}")
    precision = _PREC_NAME[prec_code]
    dtype = _PREC_DTYPE[precision]
    seed, step, epoch = cur.unpack("<QQQ")
    (cfg_len,) = cur.unpack("<I")
    config_text = cur.take(cfg_len).decode("utf-8")
    dims_pair = []
    for _ in range(2):
        (nd,) = cur.unpack("<I")
        if nd > 64:
            raise MalformedFile(f"implausible layer count {nd}")
        dims_pair.append(list(cur.unpack(f"<{nd}I")))
    (m0,) = cur.unpack("<d")
    query_params = _read_arrays(cur, dtype)
    key_params = _read_arrays(cur, dtype)
    velocities = _read_arrays(cur, dtype)
    cap, qdim, head, filled = cur.unpack("<IIII")
    slots = np.frombuffer(
        cur.take(cap * qdim * np.dtype(dtype).itemsize), dtype=dtype
    ).reshape(cap, qdim).copy()
    if cur.pos != len(cur.raw):
        raise MalformedFile(f"{len(cur.raw) - cur.pos} trailing bytes")
    return CheckpointData(
        config_text=config_text, precision=precision, seed=seed, step=step,
        epoch=epoch, m0=m0, backbone_dims=dims_pair[0], projector_dims=dims_pair[1],
        query_params=query_params, key_params=key_params, velocities=velocities,
        queue_capacity=cap, queue_dim=qdim, queue_head=head, queue_filled=filled,
        queue_slots=slots,
    )
