"""Feed validation and probe-output export (CSV and a raw binary format).

Binary layout (all integers little-endian)::

    b"NENG1"            magic
    uint32              number of records
    per record:
        uint16          key length, then the UTF-8 key
        uint8           element width in bits (32 or 64)
        uint8           number of dims
        uint64 * ndim   dims
        raw data        C order, little-endian floats
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from spikefuse.ir import Model

MAGIC = b"NENG1"

ProbeOutput = dict[str, np.ndarray]


class FeedError(ValueError):
    pass


def normalize_feeds(
    model: Model, feeds: Mapping | None, n_steps: int, minibatch_size: int
) -> dict[int, np.ndarray | None]:
    """Check feed shapes and return ``slot id -> (batch, n_steps, dim)`` arrays.

    Slots without data map to ``None`` (the default value is used); a slot
    with neither data nor a default is an error.
    """
    feeds = dict(feeds or {})
    out: dict[int, np.ndarray | None] = {}
    for key in list(feeds):
        slot_id = getattr(key, "id", key)
        if slot_id not in model.feeds:
            raise FeedError(f"{key!r} is not a feedable node of this model")
        feeds[slot_id] = feeds.pop(key)
    for slot_id, slot in model.feeds.items():
        data = feeds.get(slot_id)
        if data is None:
            if slot.default is None:
                raise FeedError(f"feedable node {slot_id} has no feed data and no default")
            out[slot_id] = None
            continue
        data = np.asarray(data, dtype=slot.signal.dtype)
        expected = (minibatch_size, n_steps, slot.size)
        if data.ndim != 3 or data.shape[0] != minibatch_size or data.shape[2] != slot.size \
                or data.shape[1] < n_steps:
            raise FeedError(
                f"feed for node {slot_id} has shape {data.shape}, expected {expected}"
            )
        out[slot_id] = data[:, :n_steps]
    return out


def write_csv(probes: ProbeOutput, path, dt: float, step_offset: int = 0) -> None:
    """Long-format CSV: step,time,batch,probe_key,dim_index,value."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "time", "batch", "probe_key", "dim_index", "value"])
        for key in sorted(probes):
            data = probes[key]
            for b in range(data.shape[0]):
                for s in range(data.shape[1]):
                    step = step_offset + s + 1
                    for d in range(data.shape[2]):
                        writer.writerow([step, repr(step * dt), b, key, d, repr(float(data[b, s, d]))])


def write_binary(probes: ProbeOutput, path) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(probes)))
        for key in sorted(probes):
            data = np.ascontiguousarray(probes[key])
            if data.dtype not in (np.float32, np.float64):
                raise ValueError(f"probe {key!r} has unsupported dtype {data.dtype}")
            kb = key.encode()
            f.write(struct.pack("<H", len(kb)) + kb)
            f.write(struct.pack("<BB", data.dtype.itemsize * 8, data.ndim))
            f.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            f.write(data.astype(data.dtype.newbyteorder("<"), copy=False).tobytes())


def read_binary(path) -> ProbeOutput:
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:5]!r}")
    (n,) = struct.unpack_from("<I", raw, 5)
    offset = 9
    out = {}
    for _ in range(n):
        (klen,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        key = raw[offset : offset + klen].decode()
        offset += klen
        bits, ndim = struct.unpack_from("<BB", raw, offset)
        offset += 2
        dims = struct.unpack_from(f"<{ndim}Q", raw, offset)
        offset += 8 * ndim
        dtype = np.dtype("<f4" if bits == 32 else "<f8")
        count = int(np.prod(dims))
        out[key] = np.frombuffer(raw, dtype, count, offset).reshape(dims).copy()
        offset += count * dtype.itemsize
    return out
