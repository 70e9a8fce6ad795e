"""Binary checkpoints: a text manifest followed by a float32 payload.

Layout::

    DGK1
    config <json>
    tensors <n>
    <name> <d0,d1,...> <byte offset> <byte count>
    ...
    end
    <little-endian float32 payload>

Offsets are relative to the first payload byte.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import (CheckpointError, CheckpointShapeError,
                      CheckpointVersionError, TruncatedPayloadError)
from .params import ParamStore
from .tensor import Tensor

MAGIC = "DGK1"


def save_checkpoint(store: ParamStore, path, config: dict | None = None):
    header = [MAGIC, "config " + json.dumps(config or {}, sort_keys=True),
              f"tensors {len(store)}"]
    blobs, offset = [], 0
    for name, t in store.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"parameter name {name!r} contains whitespace")
        blob = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        dims = ",".join(str(d) for d in t.shape)
        header.append(f"{name} {dims} {offset} {len(blob)}")
        blobs.append(blob)
        offset += len(blob)
    header.append("end")
    Path(path).write_bytes(("\n".join(header) + "\n").encode("utf-8") + b"".join(blobs))


def _parse(raw: bytes):
    if not raw.startswith(MAGIC.encode() + b"\n"):
        first = raw.split(b"\n", 1)[0][:16]
        raise CheckpointVersionError(f"expected manifest version {MAGIC}, found {first!r}")
    lines, pos = [], 0
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise TruncatedPayloadError("manifest ends before its 'end' line")
        line = raw[pos:nl].decode("utf-8")
        pos = nl + 1
        if line == "end":
            break
        lines.append(line)
    config = json.loads(lines[1].split(" ", 1)[1]) if len(lines) > 1 else {}
    entries = []
    for line in lines[3:]:
        name, dims, off, count = line.split(" ")
        shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        entries.append((name, shape, int(off), int(count)))
    return config, entries, raw[pos:]


def load_checkpoint(path, expected_shapes: dict | None = None):
    """Read a checkpoint; returns ``(store, config)``.

    ``expected_shapes`` (name -> shape) is validated against the manifest so a
    model built from a different configuration is rejected by tensor name.
    """
    config, entries, payload = _parse(Path(path).read_bytes())
    store = ParamStore()
    for name, shape, off, count in entries:
        if off + count > len(payload):
            raise TruncatedPayloadError(
                f"{name}: needs bytes [{off}, {off + count}) but payload has {len(payload)}")
        if count != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointShapeError(f"{name}: byte count {count} disagrees with shape {shape}")
        data = np.frombuffer(payload, dtype="<f4", count=count // 4, offset=off)
        store[name] = Tensor(data.astype(np.float32).reshape(shape), requires_grad=True)
    total = sum(c for *_, c in entries)
    if len(payload) != total:
        raise TruncatedPayloadError(f"payload is {len(payload)} bytes, manifest describes {total}")
    if expected_shapes is not None:
        missing = sorted(set(expected_shapes) - set(store.names()))
        if missing:
            raise CheckpointShapeError(f"checkpoint lacks tensor {missing[0]!r}")
        for name, shape in expected_shapes.items():
            if tuple(store[name].shape) != tuple(shape):
                raise CheckpointShapeError(
                    f"tensor {name!r} has shape {store[name].shape}, model expects {tuple(shape)}")
    return store, config
