"""Versioned binary checkpoints: header + named float32 tensors.

Layout (all integers little-endian):
    magic "VTIN" | version u32 | sha256(spec json) 32 bytes
    | spec json (u32 length prefix) | metadata json (u32 length prefix)
    | tensor count u32
    | per tensor: name (u16 length + utf-8), ndim u8, dims u32 each,
      values float32

The spec json is the canonical architecture description; loading against a
different architecture refuses with a digest mismatch instead of silently
reshaping.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

MAGIC = b"VTIN"
VERSION = 1


def canonical_spec_bytes(spec: dict) -> bytes:
    return json.dumps(spec, sort_keys=True, separators=(",", ":")).encode()


def spec_digest(spec: dict) -> str:
    return hashlib.sha256(canonical_spec_bytes(spec)).hexdigest()


@dataclass
class Checkpoint:
    values: dict
    spec: dict
    metadata: dict = field(default_factory=dict)
    digest: str = ""

    def load_into(self, store) -> None:
        store.load_values(self.values)


def save_checkpoint(path, values: dict, spec: dict, metadata: dict | None = None) -> str:
    """Write atomically (tmp + rename); returns the spec digest."""
    spec_blob = canonical_spec_bytes(spec)
    meta_blob = json.dumps(metadata or {}, sort_keys=True).encode()
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(hashlib.sha256(spec_blob).digest())
        f.write(struct.pack("<I", len(spec_blob)))
        f.write(spec_blob)
        f.write(struct.pack("<I", len(meta_blob)))
        f.write(meta_blob)
        names = sorted(values)
        f.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode()
            arr = np.ascontiguousarray(values[name], dtype="<f4")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes())
    os.replace(tmp, path)
    return hashlib.sha256(spec_blob).hexdigest()


def _read(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise ConfigError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path, expected_spec: dict | None = None) -> Checkpoint:
    """Read and verify; refuses on magic/version/digest mismatch."""
    with open(path, "rb") as f:
        if _read(f, 4, "magic") != MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read(f, 4, "version"))
        if version != VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        stored = _read(f, 32, "digest")
        (n,) = struct.unpack("<I", _read(f, 4, "spec length"))
        spec_blob = _read(f, n, "spec")
        if hashlib.sha256(spec_blob).digest() != stored:
            raise ConfigError(f"{path}: spec digest mismatch (corrupt header)")
        spec = json.loads(spec_blob)
        if expected_spec is not None and canonical_spec_bytes(expected_spec) != spec_blob:
            raise ConfigError(
                f"{path}: checkpoint spec digest {stored.hex()[:12]} does not "
                f"match expected {spec_digest(expected_spec)[:12]}; refusing to load")
        (n,) = struct.unpack("<I", _read(f, 4, "metadata length"))
        metadata = json.loads(_read(f, n, "metadata"))
        (count,) = struct.unpack("<I", _read(f, 4, "tensor count"))
        values = {}
        for _ in range(count):
            (ln,) = struct.unpack("<H", _read(f, 2, "name length"))
            name = _read(f, ln, "name").decode()
            (ndim,) = struct.unpack("<B", _read(f, 1, "ndim"))
            shape = tuple(struct.unpack("<I", _read(f, 4, "dim"))[0]
                          for _ in range(ndim))
            nbytes = int(np.prod(shape, dtype=np.int64)) * 4
            buf = _read(f, nbytes, f"tensor {name}")
            values[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(float)
    return Checkpoint(values=values, spec=spec, metadata=metadata, digest=stored.hex())
