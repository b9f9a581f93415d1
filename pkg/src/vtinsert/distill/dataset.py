"""Growing teacher-labeled dataset with per-episode history windows.

Each record is one environment step holding every student-facing sensor
field plus the teacher's observation/privileged vectors, so labels can be
replayed bit-for-bit against the stored state. History windows never cross
episode boundaries; slots before the first step of an episode come back
zero-filled with a false valid flag.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from ..errors import ConfigError, PreconditionError

MAGIC = b"VTDS"
VERSION = 1

# (name, dtype, per-step trailing shape builder)
_F32 = np.float32
_F64 = np.float64


class _Growable:
    """Append-only array growing by doubling; exposes a trimmed view."""

    def __init__(self, trailing: tuple, dtype):
        self.trailing = tuple(int(d) for d in trailing)
        self.dtype = dtype
        self._buf = np.zeros((0,) + self.trailing, dtype=dtype)
        self.n = 0

    def append(self, row: np.ndarray) -> None:
        row = np.asarray(row, dtype=self.dtype)
        if row.shape != self.trailing:
            raise ConfigError(f"record shape {row.shape}, expected {self.trailing}")
        if self.n == len(self._buf):
            cap = max(256, 2 * len(self._buf))
            grown = np.zeros((cap,) + self.trailing, dtype=self.dtype)
            grown[:self.n] = self._buf[:self.n]
            self._buf = grown
        self._buf[self.n] = row
        self.n += 1

    @property
    def data(self) -> np.ndarray:
        return self._buf[:self.n]


class AggregatedDataset:
    """Per-step sensor records plus an episode table, DAgger-style growing.

    geometry: dict with tactile_resolution, cloud_points, image_size and
    obs/priv/label dims; every record is shape-checked against it.
    """

    STEP_FIELDS = ("tactile", "object_cloud", "socket_cloud", "depth_image",
                   "obs", "priv", "socket_estimate", "label")

    def __init__(self, geometry: dict):
        for key in ("tactile_resolution", "cloud_points", "image_size"):
            if key not in geometry:
                raise ConfigError(f"dataset geometry missing {key!r}")
        self.geometry = dict(geometry)
        r = int(geometry["tactile_resolution"])
        p = int(geometry["cloud_points"])
        s = int(geometry["image_size"])
        self._fields = {
            "tactile": _Growable((3, r, r), _F32),
            "object_cloud": _Growable((p, 3), _F32),
            "socket_cloud": _Growable((p, 3), _F32),
            "depth_image": _Growable((2, s, s), _F32),
            "obs": _Growable((13,), _F64),
            "priv": _Growable((63,), _F64),
            "socket_estimate": _Growable((3,), _F64),
            "label": _Growable((6,), _F64),
        }
        self._ep_start = _Growable((), np.int64)
        self._ep_id = _Growable((), np.int64)
        self._shape_id = _Growable((), np.int64)
        self.episodes = []          # dicts: id, start, length, shape, seed, driver
        self._open_episode = None

    def __len__(self) -> int:
        return self._fields["label"].n

    @property
    def shape_names(self) -> list:
        return sorted({e["shape"] for e in self.episodes})

    def begin_episode(self, shape: str, seed: int, driver: str) -> int:
        if self._open_episode is not None:
            raise PreconditionError("previous episode still open")
        ep = {"id": len(self.episodes), "start": len(self), "length": 0,
              "shape": shape, "seed": int(seed), "driver": driver}
        self._open_episode = ep
        return ep["id"]

    def add_step(self, **record) -> None:
        if self._open_episode is None:
            raise PreconditionError("add_step() outside begin_episode()")
        missing = set(self.STEP_FIELDS) - set(record)
        extra = set(record) - set(self.STEP_FIELDS)
        if missing or extra:
            raise ConfigError(f"record fields mismatch: missing {sorted(missing)}, "
                              f"unexpected {sorted(extra)}")
        for name in self.STEP_FIELDS:
            self._fields[name].append(record[name])
        ep = self._open_episode
        self._ep_start.append(np.int64(ep["start"]))
        self._ep_id.append(np.int64(ep["id"]))
        shapes = self.shape_names
        sid = shapes.index(ep["shape"]) if ep["shape"] in shapes else -1
        self._shape_id.append(np.int64(sid))
        ep["length"] += 1

    def end_episode(self) -> None:
        if self._open_episode is None:
            raise PreconditionError("end_episode() without begin_episode()")
        self.episodes.append(self._open_episode)
        self._open_episode = None
        # shape ids are positions in the sorted name list, which may shift as
        # new shapes appear; recompute so stratified draws stay consistent
        names = self.shape_names
        ids = self._shape_id.data
        at = 0
        for ep in self.episodes:
            ids[at:at + ep["length"]] = names.index(ep["shape"])
            at += ep["length"]

    def field(self, name: str) -> np.ndarray:
        return self._fields[name].data

    def windows(self, indices: np.ndarray, k: int, fields: tuple):
        """Gather (B, k, ...) zero-padded same-episode histories.

        Returns (batch dict, valid (B, k) bool). Window slot j holds step
        i - k + 1 + j; slots from before the episode start are zeros.
        """
        indices = np.asarray(indices, dtype=np.int64)
        if len(self) == 0:
            raise PreconditionError("empty dataset")
        starts = self._ep_start.data[indices]
        offsets = np.arange(-k + 1, 1, dtype=np.int64)
        slots = indices[:, None] + offsets[None, :]
        valid = slots >= starts[:, None]
        safe = np.where(valid, slots, indices[:, None])
        batch = {}
        for name in fields:
            arr = self._fields[name].data[safe]
            arr = arr * valid.reshape(valid.shape + (1,) * (arr.ndim - 2))
            batch[name] = arr
        return batch, valid

    def sample_indices(self, rng, batch: int, stratify: bool = True) -> np.ndarray:
        """Uniform draw, optionally stratified evenly across object shapes."""
        n = len(self)
        if n == 0:
            raise PreconditionError("empty dataset")
        if not stratify:
            return rng.integers(0, n, size=batch)
        sid = self._shape_id.data
        groups = [np.nonzero(sid == g)[0] for g in range(len(self.shape_names))]
        groups = [g for g in groups if len(g)]
        counts = np.full(len(groups), batch // len(groups), dtype=int)
        counts[:batch % len(groups)] += 1
        picks = [rng.choice(g, size=c, replace=len(g) < c)
                 for g, c in zip(groups, counts) if c]
        out = np.concatenate(picks)
        return out[rng.permutation(len(out))]

    def save(self, path) -> None:
        if self._open_episode is not None:
            raise PreconditionError("cannot save with an episode open")
        meta = {"geometry": self.geometry, "episodes": self.episodes,
                "steps": len(self)}
        blob = json.dumps(meta, sort_keys=True).encode()
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            arrays = {name: g.data for name, g in self._fields.items()}
            arrays["ep_start"] = self._ep_start.data
            arrays["ep_id"] = self._ep_id.data
            arrays["shape_id"] = self._shape_id.data
            f.write(struct.pack("<I", len(arrays)))
            for name in sorted(arrays):
                a = np.ascontiguousarray(arrays[name])
                nb = name.encode()
                f.write(struct.pack("<H", len(nb)))
                f.write(nb)
                db = str(a.dtype).encode()
                f.write(struct.pack("<H", len(db)))
                f.write(db)
                f.write(struct.pack("<B", a.ndim))
                for d in a.shape:
                    f.write(struct.pack("<I", d))
                f.write(a.astype(a.dtype.newbyteorder("<")).tobytes())
        os.replace(tmp, path)

    @staticmethod
    def load(path) -> "AggregatedDataset":
        def read(f, n, what):
            b = f.read(n)
            if len(b) != n:
                raise ConfigError(f"{path}: truncated dataset while reading {what}")
            return b

        with open(path, "rb") as f:
            if read(f, 4, "magic") != MAGIC:
                raise ConfigError(f"{path}: not a dataset file")
            version = struct.unpack("<I", read(f, 4, "version"))[0]
            if version != VERSION:
                raise ConfigError(f"{path}: dataset version {version}, "
                                  f"expected {VERSION}")
            blob = read(f, struct.unpack("<I", read(f, 4, "meta size"))[0], "meta")
            meta = json.loads(blob)
            ds = AggregatedDataset(meta["geometry"])
            count = struct.unpack("<I", read(f, 4, "array count"))[0]
            arrays = {}
            for _ in range(count):
                nlen = struct.unpack("<H", read(f, 2, "name size"))[0]
                name = read(f, nlen, "name").decode()
                dlen = struct.unpack("<H", read(f, 2, "dtype size"))[0]
                dtype = np.dtype(read(f, dlen, "dtype").decode())
                ndim = struct.unpack("<B", read(f, 1, "rank"))[0]
                shape = tuple(struct.unpack("<I", read(f, 4, "dim"))[0]
                              for _ in range(ndim))
                nb = int(np.prod(shape)) * dtype.itemsize if ndim else dtype.itemsize
                a = np.frombuffer(read(f, nb, f"tensor {name}"),
                                  dtype=dtype.newbyteorder("<")).astype(dtype)
                arrays[name] = a.reshape(shape)
        n = meta["steps"]
        for name, g in ds._fields.items():
            a = arrays[name]
            if a.shape != (n,) + g.trailing:
                raise ConfigError(f"{path}: field {name} shape {a.shape} "
                                  f"inconsistent with geometry")
            g._buf = a.copy()
            g.n = n
        for attr, name in (("_ep_start", "ep_start"), ("_ep_id", "ep_id"),
                           ("_shape_id", "shape_id")):
            g = getattr(ds, attr)
            g._buf = arrays[name].copy()
            g.n = n
        ds.episodes = meta["episodes"]
        return ds
