"""Observation assembly: depth render, segmented clouds, tactile triplet.

observe() is pure given (state, camera, reference pool, seed); the only
mutable helper is the socket-layer cache, which is a pure memoization (the
socket is static within an episode) and never changes results.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..geom import DeltaPose, Pose
from .camera import (CameraModel, PointCloud, LABEL_OBJECT, LABEL_SOCKET,
                     backproject, render_depth, render_socket_layer, downsample)
from .tactile import TactileImage, render_tactile, subtract_reference

DEFAULT_CLOUD_POINTS = 128
DEFAULT_GRASP_FORCE = 5.0


@dataclass
class ObsBundle:
    """Everything the student policy may see at one step."""

    tactile: list
    object_cloud: PointCloud
    socket_cloud: PointCloud
    ee_pose: Pose
    last_action: DeltaPose


class SocketLayerCache:
    """Memoizes render_socket_layer keyed by socket geometry, pose and camera."""

    def __init__(self, maxsize: int = 64):
        self.maxsize = maxsize
        self._store = OrderedDict()

    @staticmethod
    def _key(socket, cam):
        return (socket.shape, socket.dimensions, socket.scale, socket.clearance,
                socket.height,
                tuple(socket.pose.position), tuple(socket.pose.orientation),
                cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height,
                tuple(cam.pose.position), tuple(cam.pose.orientation))

    def get(self, socket, cam):
        key = self._key(socket, cam)
        if key not in self._store:
            if len(self._store) >= self.maxsize:
                self._store.popitem(last=False)
            self._store[key] = render_socket_layer(socket, cam)
        self._store.move_to_end(key)
        return self._store[key]


def observe(state, cam: CameraModel, ref_pool: list, seed,
            n_object: int = DEFAULT_CLOUD_POINTS,
            n_socket: int = DEFAULT_CLOUD_POINTS,
            grasp_force: float = DEFAULT_GRASP_FORCE,
            cache: SocketLayerCache | None = None) -> ObsBundle:
    """Render and bundle one observation.

    Draw order on the seed stream is frozen (object cloud, socket cloud,
    then one reference pick per finger); changing it breaks recorded-run
    reproducibility.
    """
    rng = np.random.default_rng(seed)
    layer = cache.get(state.socket, cam) if cache is not None else None
    depth, seg = render_depth(state, cam, socket_layer=layer)
    object_cloud = downsample(backproject(depth, seg, LABEL_OBJECT, cam), n_object, rng)
    socket_cloud = downsample(backproject(depth, seg, LABEL_SOCKET, cam), n_socket, rng)
    tactile = []
    for finger in range(3):
        raw = render_tactile(state.contact_wrench, grasp_force, finger,
                             grasp_offset=state.grasp_offset,
                             resolution=ref_pool[0].values.shape[0] if ref_pool
                             else 32)
        ref = ref_pool[int(rng.integers(len(ref_pool)))] if ref_pool else \
            TactileImage(np.zeros_like(raw.values))
        tactile.append(subtract_reference(raw, ref))
    return ObsBundle(tactile, object_cloud, socket_cloud,
                     state.ee_pose, state.last_action)


def write_pgm(path, array: np.ndarray) -> None:
    """8-bit binary PGM dump, array min/max stretched to 0..255."""
    a = np.asarray(array, dtype=float)
    lo, hi = float(a.min()), float(a.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = ((a - lo) * scale).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


def write_xyz(path, cloud: PointCloud) -> None:
    """Plain-text xyz rows, one point per line."""
    np.savetxt(path, cloud.points, fmt="%.6f")
