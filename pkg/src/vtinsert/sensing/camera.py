"""Analytic depth camera: pinhole rays against the object prism and socket body.

Depth values are z-depth along the optical axis (camera frame), so
backprojection is X = depth * K^-1 (u, v, 1). The socket body is a box with
the cavity prism carved out of it; rays are intersected with each solid by
interval arithmetic (entry/exit parameters), and the nearest hit across
bodies wins the pixel. Pixels that hit nothing stay invalid; they are never
silently zero-filled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..geom import Pose, quat_conj, quat_from_matrix, quat_rotate
from ..env.config import SocketSpec
from ..env.contact import segment_outside_spans

LABEL_BACKGROUND = 0
LABEL_OBJECT = 1
LABEL_SOCKET = 2

SOCKET_MARGIN = 0.05
SOCKET_BASE_THICKNESS = 0.01
_RAY_MIN = 1e-6
_EPS = 1e-12


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics in pixels, extrinsic pose maps camera -> world.

    Camera frame: +z optical axis, +x right, +y down (image v grows with y).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    pose: Pose
    width: int = 128
    height: int = 128
    fov: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image")

    @staticmethod
    def from_fov(fov: float, pose: Pose, width: int = 128, height: int = 128) -> "CameraModel":
        """Square-pixel camera; fov is the horizontal field of view in rad."""
        if not 0 < fov < np.pi:
            raise ConfigError(f"field of view must be in (0, pi), got {fov}")
        f = (width / 2.0) / np.tan(fov / 2.0)
        return CameraModel(f, f, (width - 1) / 2.0, (height - 1) / 2.0,
                           pose, width, height, fov)


@dataclass
class DepthImage:
    """(H, W) z-depth in meters plus validity mask; invalid pixels are flagged."""

    depth: np.ndarray
    valid: np.ndarray


@dataclass
class SegMask:
    """(H, W) labels: 0 background, 1 object, 2 socket."""

    labels: np.ndarray


@dataclass
class PointCloud:
    """(n, 3) points in the base frame; empty flags an all-zero placeholder."""

    points: np.ndarray
    empty: bool = False


def look_at(eye, target) -> Pose:
    """Camera pose at eye with the optical axis through target, image v downward."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z = z / np.linalg.norm(z)
    ref = np.array([0.0, 0.0, 1.0])
    if abs(float(z @ ref)) > 0.999:
        ref = np.array([1.0, 0.0, 0.0])
    x = np.cross(z, ref)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(eye, quat_from_matrix(np.column_stack([x, y, z])))


def _pixel_dirs(cam: CameraModel) -> np.ndarray:
    """Per-pixel ray directions, camera frame, scaled so z == 1."""
    u = (np.arange(cam.width) - cam.cx) / cam.fx
    v = (np.arange(cam.height) - cam.cy) / cam.fy
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu, vv, np.ones_like(uu)], axis=-1).reshape(-1, 3)


def project(points: np.ndarray, cam: CameraModel):
    """World points -> (uv (n, 2), z-depth (n,)). Points behind the camera get z <= 0."""
    rel = np.atleast_2d(points) - cam.pose.position
    x_cam = quat_rotate(quat_conj(cam.pose.orientation), rel)
    z = x_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * x_cam[:, 0] / z + cam.cx
        v = cam.fy * x_cam[:, 1] / z + cam.cy
    return np.stack([u, v], axis=1), z


def _convex_interval(o: np.ndarray, d: np.ndarray, poly: np.ndarray,
                     z0: float, z1: float):
    """Ray parameter interval inside a convex extruded polygon.

    o (3,) shared origin, d (r, 3) directions. Returns (t_in, t_out, hit).
    """
    edge = np.roll(poly, -1, axis=0) - poly
    normal = np.stack([-edge[:, 1], edge[:, 0]], axis=1)  # inward for CCW
    c = ((poly - o[:2]) * normal).sum(axis=1)
    denom = d[:, :2] @ normal.T
    denom = np.concatenate([denom, d[:, 2:3], -d[:, 2:3]], axis=1)
    c = np.concatenate([c, [z0 - o[2]], [o[2] - z1]])
    pos = denom > 1e-15
    neg = denom < -1e-15
    with np.errstate(divide="ignore", invalid="ignore"):
        t = c[None, :] / denom
    t_in = np.maximum(np.where(pos, t, -np.inf).max(axis=1), _RAY_MIN)
    t_out = np.where(neg, t, np.inf).min(axis=1)
    miss = (~pos & ~neg & (c[None, :] > 0)).any(axis=1)
    return t_in, t_out, (t_in <= t_out) & ~miss


def _generic_intervals(o: np.ndarray, d: np.ndarray, poly: np.ndarray,
                       z0: float, z1: float):
    """Per-ray inside intervals for a possibly concave extruded polygon.

    Returns a list (len r) of [(t_in, t_out), ...]; exact crossing parity on
    the ray clipped to the z slab.
    """
    r = len(d)
    dz = np.where(np.abs(d[:, 2]) < _EPS, _EPS, d[:, 2])
    ta = (z0 - o[2]) / dz
    tb = (z1 - o[2]) / dz
    lo = np.maximum(np.minimum(ta, tb), _RAY_MIN)
    hi = np.maximum(np.maximum(ta, tb), _RAY_MIN)
    flat = np.abs(d[:, 2]) < _EPS
    if flat.any():
        inside_slab = (o[2] >= z0) & (o[2] <= z1)
        lo = np.where(flat, _RAY_MIN if inside_slab else 1.0, lo)
        hi = np.where(flat, 1e3 if inside_slab else 0.0, hi)
    ok = hi > lo
    out = [[] for _ in range(r)]
    if not ok.any():
        return out
    idx = np.nonzero(ok)[0]
    q0 = (o[None, :] + lo[idx, None] * d[idx])[:, :2]
    q1 = (o[None, :] + hi[idx, None] * d[idx])[:, :2]
    spans = segment_outside_spans(q0, q1, poly)
    # complement of the outside spans, mapped back to ray parameters
    outside = [[] for _ in range(len(idx))]
    for i, sa, sb in spans:
        outside[i].append((sa, sb))
    for k, row in enumerate(outside):
        i = idx[k]
        cursor = 0.0
        for sa, sb in sorted(row):
            if sa > cursor + _EPS:
                out[i].append((lo[i] + cursor * (hi[i] - lo[i]),
                               lo[i] + sa * (hi[i] - lo[i])))
            cursor = max(cursor, sb)
        if cursor < 1.0 - _EPS:
            out[i].append((lo[i] + cursor * (hi[i] - lo[i]), hi[i]))
    return out


def _prism_entry(o: np.ndarray, d: np.ndarray, poly: np.ndarray,
                 z0: float, z1: float, convex: bool) -> np.ndarray:
    """First ray parameter on the extruded polygon's surface, inf when missed."""
    if convex:
        t_in, _, hit = _convex_interval(o, d, poly, z0, z1)
        return np.where(hit, t_in, np.inf)
    spans = _generic_intervals(o, d, poly, z0, z1)
    t = np.full(len(d), np.inf)
    for i, row in enumerate(spans):
        if row:
            t[i] = row[0][0]
    return t


def _socket_hit(o: np.ndarray, d: np.ndarray, socket: SocketSpec) -> np.ndarray:
    """First ray parameter on the socket body (box minus cavity prism), inf on miss."""
    cavity = socket.cavity_polygon()
    half = float(np.abs(cavity).max()) + SOCKET_MARGIN
    box = np.array([[-half, -half], [half, -half], [half, half], [-half, half]])
    tb0, tb1, bhit = _convex_interval(o, d, box, -SOCKET_BASE_THICKNESS, socket.height)
    t = np.where(bhit, tb0, np.inf)
    if not bhit.any():
        return t
    if socket.shape != "flower":
        tc0, tc1, chit = _convex_interval(o, d, cavity, 0.0, socket.height)
        # entered the box through the cavity void: first solid point is the
        # cavity exit (wall or floor), or nothing if the ray leaves the box first
        inside_void = bhit & chit & (tb0 >= tc0 - 1e-9)
        t = np.where(inside_void, np.where(tc1 <= tb1 + 1e-9, tc1, np.inf), t)
        return t
    rows = _generic_intervals(o, d, cavity, 0.0, socket.height)
    for i in np.nonzero(bhit)[0]:
        ti = tb0[i]
        for ta, tbb in rows[i]:
            if ti >= ta - 1e-9 and ti <= tbb + 1e-9:
                ti = tbb if tbb <= tb1[i] + 1e-9 else np.inf
                break
        t[i] = ti
    return t


def _bbox_pixels(cam: CameraModel, corners: np.ndarray, pad: int = 2):
    """Flat pixel indices covering the projected corners, or None for all."""
    uv, z = project(corners, cam)
    if (z <= 1e-6).any():
        return None
    u0 = max(int(np.floor(uv[:, 0].min())) - pad, 0)
    u1 = min(int(np.ceil(uv[:, 0].max())) + pad, cam.width - 1)
    v0 = max(int(np.floor(uv[:, 1].min())) - pad, 0)
    v1 = min(int(np.ceil(uv[:, 1].max())) + pad, cam.height - 1)
    if u0 > u1 or v0 > v1:
        return np.empty(0, dtype=int)
    uu, vv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
    return (vv * cam.width + uu).ravel()


def _prism_corners(pose: Pose, poly: np.ndarray, z0: float, z1: float) -> np.ndarray:
    base = np.concatenate([poly, np.full((len(poly), 1), z0)], axis=1)
    top = np.concatenate([poly, np.full((len(poly), 1), z1)], axis=1)
    return pose.transform_point(np.concatenate([base, top]))


def render_socket_layer(socket: SocketSpec, cam: CameraModel):
    """Depth and hit mask of the socket body alone; cacheable per episode."""
    dirs_cam = _pixel_dirs(cam)
    r_cam = cam.pose.matrix()
    dirs_world = dirs_cam @ r_cam.T
    depth = np.full(cam.width * cam.height, np.inf)

    cavity = socket.cavity_polygon()
    half = float(np.abs(cavity).max()) + SOCKET_MARGIN
    corners = _prism_corners(socket.pose,
                             np.array([[-half, -half], [half, -half],
                                       [half, half], [-half, half]]),
                             -SOCKET_BASE_THICKNESS, socket.height)
    sel = _bbox_pixels(cam, corners)
    if sel is None:
        sel = np.arange(cam.width * cam.height)
    if len(sel):
        inv = socket.pose.inverse()
        o = inv.transform_point(cam.pose.position)
        d = quat_rotate(inv.orientation, dirs_world[sel])
        depth[sel] = _socket_hit(o, d, socket)
    shape = (cam.height, cam.width)
    return depth.reshape(shape), np.isfinite(depth).reshape(shape)


def render_depth(state, cam: CameraModel, socket_layer=None):
    """Ray-cast the scene into (DepthImage, SegMask).

    socket_layer: optional precomputed render_socket_layer output; the socket
    is static within an episode so callers may cache it.
    """
    if socket_layer is None:
        socket_layer = render_socket_layer(state.socket, cam)
    sock_depth, sock_hit = socket_layer

    obj = state.object
    obj_depth = np.full(cam.width * cam.height, np.inf)
    poly = obj.polygon()
    sel = _bbox_pixels(cam, _prism_corners(state.object_pose, poly, 0.0, obj.height))
    if sel is None:
        sel = np.arange(cam.width * cam.height)
    if len(sel):
        dirs_cam = _pixel_dirs(cam)[sel]
        dirs_world = dirs_cam @ cam.pose.matrix().T
        inv = state.object_pose.inverse()
        o = inv.transform_point(cam.pose.position)
        d = quat_rotate(inv.orientation, dirs_world)
        obj_depth[sel] = _prism_entry(o, d, poly, 0.0, obj.height,
                                      convex=obj.shape != "flower")
    obj_depth = obj_depth.reshape(cam.height, cam.width)

    depth = np.where(obj_depth < sock_depth, obj_depth, sock_depth)
    valid = np.isfinite(depth)
    labels = np.zeros((cam.height, cam.width), dtype=np.uint8)
    labels[valid & (obj_depth <= sock_depth)] = LABEL_OBJECT
    labels[valid & (sock_depth < obj_depth)] = LABEL_SOCKET
    return (DepthImage(np.where(valid, depth, 0.0), valid), SegMask(labels))


def backproject(d: DepthImage, m: SegMask, label: int, cam: CameraModel) -> PointCloud:
    """Valid pixels with the given label -> base-frame points X = z * K^-1 (u, v, 1)."""
    if d.depth.shape != m.labels.shape:
        raise ConfigError(
            f"depth {d.depth.shape} and mask {m.labels.shape} resolutions differ")
    pick = d.valid & (m.labels == label)
    if not pick.any():
        return PointCloud(np.zeros((0, 3)), empty=True)
    v, u = np.nonzero(pick)
    z = d.depth[v, u]
    x_cam = np.stack([(u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z], axis=1)
    return PointCloud(cam.pose.transform_point(x_cam))


def downsample(c: PointCloud, n: int, seed) -> PointCloud:
    """Exactly n points: subsample without replacement, or resample when short.

    seed may be an int or a Generator. Empty input yields an all-zero cloud
    with the empty flag set.
    """
    if n < 1:
        raise ConfigError(f"cloud cardinality must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    k = len(c.points)
    if k == 0 or c.empty:
        return PointCloud(np.zeros((n, 3)), empty=True)
    idx = rng.choice(k, size=n, replace=k < n)
    return PointCloud(c.points[idx])
