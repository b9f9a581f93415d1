"""2.5D contact between a prismatic object and its socket.

The object's side surface is reduced to vertical columns (one per
cross-section vertex, subdivided for the non-convex flower). Each column is
clipped to the cavity zone 0 <= z < rim in the socket frame and partitioned
exactly into inside/outside sub-segments by intersecting its xy-line with
the cavity polygon edges. Outside sub-segments are violations; they are
removed by the smaller of two pure translations: a lateral shift into the
cavity or a vertical lift that raises every violating point above the rim.
Nothing may go below the cavity floor (z = 0). The contact wrench is
stiffness times the total correction, with torque about the object origin
from the centroid of violating points.

The rim plane extends laterally without bound, so a misaligned descent
always lands on the rim rather than the table beside the slab.
"""

from __future__ import annotations

import numpy as np

from ..geom import Pose, compose
from .config import ObjectSpec, SocketSpec

PENETRATION_TOL = 1e-6
STIFFNESS = 1e4
_EPS = 1e-12
_SUBDIV_FLOWER = 8


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Crossing-number test for (n, 2) points against a (m, 2) simple polygon."""
    x = points[:, 0:1]
    y = points[:, 1:2]
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    straddles = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    hits = straddles & (x < x_cross)
    return (hits.sum(axis=1) % 2).astype(bool)


def nearest_on_boundary(points: np.ndarray, poly: np.ndarray):
    """Closest boundary point and distance for each of (n, 2) query points."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a                                   # (m, 2)
    denom = np.maximum((ab * ab).sum(axis=1), _EPS)
    ap = points[:, None, :] - a[None, :, :]      # (n, m, 2)
    t = np.clip((ap * ab[None]).sum(axis=2) / denom, 0.0, 1.0)
    proj = a[None] + t[..., None] * ab[None]     # (n, m, 2)
    d2 = ((points[:, None, :] - proj) ** 2).sum(axis=2)
    k = np.argmin(d2, axis=1)
    rows = np.arange(len(points))
    return proj[rows, k], np.sqrt(d2[rows, k])


def outside_depths(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Distance to the polygon for points outside it, 0 inside. (n,)"""
    depths = np.zeros(len(points))
    outside = ~points_in_polygon(points, poly)
    if outside.any():
        _, d = nearest_on_boundary(points[outside], poly)
        depths[outside] = d
    return depths


def segment_outside_spans(q0: np.ndarray, q1: np.ndarray, poly: np.ndarray):
    """Exact outside intervals of 2D segments q0->q1 against a simple polygon.

    Returns a list of (i, ta, tb) with t in [0, 1] parameterizing column i;
    the open middle of each span lies strictly outside the polygon.
    """
    n = len(q0)
    d = q1 - q0                                   # (n, 2)
    a = poly                                      # (m, 2)
    e = np.roll(poly, -1, axis=0) - poly
    aq = a[None, :, :] - q0[:, None, :]           # (n, m, 2)
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    num_t = aq[..., 0] * e[None, :, 1] - aq[..., 1] * e[None, :, 0]
    num_s = aq[..., 0] * d[:, None, 1] - aq[..., 1] * d[:, None, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num_t / denom
        s = num_s / denom
    valid = (np.abs(denom) > 1e-18) & (s >= 0.0) & (s < 1.0) & (t > 0.0) & (t < 1.0)

    inside0 = points_in_polygon(q0, poly)
    spans = []
    any_cross = valid.any(axis=1)
    for i in np.nonzero(~any_cross & ~inside0)[0]:
        spans.append((int(i), 0.0, 1.0))
    for i in np.nonzero(any_cross)[0]:
        ts = np.sort(t[i][valid[i]])
        edges = np.concatenate([[0.0], ts, [1.0]])
        inside = bool(inside0[i])
        for k in range(len(edges) - 1):
            if not inside and edges[k + 1] - edges[k] > _EPS:
                spans.append((int(i), float(edges[k]), float(edges[k + 1])))
            inside = not inside
    return spans


def _column_bases(obj: ObjectSpec) -> np.ndarray:
    poly = obj.polygon()
    if obj.shape != "flower":
        return poly
    # Extra columns bound the chord penetration into the concave cavity.
    nxt = np.roll(poly, -1, axis=0)
    steps = np.arange(_SUBDIV_FLOWER) / _SUBDIV_FLOWER
    pts = poly[:, None, :] + steps[None, :, None] * (nxt - poly)[:, None, :]
    return pts.reshape(-1, 2)


def _clip_to_zone(a: np.ndarray, b: np.ndarray, socket_height: float):
    """Clip 3D segments a->b to 0 <= z < rim; drops segments fully outside."""
    dz = b[:, 2] - a[:, 2]
    dz = np.where(np.abs(dz) < _EPS, _EPS, dz)
    t0 = (0.0 - a[:, 2]) / dz
    t1 = (socket_height - _EPS - a[:, 2]) / dz
    t_lo = np.clip(np.minimum(t0, t1), 0.0, 1.0)
    t_hi = np.clip(np.maximum(t0, t1), 0.0, 1.0)
    # whole segment above or below the zone: clip collapses it
    zmin = np.minimum(a[:, 2], b[:, 2])
    zmax = np.maximum(a[:, 2], b[:, 2])
    keep = (t_hi > t_lo) & (zmin < socket_height - _EPS) & (zmax >= 0.0)
    if not keep.any():
        return np.empty((0, 3)), np.empty((0, 3))
    seg = b[keep] - a[keep]
    return a[keep] + t_lo[keep, None] * seg, a[keep] + t_hi[keep, None] * seg


def _column_segments(rel: Pose, obj: ObjectSpec, socket_height: float):
    """Side-surface segments clipped to the cavity zone, socket frame.

    Columns (vertical edges) plus the bottom/top ring edges: a tilted base
    can dip below the rim between columns, so the rings are containment
    constraints too. Ring edges come from the raw cross-section; subdivided
    column bases are collinear on them and add nothing. Returns
    (q0 (k, 3), q1 (k, 3), z_min) with z_min the lowest ring vertex (exact
    for the planar base, used by the floor constraint). Empty arrays when
    the object is entirely above the rim.
    """
    base = _column_bases(obj)
    ring = obj.polygon()
    lift3 = lambda xy, z: np.concatenate([xy, np.full((len(xy), 1), z)], axis=1)
    a = rel.transform_point(lift3(base, 0.0))
    b = rel.transform_point(lift3(base, obj.height))
    ra = rel.transform_point(lift3(ring, 0.0))
    rb = rel.transform_point(lift3(ring, obj.height))
    z_min = float(min(ra[:, 2].min(), rb[:, 2].min()))
    empty = np.empty((0, 3))
    if z_min >= socket_height - _EPS:
        return empty, empty, z_min

    starts = np.concatenate([a, ra, rb])
    ends = np.concatenate([b, np.roll(ra, -1, axis=0), np.roll(rb, -1, axis=0)])
    q0, q1 = _clip_to_zone(starts, ends, socket_height)
    return q0, q1, z_min


def _span_points(q0, q1, spans) -> np.ndarray:
    """3D sample points of outside spans: both ends plus the midpoint."""
    pts = []
    for i, ta, tb in spans:
        for t in (ta, 0.5 * (ta + tb), tb):
            pts.append(q0[i] + t * (q1[i] - q0[i]))
    return np.array(pts)


def _spans_depth(pts: np.ndarray, poly: np.ndarray) -> float:
    return float(outside_depths(pts[:, :2], poly).max()) if len(pts) else 0.0


def lateral_mtv(q0: np.ndarray, q1: np.ndarray, poly: np.ndarray, spans,
                bound: float = np.inf, max_iter: int = 48, tol: float = 1e-12):
    """Smallest xy shift that puts every column segment inside the polygon.

    Worst-violator push on span samples, re-verified exactly against the
    shifted columns. Exact in one step for a convex single-vertex overlap.
    Returns None when no shift of norm <= bound works (wedged object, or no
    progress for several pushes): the caller falls back to a vertical lift.
    """
    shift = np.zeros(2)
    best = np.inf
    stalls = 0
    for _ in range(max_iter):
        pts = _span_points(q0, q1, spans)
        if not len(pts):
            break
        q = pts[:, :2] + shift
        proj, dist = nearest_on_boundary(q, poly)
        outside = ~points_in_polygon(q, poly)
        dist = np.where(outside, dist, 0.0)
        worst = int(np.argmax(dist))
        if dist[worst] > tol:
            if dist[worst] >= best - tol:
                stalls += 1
                if stalls >= 6:
                    return None
            else:
                best = dist[worst]
                stalls = 0
            shift += (proj[worst] - q[worst]) * (1.0 + 1e-9)
            if np.linalg.norm(shift) > bound:
                return None
            continue
        # samples are clean; re-derive exact spans for the shifted columns
        spans = segment_outside_spans(q0[:, :2] + shift, q1[:, :2] + shift, poly)
        if not spans:
            break
        pts = _span_points(q0, q1, spans)
        if outside_depths(pts[:, :2] + shift, poly).max() <= tol:
            break  # residual spans merely graze the boundary
    else:
        return None
    return shift


def _inscribed_radius(poly: np.ndarray) -> float:
    """Radius of the largest origin-centered disc inside the polygon."""
    _, d = nearest_on_boundary(np.zeros((1, 2)), poly)
    return float(d[0])


def _detect(rel: Pose, socket: SocketSpec, obj: ObjectSpec):
    """One contact query: (correction (3,) socket frame, violating pts (k, 3))."""
    q0, q1, z_min = _column_segments(rel, obj, socket.height)
    cavity = socket.cavity_polygon()
    correction = np.zeros(3)

    if len(q0):
        # segments wholly inside the inscribed disc cannot leave the cavity;
        # skip them (exact: the disc is convex and origin-centered)
        r_in = _inscribed_radius(cavity)
        max_r = np.maximum(np.hypot(q0[:, 0], q0[:, 1]),
                           np.hypot(q1[:, 0], q1[:, 1]))
        cand = np.nonzero(max_r > r_in)[0]
        s0, s1 = q0[cand], q1[cand]
        spans = segment_outside_spans(s0[:, :2], s1[:, :2], cavity) if len(cand) else []
        if spans:
            pts = _span_points(s0, s1, spans)
            deep = _spans_depth(pts, cavity) > PENETRATION_TOL / 4
            if deep:
                lift = socket.height - float(pts[:, 2].min())
                # widen the candidate set so any shift up to the lift bound
                # is still verified exactly against every affected segment
                wide = np.nonzero(max_r > r_in - lift - 1e-12)[0]
                w0, w1 = q0[wide], q1[wide]
                pos = np.searchsorted(wide, cand)
                wspans = [(int(pos[i]), ta, tb) for i, ta, tb in spans]
                lat = lateral_mtv(w0, w1, cavity, wspans, bound=lift)
                lat_ok = lat is not None
                if lat_ok:
                    rest = segment_outside_spans(w0[:, :2] + lat, w1[:, :2] + lat,
                                                 cavity)
                    if rest:
                        rpts = _span_points(w0, w1, rest)
                        lat_ok = (_spans_depth(rpts[:, :2] + lat, cavity)
                                  <= PENETRATION_TOL / 2)
                if lat_ok and np.hypot(*lat) <= lift:
                    correction[:2] = lat
                else:
                    correction[2] = lift
                return correction, pts

    if z_min < 0.0:
        correction[2] = -z_min
        low = q0[q0[:, 2] <= PENETRATION_TOL] if len(q0) else np.empty((0, 3))
        return correction, low

    return correction, np.empty((0, 3))


def resolve_contact(object_pose: Pose, socket: SocketSpec, obj: ObjectSpec,
                    stiffness: float = STIFFNESS):
    """Remove object/socket interpenetration by a minimal translation.

    Returns (corrected_pose, wrench) with wrench = [force, torque] in world
    coordinates: force = stiffness * total correction, torque about the
    object origin from the violating-point centroid. Zero wrench when there
    is no contact.
    """
    pose = object_pose
    total = np.zeros(3)
    app_local = None
    r_sock = socket.pose.matrix()
    for _ in range(6):
        rel = compose(socket.pose.inverse(), pose)
        corr, viol = _detect(rel, socket, obj)
        if float(np.linalg.norm(corr)) < 1e-12:
            break
        corr_world = r_sock @ corr
        total += corr_world
        if app_local is None and len(viol):
            app_local = viol.mean(axis=0)
        pose = Pose(pose.position + corr_world, pose.orientation)

    wrench = np.zeros(6)
    if np.linalg.norm(total) > 0.0:
        force = stiffness * total
        wrench[:3] = force
        if app_local is not None:
            app_world = socket.pose.transform_point(app_local)
            wrench[3:] = np.cross(app_world - pose.position, force)
    return pose, wrench


def penetration_depth(object_pose: Pose, socket: SocketSpec, obj: ObjectSpec) -> float:
    """Worst violation depth (m): each violating point's cheapest escape,
    lateral to the cavity boundary or vertical past the rim; plus any floor
    breach."""
    rel = compose(socket.pose.inverse(), object_pose)
    q0, q1, z_min = _column_segments(rel, obj, socket.height)
    depth = max(0.0, -z_min)
    if len(q0):
        cavity = socket.cavity_polygon()
        r_in = _inscribed_radius(cavity)
        max_r = np.maximum(np.hypot(q0[:, 0], q0[:, 1]),
                           np.hypot(q1[:, 0], q1[:, 1]))
        keep = max_r > r_in
        q0, q1 = q0[keep], q1[keep]
        spans = segment_outside_spans(q0[:, :2], q1[:, :2], cavity) if keep.any() else []
        if spans:
            pts = _span_points(q0, q1, spans)
            lateral = outside_depths(pts[:, :2], cavity)
            vertical = socket.height - pts[:, 2]
            escape = np.minimum(lateral, np.where(lateral > 0, vertical, 0.0))
            depth = max(depth, float(escape.max()))
    return depth
