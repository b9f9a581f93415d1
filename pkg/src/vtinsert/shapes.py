"""Cross-section catalog for the prismatic object set and matching socket cavities.

Every shape is a simple polygon in the body xy-plane, centered on the prism axis,
with CCW winding. Dimensions follow the object table: per-shape meaning of the
(a, b, c) dimension triple is documented on each builder. Units are meters.
"""

from __future__ import annotations

import numpy as np

CIRCLE_SEGMENTS = 24
FLOWER_SEGMENTS = 48


def _ring(radii: np.ndarray) -> np.ndarray:
    n = len(radii)
    ang = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return np.column_stack([radii * np.cos(ang), radii * np.sin(ang)])


def cylinder(a: float, b: float = 0.0, c: float = 0.0) -> np.ndarray:
    """a = diameter."""
    return _ring(np.full(CIRCLE_SEGMENTS, a / 2.0))


def ellipse(a: float, b: float, c: float = 0.0) -> np.ndarray:
    """a, b = minor/major axis lengths."""
    ang = np.linspace(0.0, 2.0 * np.pi, CIRCLE_SEGMENTS, endpoint=False)
    return np.column_stack([0.5 * a * np.cos(ang), 0.5 * b * np.sin(ang)])


def triangle(a: float, b: float, c: float = 0.0) -> np.ndarray:
    """Isoceles triangle with bounding box a x b, apex up, centroid at origin."""
    pts = np.array([[-a / 2.0, 0.0], [a / 2.0, 0.0], [0.0, b]])
    return pts - pts.mean(axis=0)


def trapezoid(a: float, b: float, c: float) -> np.ndarray:
    """Parallel sides a (top) and b (bottom), height c, centroid at origin."""
    pts = np.array([
        [-b / 2.0, 0.0], [b / 2.0, 0.0], [a / 2.0, c], [-a / 2.0, c],
    ])
    return pts - pts.mean(axis=0)


def rectangle(a: float, b: float, c: float = 0.0) -> np.ndarray:
    """a x b box."""
    return np.array([
        [-a / 2.0, -b / 2.0], [a / 2.0, -b / 2.0],
        [a / 2.0, b / 2.0], [-a / 2.0, b / 2.0],
    ])


def hexagon(a: float, b: float = 0.0, c: float = 0.0) -> np.ndarray:
    """Regular hexagon, a = across-flats width."""
    r = a / np.sqrt(3.0)  # circumradius from across-flats
    ang = np.pi / 6.0 + np.linspace(0.0, 2.0 * np.pi, 6, endpoint=False)
    return np.column_stack([r * np.cos(ang), r * np.sin(ang)])


def flower(a: float, b: float, c: float = 0.0) -> np.ndarray:
    """Six-lobed flower: a = inner (waist) diameter, b = outer (lobe) diameter."""
    ang = np.linspace(0.0, 2.0 * np.pi, FLOWER_SEGMENTS, endpoint=False)
    radii = (a + b) / 4.0 + (b - a) / 4.0 * np.cos(6.0 * ang)
    return np.column_stack([radii * np.cos(ang), radii * np.sin(ang)])


_BUILDERS = {
    "cylinder": cylinder,
    "ellipse": ellipse,
    "triangle": triangle,
    "trapezoid": trapezoid,
    "rectangle": rectangle,
    "hexagon": hexagon,
    "flower": flower,
}

SHAPE_NAMES = tuple(_BUILDERS)

# Per-shape default dimensions (m), loosely following the object table.
DEFAULT_DIMENSIONS = {
    "cylinder": (0.050, 0.0, 0.0),
    "ellipse": (0.035, 0.050, 0.0),
    "triangle": (0.041, 0.047, 0.0),
    "trapezoid": (0.030, 0.060, 0.020),
    "rectangle": (0.040, 0.060, 0.0),
    "hexagon": (0.040, 0.0, 0.0),
    "flower": (0.030, 0.060, 0.0),
}


def cross_section(shape: str, dimensions, scale: float = 1.0) -> np.ndarray:
    """Build the (n, 2) CCW cross-section polygon for a named shape, scaled by eta."""
    try:
        builder = _BUILDERS[shape]
    except KeyError:
        raise ValueError(f"unknown shape {shape!r}; known: {', '.join(SHAPE_NAMES)}") from None
    dims = tuple(float(d) for d in dimensions)
    poly = builder(*dims[:3]) * scale
    if _signed_area(poly) < 0:
        poly = poly[::-1]
    return poly


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_area(poly: np.ndarray) -> float:
    return abs(_signed_area(poly))


def dilate(poly: np.ndarray, clearance: float) -> np.ndarray:
    """Minkowski-dilate a cross-section by the clearance (socket cavity outline)."""
    from shapely.geometry import Polygon

    out = Polygon(poly).buffer(clearance, quad_segs=3, join_style="round")
    ring = np.asarray(out.exterior.coords)[:-1]  # shapely closes the ring
    if _signed_area(ring) < 0:
        ring = ring[::-1]
    return ring
