"""Cross-section catalog checks; areas verified against shapely."""

import numpy as np
import pytest
from shapely.geometry import Point, Polygon

from vtinsert import shapes


def test_catalog_names():
    assert set(shapes.SHAPE_NAMES) == {
        "cylinder", "ellipse", "triangle", "trapezoid", "rectangle", "hexagon", "flower",
    }
    assert set(shapes.DEFAULT_DIMENSIONS) == set(shapes.SHAPE_NAMES)


@pytest.mark.parametrize("name", shapes.SHAPE_NAMES)
def test_sections_are_simple_ccw_and_centered(name):
    poly = shapes.cross_section(name, shapes.DEFAULT_DIMENSIONS[name])
    assert poly.ndim == 2 and poly.shape[1] == 2
    sp = Polygon(poly)
    assert sp.is_valid and sp.is_simple
    area = shapes.polygon_area(poly)
    assert area == pytest.approx(sp.area)
    # CCW: shapely's orientation convention matches positive signed area
    assert Polygon(poly).exterior.is_ccw
    # centered near the axis: centroid within a quarter of the bounding radius
    centroid = np.asarray(sp.centroid.coords[0])
    assert np.linalg.norm(centroid) < 0.25 * np.abs(poly).max()


def test_cylinder_area_close_to_circle():
    d = 0.05
    poly = shapes.cross_section("cylinder", (d, 0, 0))
    exact = np.pi * (d / 2) ** 2
    n = shapes.CIRCLE_SEGMENTS
    inscribed = 0.5 * n * (d / 2) ** 2 * np.sin(2 * np.pi / n)
    assert shapes.polygon_area(poly) == pytest.approx(inscribed, rel=1e-12)
    assert shapes.polygon_area(poly) == pytest.approx(exact, rel=0.02)


def test_rectangle_vertices():
    poly = shapes.cross_section("rectangle", (0.04, 0.06, 0))
    assert shapes.polygon_area(poly) == pytest.approx(0.04 * 0.06)
    assert np.abs(poly[:, 0]).max() == pytest.approx(0.02)
    assert np.abs(poly[:, 1]).max() == pytest.approx(0.03)


def test_hexagon_across_flats():
    a = 0.04
    poly = shapes.cross_section("hexagon", (a, 0, 0))
    sp = Polygon(poly)
    # across-flats: the inscribed circle has diameter a
    assert sp.contains(Point(0, 0).buffer(a / 2 * 0.999))
    assert not sp.contains(Point(0, 0).buffer(a / 2 * 1.001))
    assert shapes.polygon_area(poly) == pytest.approx(np.sqrt(3) / 2 * a * a, rel=1e-12)


def test_flower_radii_span_lobes():
    a, b = 0.03, 0.06
    poly = shapes.cross_section("flower", (a, b, 0))
    r = np.linalg.norm(poly, axis=1)
    assert r.max() == pytest.approx(b / 2, rel=1e-9)
    assert r.min() == pytest.approx(a / 2, rel=1e-9)
    # six lobes: six local maxima at the outer radius
    assert (r > 0.99 * b / 2).sum() == 6


def test_scale_factor_scales_area_quadratically():
    for name in shapes.SHAPE_NAMES:
        base = shapes.polygon_area(shapes.cross_section(name, shapes.DEFAULT_DIMENSIONS[name]))
        scaled = shapes.polygon_area(
            shapes.cross_section(name, shapes.DEFAULT_DIMENSIONS[name], scale=1.1))
        assert scaled == pytest.approx(base * 1.1**2, rel=1e-12)


def test_unknown_shape_rejected():
    with pytest.raises(ValueError, match="unknown shape"):
        shapes.cross_section("torus", (0.05, 0, 0))


@pytest.mark.parametrize("name", shapes.SHAPE_NAMES)
def test_dilate_matches_shapely_buffer_distance(name):
    eps = 5e-4
    poly = shapes.cross_section(name, shapes.DEFAULT_DIMENSIONS[name])
    cavity = shapes.dilate(poly, eps)
    inner = Polygon(poly)
    outer = Polygon(cavity)
    assert outer.contains(inner)
    # every cavity vertex sits within [eps*(1-tol), eps] of the section
    d = np.array([inner.exterior.distance(Point(p)) for p in cavity])
    assert d.max() <= eps * 1.0000001
    assert d.min() >= eps * 0.985  # quad_segs=3 chord undershoot


def test_dilated_cavity_admits_shifted_object():
    # the object shifted by less than the clearance stays inside the cavity
    eps = 8e-4
    poly = shapes.cross_section("hexagon", shapes.DEFAULT_DIMENSIONS["hexagon"])
    cavity = Polygon(shapes.dilate(poly, eps))
    shifted = Polygon(poly + np.array([eps * 0.95, 0.0]))
    assert cavity.contains(shifted)
