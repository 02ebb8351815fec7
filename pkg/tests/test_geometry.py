import math

import numpy as np
import pytest

from src.errors import DegenerateGeometryError, PreconditionError, UndefinedIoUError
from src.geometry import (
    clip_convex,
    frame_covering,
    is_convex,
    polygon_area,
    raster_iou,
    rasterize,
)
from src.schemas import Ellipse, RasterFrame, RasterGrid, SimplePolygon, signed_area


def square(x0, y0, side):
    return SimplePolygon.from_array(
        [(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)]
    )


def centered_square(side, angle_deg=0.0):
    t = math.radians(angle_deg)
    h = side / 2
    return SimplePolygon.from_array(
        [
            (u * math.cos(t) - v * math.sin(t), u * math.sin(t) + v * math.cos(t))
            for u, v in ((-h, -h), (h, -h), (h, h), (-h, h))
        ]
    )


def regular_polygon(n, radius=1.0):
    angles = np.arange(n) * 2 * math.pi / n
    return SimplePolygon.from_array(np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1))


def test_polygon_area_basic_shapes():
    assert polygon_area(square(0, 0, 1)) == pytest.approx(1.0)
    assert polygon_area(SimplePolygon.from_array([(0, 0), (2, 0), (0, 2)])) == pytest.approx(2.0)
    assert polygon_area(regular_polygon(12)) == pytest.approx(3.0)


def test_polygon_orientation_is_normalized():
    clockwise = SimplePolygon.from_array([(0, 0), (0, 1), (1, 1), (1, 0)])
    assert signed_area(clockwise.array) > 0
    again = SimplePolygon(clockwise.vertices)
    assert again.vertices == clockwise.vertices


def test_polygon_drops_repeated_vertices():
    polygon = SimplePolygon.from_array([(0, 0), (1, 0), (1, 0), (1, 1), (0, 0)])
    assert len(polygon.vertices) == 3


def test_collinear_polygon_is_degenerate():
    with pytest.raises(DegenerateGeometryError):
        SimplePolygon.from_array([(0, 0), (1, 1), (2, 2)])


def test_clip_convex_axis_aligned_overlap():
    overlap = clip_convex(square(0, 0, 2), square(1, 1, 2))
    assert overlap is not None
    assert polygon_area(overlap) == pytest.approx(1.0)
    assert overlap.bounds() == pytest.approx((1.0, 1.0, 2.0, 2.0))


def test_clip_convex_identity():
    unit = square(0, 0, 1)
    overlap = clip_convex(unit, unit)
    assert polygon_area(overlap) == pytest.approx(1.0)


def test_clip_convex_rotated_square_gives_octagon():
    overlap = clip_convex(centered_square(1.0), centered_square(1.0, 45.0))
    assert len(overlap.vertices) == 8
    assert polygon_area(overlap) == pytest.approx(2 * (math.sqrt(2) - 1), abs=1e-9)


def test_clip_convex_disjoint_is_empty():
    assert clip_convex(square(0, 0, 1), square(5, 5, 1)) is None


def test_clip_convex_rejects_non_convex():
    l_shape = SimplePolygon.from_array([(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)])
    assert not is_convex(l_shape)
    with pytest.raises(PreconditionError):
        clip_convex(l_shape, square(0, 0, 1))


def test_rasterize_exact_square_cover():
    grid = rasterize(square(0, 0, 10), RasterFrame(10, 10))
    assert grid.count == 100


def test_rasterize_empty_shape():
    grid = rasterize(None, RasterFrame(4, 4))
    assert grid.is_empty


def test_rasterize_clips_to_frame():
    grid = rasterize(square(-5, -5, 10), RasterFrame(10, 10))
    assert grid.count == 25


def test_rasterize_disk_area():
    grid = rasterize(Ellipse(64, 64, 50, 50), RasterFrame(128, 128))
    assert grid.count == pytest.approx(math.pi * 50**2, rel=0.01)


def test_rasterize_disk_converges_with_resolution():
    disk = Ellipse(0, 0, 1, 1)
    for resolution in (32, 128, 512):
        frame = frame_covering([(-1, -1, 1, 1)], resolution)
        area = rasterize(disk, frame).count * frame.cell_area
        assert abs(area - math.pi) < 4 / resolution


def test_zero_size_frame_is_rejected():
    with pytest.raises(PreconditionError):
        RasterFrame(0, 10)


def test_raster_iou_identity_and_disjoint():
    frame = RasterFrame(20, 20)
    a = rasterize(square(0, 0, 5), frame)
    b = rasterize(square(10, 10, 5), frame)
    assert raster_iou(a, a) == 1.0
    assert raster_iou(a, b) == 0.0


def test_raster_iou_overlapping_squares():
    frame = frame_covering([(0, 0, 3, 3)], 300)
    a = rasterize(square(0, 0, 2), frame)
    b = rasterize(square(1, 1, 2), frame)
    assert raster_iou(a, b) == pytest.approx(1 / 7, abs=0.01)
    assert raster_iou(a, b) == raster_iou(b, a)


def test_raster_iou_both_empty_is_undefined():
    empty = RasterGrid.empty(RasterFrame(3, 3))
    with pytest.raises(UndefinedIoUError):
        raster_iou(empty, empty)


def test_raster_iou_needs_same_frame():
    with pytest.raises(PreconditionError):
        raster_iou(RasterGrid.empty(RasterFrame(3, 3)), RasterGrid.empty(RasterFrame(4, 3)))


def test_convex_clip_agrees_with_raster():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = centered_square(rng.uniform(1, 3), rng.uniform(-90, 90))
        b_points = centered_square(rng.uniform(1, 3), rng.uniform(-90, 90)).array + rng.uniform(-1, 1, 2)
        b = SimplePolygon.from_array(b_points)
        overlap = clip_convex(a, b)
        exact = 0.0 if overlap is None else polygon_area(overlap) / polygon_area(a)
        frame = frame_covering([a.bounds(), b.bounds()], 512)
        region = rasterize(a, frame).occupancy
        raster = np.count_nonzero(region & rasterize(b, frame).occupancy) / np.count_nonzero(region)
        assert abs(exact - raster) <= 0.01
