import math
from typing import Iterable

import numpy as np
from scipy.spatial import ConvexHull

from src.errors import DegenerateGeometryError, PreconditionError, UndefinedIoUError
from src.schemas import (
    Ellipse,
    RasterFrame,
    RasterGrid,
    SimplePolygon,
    signed_area,
)

_EDGE_TOLERANCE = 1e-9
_CONVEX_TOLERANCE = 1e-9


def polygon_area(polygon: SimplePolygon) -> float:
    """
    Area of a simple polygon by the shoelace formula.

    Parameters
    ----------
    polygon : SimplePolygon
        Valid polygon.

    Returns
    -------
    float
        Positive area in pixels².

    Raises
    ------
    DegenerateGeometryError
        If all vertices are collinear.
    """
    area = abs(signed_area(polygon.array))
    if area <= 0.0:
        raise DegenerateGeometryError("Polygon has zero area")
    return area


def _cross(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def is_convex(polygon: SimplePolygon) -> bool:
    """Every turn of a positively oriented convex polygon is a left turn (or straight)."""
    v = polygon.array
    prev = np.roll(v, 1, axis=0)
    nxt = np.roll(v, -1, axis=0)
    turns = _cross(prev[:, 0], prev[:, 1], v[:, 0], v[:, 1], nxt[:, 0], nxt[:, 1])
    scale = max(1.0, float(np.abs(v).max())) ** 2
    return bool(np.all(turns >= -_CONVEX_TOLERANCE * scale))


def clip_convex(subject: SimplePolygon, clip: SimplePolygon) -> SimplePolygon | None:
    """
    Intersect two convex polygons with Sutherland-Hodgman clipping.

    Returns None when the intersection is empty or has zero area.

    Raises
    ------
    PreconditionError
        If either polygon is not convex.
    """
    if not is_convex(subject) or not is_convex(clip):
        raise PreconditionError("clip_convex requires convex polygons")

    output = [tuple(p) for p in subject.array]
    clip_vertices = [tuple(p) for p in clip.array]
    cp1 = clip_vertices[-1]
    for cp2 in clip_vertices:
        if not output:
            return None
        nx, ny = cp2[0] - cp1[0], cp2[1] - cp1[1]

        def inside(p):
            return nx * (p[1] - cp1[1]) - ny * (p[0] - cp1[0]) >= 0.0

        def intersection(s, e):
            dx, dy = e[0] - s[0], e[1] - s[1]
            denominator = nx * dy - ny * dx
            t = (nx * (cp1[1] - s[1]) - ny * (cp1[0] - s[0])) / denominator
            return (s[0] + t * dx, s[1] + t * dy)

        candidates = output
        output = []
        s = candidates[-1]
        for e in candidates:
            if inside(e):
                if not inside(s):
                    output.append(intersection(s, e))
                output.append(e)
            elif inside(s):
                output.append(intersection(s, e))
            s = e
        cp1 = cp2

    if len(output) < 3:
        return None
    try:
        return SimplePolygon.from_array(_drop_near_duplicates(output))
    except DegenerateGeometryError:
        return None


def _drop_near_duplicates(points: list[tuple[float, float]]) -> np.ndarray:
    kept: list[tuple[float, float]] = []
    for p in points:
        if not kept or math.dist(p, kept[-1]) > 1e-12:
            kept.append(p)
    if len(kept) > 1 and math.dist(kept[0], kept[-1]) <= 1e-12:
        kept.pop()
    return np.array(kept, dtype=float)


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Hull vertices of a 2D point cloud, positively oriented."""
    points = np.asarray(points, dtype=float)
    hull = ConvexHull(points)
    return points[hull.vertices]


def _inside_polygon(px: np.ndarray, py: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """
    Even-odd test of cell centers against a polygon; points on an edge count as inside.

    ``px`` broadcasts along columns (shape ``(1, W)``) and ``py`` along rows
    (shape ``(H, 1)``).
    """
    shape = np.broadcast_shapes(px.shape, py.shape)
    inside = np.zeros(shape, dtype=bool)
    on_edge = np.zeros(shape, dtype=bool)
    x0s, y0s = vertices[:, 0], vertices[:, 1]
    x1s, y1s = np.roll(x0s, -1), np.roll(y0s, -1)
    for x0, y0, x1, y1 in zip(x0s, y0s, x1s, y1s):
        crosses = (y0 > py) != (y1 > py)
        if y1 != y0:
            x_at = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (px < x_at)
        length = math.hypot(x1 - x0, y1 - y0)
        cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        on_edge |= (
            (np.abs(cross) <= _EDGE_TOLERANCE * length)
            & (px >= min(x0, x1) - _EDGE_TOLERANCE)
            & (px <= max(x0, x1) + _EDGE_TOLERANCE)
            & (py >= min(y0, y1) - _EDGE_TOLERANCE)
            & (py <= max(y0, y1) + _EDGE_TOLERANCE)
        )
    return inside | on_edge


def ellipse_extent(ellipse: Ellipse) -> tuple[float, float]:
    """Half-width and half-height of the axis-aligned box around an ellipse."""
    t = math.radians(ellipse.theta)
    a, b = ellipse.semi_major, ellipse.semi_minor
    half_w = math.sqrt((a * math.cos(t)) ** 2 + (b * math.sin(t)) ** 2)
    half_h = math.sqrt((a * math.sin(t)) ** 2 + (b * math.cos(t)) ** 2)
    return half_w, half_h


def shape_bounds(shape: SimplePolygon | Ellipse) -> tuple[float, float, float, float]:
    if isinstance(shape, Ellipse):
        half_w, half_h = ellipse_extent(shape)
        return (
            shape.cx - half_w,
            shape.cy - half_h,
            shape.cx + half_w,
            shape.cy + half_h,
        )
    return shape.bounds()


def _window(frame: RasterFrame, bounds) -> tuple[int, int, int, int] | None:
    min_x, min_y, max_x, max_y = bounds
    col_lo = max(0, math.floor((min_x - frame.origin_x) * frame.scale - 0.5))
    col_hi = min(frame.width, math.ceil((max_x - frame.origin_x) * frame.scale + 0.5))
    row_lo = max(0, math.floor((min_y - frame.origin_y) * frame.scale - 0.5))
    row_hi = min(frame.height, math.ceil((max_y - frame.origin_y) * frame.scale + 0.5))
    if col_lo >= col_hi or row_lo >= row_hi:
        return None
    return row_lo, row_hi, col_lo, col_hi


def rasterize(shape: SimplePolygon | Ellipse | None, frame: RasterFrame) -> RasterGrid:
    """
    Mark every cell whose center lies inside ``shape``.

    Polygons use the even-odd rule, ellipses the quadratic-form test; centers
    on the boundary count as inside. Parts of the shape outside the frame are
    clipped. ``None`` stands for the empty shape and yields an empty grid.
    """
    occupancy = np.zeros((frame.height, frame.width), dtype=bool)
    if shape is None:
        return RasterGrid(frame, occupancy)
    window = _window(frame, shape_bounds(shape))
    if window is None:
        return RasterGrid(frame, occupancy)
    row_lo, row_hi, col_lo, col_hi = window
    px = frame.column_centers(col_lo, col_hi)[np.newaxis, :]
    py = frame.row_centers(row_lo, row_hi)[:, np.newaxis]
    if isinstance(shape, Ellipse):
        t = math.radians(shape.theta)
        dx, dy = px - shape.cx, py - shape.cy
        u = dx * math.cos(t) + dy * math.sin(t)
        v = -dx * math.sin(t) + dy * math.cos(t)
        block = (u / shape.semi_major) ** 2 + (v / shape.semi_minor) ** 2 <= 1.0 + 1e-12
    else:
        block = _inside_polygon(px, py, shape.array)
    occupancy[row_lo:row_hi, col_lo:col_hi] = block
    return RasterGrid(frame, occupancy)


def raster_iou(a: RasterGrid, b: RasterGrid) -> float:
    """
    Intersection over union of two rasters laid on the same frame.

    Raises
    ------
    PreconditionError
        If the frames differ.
    UndefinedIoUError
        If both rasters are empty.
    """
    if a.frame != b.frame:
        raise PreconditionError(
            f"raster_iou needs identical frames, got {a.frame} and {b.frame}"
        )
    union = int(np.count_nonzero(a.occupancy | b.occupancy))
    if union == 0:
        raise UndefinedIoUError("IoU of two empty rasters is undefined")
    intersection = int(np.count_nonzero(a.occupancy & b.occupancy))
    return intersection / union


def frame_covering(
    bounds: Iterable[tuple[float, float, float, float]], resolution: int
) -> RasterFrame:
    """
    Square-celled frame covering the union of ``bounds`` with ``resolution`` cells on its long side.
    """
    bounds = list(bounds)
    min_x = min(b[0] for b in bounds)
    min_y = min(b[1] for b in bounds)
    max_x = max(b[2] for b in bounds)
    max_y = max(b[3] for b in bounds)
    extent = max(max_x - min_x, max_y - min_y)
    if extent <= 0:
        raise DegenerateGeometryError("Cannot build a raster frame over zero extent")
    scale = resolution / extent
    return RasterFrame(
        width=max(1, math.ceil((max_x - min_x) * scale)),
        height=max(1, math.ceil((max_y - min_y) * scale)),
        origin_x=min_x,
        origin_y=min_y,
        scale=scale,
    )
