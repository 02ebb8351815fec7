import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np

from src.config import (
    ELLIPSE_ARC_SEGMENTS,
    POLAR_RADIUS_RULE,
    POLAR_RAY_STEP,
    RASTER_RESOLUTION,
    RASTER_SUPERSAMPLING,
)
from src.errors import DegenerateGeometryError, PreconditionError, UndefinedIoUError
from src.geometry import (
    clip_convex,
    convex_hull,
    frame_covering,
    polygon_area,
    raster_iou,
    rasterize,
    shape_bounds,
)
from src.schemas import (
    BoundingBox,
    Ellipse,
    InstanceMask,
    OrientedBox,
    PolarPolygon,
    RasterFrame,
    RasterGrid,
    Representation,
    Shape,
    SimplePolygon,
)

logger = logging.getLogger(__name__)

POLAR_RADIUS_RULES = ("ray", "bin")


@dataclass(frozen=True)
class IoUConfig:
    """
    Resolution settings for the raster IoU path.

    Attributes
    ----------
    supersampling : int
        Sub-cells per mask cell along each axis when a mask is involved.
    resolution : int
        Cells along the long side of the frame when no mask fixes the frame.
    arc_segments : int
        Vertices used when an ellipse must be turned into a polygon.
    """

    supersampling: int = RASTER_SUPERSAMPLING
    resolution: int = RASTER_RESOLUTION
    arc_segments: int = ELLIPSE_ARC_SEGMENTS

    def __post_init__(self):
        if self.supersampling < 1 or self.resolution < 1:
            raise PreconditionError("IoUConfig needs supersampling, resolution >= 1")


def _require_mask(mask: InstanceMask) -> None:
    if mask.is_empty:
        raise PreconditionError("Conversion needs a mask with at least one occupied cell")


def _occupied_extent(mask: InstanceMask) -> tuple[int, int, int, int]:
    """Return ``(row_lo, row_hi, col_lo, col_hi)`` of occupied cells, hi exclusive."""
    rows = np.flatnonzero(mask.occupancy.any(axis=1))
    cols = np.flatnonzero(mask.occupancy.any(axis=0))
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def mask_to_bounding_box(mask: InstanceMask) -> BoundingBox:
    """Tightest axis-aligned box around the occupied cells (cell extents, not centers)."""
    _require_mask(mask)
    frame = mask.grid.frame
    row_lo, row_hi, col_lo, col_hi = _occupied_extent(mask)
    x0 = frame.origin_x + col_lo / frame.scale
    x1 = frame.origin_x + col_hi / frame.scale
    y0 = frame.origin_y + row_lo / frame.scale
    y1 = frame.origin_y + row_hi / frame.scale
    return BoundingBox((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)


def _cell_corner_points(mask: InstanceMask) -> np.ndarray:
    """Corners of the leftmost and rightmost occupied cell of every row.

    Their hull equals the hull of all occupied-cell corners.
    """
    frame = mask.grid.frame
    occupancy = mask.occupancy
    rows = np.flatnonzero(occupancy.any(axis=1))
    left = occupancy[rows].argmax(axis=1)
    right = occupancy.shape[1] - 1 - occupancy[rows, ::-1].argmax(axis=1)
    xs = np.concatenate([left, left, right + 1, right + 1])
    ys = np.concatenate([rows, rows + 1, rows, rows + 1])
    return np.stack(
        [frame.origin_x + xs / frame.scale, frame.origin_y + ys / frame.scale], axis=1
    )


def mask_to_oriented_box(mask: InstanceMask) -> OrientedBox:
    """
    Minimum-area rectangle enclosing the hull of the occupied-cell corners.

    Rotating calipers: the optimal rectangle has a side collinear with a hull
    edge, so only hull-edge directions (mod 90°) are tried. Ties keep the
    smallest angle, which makes axis-aligned rectangles come out at theta 0.
    """
    _require_mask(mask)
    hull = convex_hull(_cell_corner_points(mask))
    edges = np.roll(hull, -1, axis=0) - hull
    angles = np.mod(np.arctan2(edges[:, 1], edges[:, 0]), math.pi / 2)
    angles[angles > math.pi / 2 - 1e-9] = 0.0
    angles = np.unique(np.round(angles, 12))

    best = None
    for alpha in angles:
        c, s = math.cos(alpha), math.sin(alpha)
        u = hull[:, 0] * c + hull[:, 1] * s
        v = -hull[:, 0] * s + hull[:, 1] * c
        w = float(u.max() - u.min())
        h = float(v.max() - v.min())
        area = w * h
        if best is None or area < best[0] * (1 - 1e-9):
            uc = (u.max() + u.min()) / 2
            vc = (v.max() + v.min()) / 2
            best = (area, float(alpha), w, h, uc * c - vc * s, uc * s + vc * c)
    _, alpha, w, h, cx, cy = best
    return OrientedBox(float(cx), float(cy), w, h, math.degrees(alpha)).canonical()


def mask_to_ellipse(mask: InstanceMask) -> Ellipse:
    """Ellipse inscribed in the minimum-area rectangle: same center and angle, half extents."""
    box = mask_to_oriented_box(mask)
    return Ellipse(box.cx, box.cy, box.w / 2, box.h / 2, box.theta)


def _cell_centers(mask: InstanceMask) -> tuple[np.ndarray, np.ndarray]:
    frame = mask.grid.frame
    rows, cols = np.nonzero(mask.occupancy)
    return (
        frame.origin_x + (cols + 0.5) / frame.scale,
        frame.origin_y + (rows + 0.5) / frame.scale,
    )


def _bin_radii(
    xs: np.ndarray, ys: np.ndarray, cx: float, cy: float, points: int
) -> np.ndarray:
    """Farthest occupied cell center within ±(180/R)° of every ray."""
    dx, dy = xs - cx, ys - cy
    step = 360.0 / points
    angles = np.mod(np.degrees(np.arctan2(dy, dx)), 360.0)
    bins = np.mod(np.floor(angles / step + 0.5).astype(int), points)
    radii = np.zeros(points)
    np.maximum.at(radii, bins, np.hypot(dx, dy))
    return radii


def _ray_radii(mask: InstanceMask, cx: float, cy: float, points: int) -> np.ndarray:
    """
    Distance at which each exact ray leaves its farthest occupied cell.

    NaN marks rays that meet no occupied cell.
    """
    frame = mask.grid.frame
    occupancy = mask.occupancy
    cell = 1.0 / frame.scale
    row_lo, row_hi, col_lo, col_hi = _occupied_extent(mask)
    corners_x = frame.origin_x + np.array([col_lo, col_hi]) * cell
    corners_y = frame.origin_y + np.array([row_lo, row_hi]) * cell
    reach = max(math.hypot(x - cx, y - cy) for x in corners_x for y in corners_y)
    step = POLAR_RAY_STEP * cell
    t = np.arange(0.0, reach + step, step)

    angles = np.deg2rad(np.arange(points) * (360.0 / points))
    dirs_x, dirs_y = np.cos(angles), np.sin(angles)
    cols = np.floor((cx + np.outer(dirs_x, t) - frame.origin_x) * frame.scale).astype(int)
    rows = np.floor((cy + np.outer(dirs_y, t) - frame.origin_y) * frame.scale).astype(int)
    valid = (cols >= 0) & (cols < frame.width) & (rows >= 0) & (rows < frame.height)
    hit = np.zeros(cols.shape, dtype=bool)
    hit[valid] = occupancy[rows[valid], cols[valid]]

    radii = np.full(points, np.nan)
    any_hit = hit.any(axis=1)
    last = hit.shape[1] - 1 - hit[:, ::-1].argmax(axis=1)
    for k in np.flatnonzero(any_hit):
        col, row = cols[k, last[k]], rows[k, last[k]]
        x0 = frame.origin_x + col * cell
        y0 = frame.origin_y + row * cell
        radii[k] = min(
            _slab_exit(cx, dirs_x[k], x0, x0 + cell),
            _slab_exit(cy, dirs_y[k], y0, y0 + cell),
        )
    return radii


def _slab_exit(origin: float, direction: float, lo: float, hi: float) -> float:
    if direction > 1e-12:
        return (hi - origin) / direction
    if direction < -1e-12:
        return (lo - origin) / direction
    return math.inf


def mask_to_polar_polygon(
    mask: InstanceMask, points: int, rule: str = POLAR_RADIUS_RULE
) -> PolarPolygon:
    """
    Sample a mask as R radii about the occupied-cell centroid.

    Parameters
    ----------
    mask : InstanceMask
        Non-empty instance mask.
    points : int
        Number of rays R; ray k points at ``k * 360 / R`` degrees.
    rule : {"ray", "bin"}, default="ray"
        ``"ray"``: radius is where ray k leaves its farthest occupied cell,
        falling back to the ``"bin"`` value for rays that meet no occupied
        cell. ``"bin"``: radius is the distance to the farthest occupied cell
        center within ±(180/R)° of ray k, 0 if there is none.

    Returns
    -------
    PolarPolygon
        ``pole_outside_mask`` is set when the centroid is not an occupied cell.
    """
    _require_mask(mask)
    if points < 3:
        raise PreconditionError(f"Polar sampling needs R >= 3, got {points}")
    if rule not in POLAR_RADIUS_RULES:
        raise PreconditionError(f"Unknown polar radius rule: {rule}")

    xs, ys = _cell_centers(mask)
    cx, cy = float(xs.mean()), float(ys.mean())
    frame = mask.grid.frame
    col = math.floor((cx - frame.origin_x) * frame.scale)
    row = math.floor((cy - frame.origin_y) * frame.scale)
    pole_outside = not (
        0 <= col < frame.width and 0 <= row < frame.height and mask.occupancy[row, col]
    )
    if pole_outside:
        logger.warning(
            "Pole (%.2f, %.2f) lies outside the mask; some radii may be 0", cx, cy
        )

    radii = _bin_radii(xs, ys, cx, cy, points)
    if rule == "ray":
        ray = _ray_radii(mask, cx, cy, points)
        radii = np.where(np.isnan(ray), radii, ray)
    return PolarPolygon(cx, cy, tuple(radii.tolist()), pole_outside_mask=pole_outside)


def polygon_parameter_count(points: int, sparse: bool = False) -> int:
    """Regression outputs per instance: one radius per ray, or (r, angle, extra) when sparse."""
    return 3 * points if sparse else points


def to_polygon(rep: Representation, arc_segments: int = ELLIPSE_ARC_SEGMENTS) -> SimplePolygon:
    """
    Vertex-list form of a representation.

    Boxes give 4-gons, ellipses ``arc_segments``-gons sampled uniformly in the
    parameter angle, polar polygons their R vertices.
    """
    if isinstance(rep, BoundingBox):
        hw, hh = rep.w / 2, rep.h / 2
        return SimplePolygon.from_array(
            [
                (rep.cx - hw, rep.cy - hh),
                (rep.cx + hw, rep.cy - hh),
                (rep.cx + hw, rep.cy + hh),
                (rep.cx - hw, rep.cy + hh),
            ]
        )
    if isinstance(rep, OrientedBox):
        t = math.radians(rep.theta)
        c, s = math.cos(t), math.sin(t)
        hw, hh = rep.w / 2, rep.h / 2
        local = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]
        return SimplePolygon.from_array(
            [(rep.cx + u * c - v * s, rep.cy + u * s + v * c) for u, v in local]
        )
    if isinstance(rep, Ellipse):
        if arc_segments < 8:
            raise PreconditionError(f"Ellipse needs at least 8 segments, got {arc_segments}")
        t = math.radians(rep.theta)
        c, s = math.cos(t), math.sin(t)
        params = np.arange(arc_segments) * (2 * math.pi / arc_segments)
        u = rep.semi_major * np.cos(params)
        v = rep.semi_minor * np.sin(params)
        return SimplePolygon.from_array(
            np.stack([rep.cx + u * c - v * s, rep.cy + u * s + v * c], axis=1)
        )
    if isinstance(rep, PolarPolygon):
        return SimplePolygon.from_array(polar_vertices(rep))
    raise PreconditionError(f"Not a representation: {type(rep).__name__}")


def polar_vertices(rep: PolarPolygon) -> np.ndarray:
    """The R vertices of a polar polygon, including those collapsed onto the pole."""
    radii = np.asarray(rep.radii)
    return np.array([rep.cx, rep.cy]) + radii[:, np.newaxis] * rep.directions()


def representation_bounds(rep: Representation) -> tuple[float, float, float, float]:
    """Return ``(min_x, min_y, max_x, max_y)``; defined for zero-area polar polygons too."""
    if isinstance(rep, Ellipse):
        return shape_bounds(rep)
    if isinstance(rep, PolarPolygon):
        vertices = polar_vertices(rep)
        min_x, min_y = vertices.min(axis=0)
        max_x, max_y = vertices.max(axis=0)
        return float(min_x), float(min_y), float(max_x), float(max_y)
    return to_polygon(rep).bounds()


def rasterizable(
    shape: Representation, arc_segments: int = ELLIPSE_ARC_SEGMENTS
) -> SimplePolygon | Ellipse | None:
    """
    Form of ``shape`` the rasterizer accepts.

    A polar polygon whose vertices span no area, as when the pole sits
    between two blobs and most rays miss, becomes ``None``: the empty shape.
    """
    if isinstance(shape, Ellipse):
        return shape
    if isinstance(shape, PolarPolygon):
        try:
            return to_polygon(shape)
        except DegenerateGeometryError:
            logger.debug("Polar polygon at (%.2f, %.2f) spans no area", shape.cx, shape.cy)
            return None
    return to_polygon(shape, arc_segments)


def _is_box(shape) -> bool:
    return isinstance(shape, (BoundingBox, OrientedBox))


def _canonical_pair(a, b):
    """Order a pair by type and parameters so the exact path is bit-symmetric."""
    key_a = (type(a).__name__, dataclasses.astuple(a))
    key_b = (type(b).__name__, dataclasses.astuple(b))
    return (a, b) if key_a <= key_b else (b, a)


def exact_box_iou(a: BoundingBox | OrientedBox, b: BoundingBox | OrientedBox) -> float:
    """IoU of two (oriented) boxes by convex clipping."""
    first, second = _canonical_pair(a, b)
    poly_a, poly_b = to_polygon(first), to_polygon(second)
    overlap = clip_convex(poly_a, poly_b)
    intersection = 0.0 if overlap is None else polygon_area(overlap)
    union = polygon_area(poly_a) + polygon_area(poly_b) - intersection
    return min(1.0, max(0.0, intersection / union))


def mask_window_frame(mask: InstanceMask, bounds, supersampling: int) -> tuple[RasterFrame, tuple]:
    """
    Supersampled frame over the part of the mask grid covering the mask's
    occupied cells and ``bounds``.

    Returns the frame and the ``(row_lo, row_hi, col_lo, col_hi)`` window in
    mask cells.
    """
    frame = mask.grid.frame
    row_lo, row_hi, col_lo, col_hi = (
        _occupied_extent(mask) if not mask.is_empty else (frame.height, 0, frame.width, 0)
    )
    if bounds is not None:
        min_x, min_y, max_x, max_y = bounds
        col_lo = min(col_lo, math.floor((min_x - frame.origin_x) * frame.scale))
        col_hi = max(col_hi, math.ceil((max_x - frame.origin_x) * frame.scale))
        row_lo = min(row_lo, math.floor((min_y - frame.origin_y) * frame.scale))
        row_hi = max(row_hi, math.ceil((max_y - frame.origin_y) * frame.scale))
    col_lo, row_lo = max(0, col_lo), max(0, row_lo)
    col_hi, row_hi = min(frame.width, col_hi), min(frame.height, row_hi)
    if col_lo >= col_hi or row_lo >= row_hi:
        col_lo, col_hi, row_lo, row_hi = 0, 1, 0, 1
    window = (row_lo, row_hi, col_lo, col_hi)
    sub = RasterFrame(
        width=(col_hi - col_lo) * supersampling,
        height=(row_hi - row_lo) * supersampling,
        origin_x=frame.origin_x + col_lo / frame.scale,
        origin_y=frame.origin_y + row_lo / frame.scale,
        scale=frame.scale * supersampling,
    )
    return sub, window


def supersample_mask(mask: InstanceMask, sub: RasterFrame, window, supersampling: int) -> RasterGrid:
    row_lo, row_hi, col_lo, col_hi = window
    block = mask.occupancy[row_lo:row_hi, col_lo:col_hi]
    fine = np.repeat(np.repeat(block, supersampling, axis=0), supersampling, axis=1)
    return RasterGrid(sub, fine)


def rasterize_against_mask(
    shape: Representation, mask: InstanceMask, cfg: IoUConfig
) -> tuple[RasterGrid, RasterGrid]:
    """Rasterize ``shape`` and ``mask`` on the mask's supersampled grid window."""
    target = rasterizable(shape, cfg.arc_segments)
    bounds = None if target is None else shape_bounds(target)
    sub, window = mask_window_frame(mask, bounds, cfg.supersampling)
    return rasterize(target, sub), supersample_mask(mask, sub, window, cfg.supersampling)


def common_frame(a: RasterFrame, b: RasterFrame) -> RasterFrame:
    """Smallest frame on the shared cell lattice of ``a`` and ``b`` covering both."""
    if a.scale != b.scale:
        raise PreconditionError(f"Frames of different scale: {a.scale} and {b.scale}")
    origin_x, origin_y = min(a.origin_x, b.origin_x), min(a.origin_y, b.origin_y)
    end_x = max(a.origin_x + a.width / a.scale, b.origin_x + b.width / b.scale)
    end_y = max(a.origin_y + a.height / a.scale, b.origin_y + b.height / b.scale)
    return RasterFrame(
        width=round((end_x - origin_x) * a.scale),
        height=round((end_y - origin_y) * a.scale),
        origin_x=origin_x,
        origin_y=origin_y,
        scale=a.scale,
    )


def representation_iou(a: Shape, b: Shape, cfg: IoUConfig | None = None) -> float:
    """
    IoU between any two representations or instance masks.

    Box and oriented-box pairs go through exact convex clipping; every pair
    involving an ellipse, a polar polygon or a mask goes through the raster
    oracle (on the mask's grid, supersampled, when a mask is involved).

    Raises
    ------
    UndefinedIoUError
        If both sides are empty.
    """
    cfg = cfg or IoUConfig()
    a_mask, b_mask = isinstance(a, InstanceMask), isinstance(b, InstanceMask)
    if a_mask and b_mask:
        if a.grid.frame != b.grid.frame:
            frame = common_frame(a.grid.frame, b.grid.frame)
            a, b = a.placed(frame), b.placed(frame)
        return raster_iou(a.grid, b.grid)
    if not a_mask and not b_mask and a == b:
        return 1.0
    if _is_box(a) and _is_box(b):
        return exact_box_iou(a, b)
    if a_mask or b_mask:
        mask, shape = (a, b) if a_mask else (b, a)
        shape_grid, mask_grid = rasterize_against_mask(shape, mask, cfg)
        return raster_iou(shape_grid, mask_grid)
    first, second = _canonical_pair(a, b)
    target_a = rasterizable(first, cfg.arc_segments)
    target_b = rasterizable(second, cfg.arc_segments)
    if target_a is None and target_b is None:
        raise UndefinedIoUError("IoU of two zero-area shapes is undefined")
    if target_a is None or target_b is None:
        return 0.0
    frame = frame_covering(
        [shape_bounds(target_a), shape_bounds(target_b)], cfg.resolution
    )
    return raster_iou(rasterize(target_a, frame), rasterize(target_b, frame))
