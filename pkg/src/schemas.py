import math
from dataclasses import dataclass, field, fields
from enum import Enum
from functools import cached_property
from typing import Union

import numpy as np

from src.errors import DegenerateGeometryError, PreconditionError

_AREA_TOLERANCE = 1e-12


class ClassLabel(Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"

    def __lt__(self, other):
        if not isinstance(other, ClassLabel):
            return NotImplemented
        return _CLASS_ORDER[self] < _CLASS_ORDER[other]


_CLASS_ORDER = {label: index for index, label in enumerate(ClassLabel)}


class CameraView(Enum):
    FV = "FV"
    RV = "RV"
    MLV = "MLV"
    MRV = "MRV"


class Head(Enum):
    BOX = "box"
    ORIENTED = "oriented"
    ELLIPSE = "ellipse"
    POLYGON = "polygon"


class EvalMode(Enum):
    REP_VS_REP = "repVsRep"
    REP_VS_INSTANCE = "repVsInstance"


class Occupancy(Enum):
    FREE = "free"
    OCCUPIED = "occupied"


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise PreconditionError(f"Point2 coordinates must be finite: {self}")

    def __lt__(self, other):
        if not isinstance(other, Point2):
            return NotImplemented
        return (self.x, self.y) < (other.x, other.y)


def signed_area(vertices: np.ndarray) -> float:
    """Shoelace signed area; positive when x-then-y ordering turns counter-clockwise."""
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class SimplePolygon:
    """
    Ordered vertex list of a simple polygon.

    Construction drops repeated consecutive vertices and normalizes the
    orientation so the signed shoelace area is positive. Normalizing an
    already normalized polygon returns the same vertices.
    """

    vertices: tuple[Point2, ...]

    def __post_init__(self):
        cleaned: list[Point2] = []
        for vertex in self.vertices:
            if not cleaned or vertex != cleaned[-1]:
                cleaned.append(vertex)
        while len(cleaned) > 1 and cleaned[0] == cleaned[-1]:
            cleaned.pop()
        if len(cleaned) < 3:
            raise DegenerateGeometryError(
                f"Polygon needs at least 3 distinct vertices, got {len(cleaned)}"
            )
        array = np.array([(v.x, v.y) for v in cleaned], dtype=float)
        area = signed_area(array)
        if abs(area) <= _AREA_TOLERANCE:
            raise DegenerateGeometryError("Polygon has zero area (collinear vertices)")
        if area < 0:
            cleaned.reverse()
        object.__setattr__(self, "vertices", tuple(cleaned))

    @classmethod
    def from_array(cls, points) -> "SimplePolygon":
        return cls(tuple(Point2(float(x), float(y)) for x, y in np.asarray(points)))

    @cached_property
    def array(self) -> np.ndarray:
        array = np.array([(v.x, v.y) for v in self.vertices], dtype=float)
        array.setflags(write=False)
        return array

    def bounds(self) -> tuple[float, float, float, float]:
        """Return ``(min_x, min_y, max_x, max_y)``."""
        return (
            float(self.array[:, 0].min()),
            float(self.array[:, 1].min()),
            float(self.array[:, 0].max()),
            float(self.array[:, 1].max()),
        )


@dataclass(frozen=True)
class RasterFrame:
    """
    Placement of a cell grid in pixel space.

    Cell ``(row, col)`` has its center at
    ``(origin_x + (col + 0.5) / scale, origin_y + (row + 0.5) / scale)``; with
    the defaults this is the image grid with centers at integer + 0.5.
    """

    width: int
    height: int
    origin_x: float = 0.0
    origin_y: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise PreconditionError(
                f"Raster frame must be at least 1x1, got {self.width}x{self.height}"
            )
        if self.scale <= 0:
            raise PreconditionError(f"Raster scale must be positive, got {self.scale}")

    @property
    def cell_area(self) -> float:
        return 1.0 / (self.scale * self.scale)

    def column_centers(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        stop = self.width if stop is None else stop
        return self.origin_x + (np.arange(start, stop) + 0.5) / self.scale

    def row_centers(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        stop = self.height if stop is None else stop
        return self.origin_y + (np.arange(start, stop) + 0.5) / self.scale


@dataclass(frozen=True, eq=False)
class RasterGrid:
    frame: RasterFrame
    occupancy: np.ndarray

    def __post_init__(self):
        occupancy = np.ascontiguousarray(self.occupancy, dtype=bool)
        if occupancy.shape != (self.frame.height, self.frame.width):
            raise PreconditionError(
                f"Occupancy shape {occupancy.shape} does not match frame "
                f"{self.frame.height}x{self.frame.width}"
            )
        occupancy.setflags(write=False)
        object.__setattr__(self, "occupancy", occupancy)

    @classmethod
    def empty(cls, frame: RasterFrame) -> "RasterGrid":
        return cls(frame, np.zeros((frame.height, frame.width), dtype=bool))

    @property
    def width(self) -> int:
        return self.frame.width

    @property
    def height(self) -> int:
        return self.frame.height

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    @property
    def is_empty(self) -> bool:
        return not self.occupancy.any()

    def __eq__(self, other):
        if not isinstance(other, RasterGrid):
            return NotImplemented
        return self.frame == other.frame and np.array_equal(
            self.occupancy, other.occupancy
        )

    __hash__ = None


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise PreconditionError(f"BoundingBox needs w, h > 0: {self}")

    @property
    def area(self) -> float:
        return self.w * self.h


def _wrap_half_turn(theta: float) -> float:
    """Map an angle in degrees into (-90, 90]."""
    wrapped = math.fmod(theta, 180.0)
    if wrapped <= -90.0:
        wrapped += 180.0
    elif wrapped > 90.0:
        wrapped -= 180.0
    return wrapped


@dataclass(frozen=True)
class OrientedBox:
    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise PreconditionError(f"OrientedBox needs w, h > 0: {self}")
        if not -180.0 <= self.theta <= 180.0:
            raise PreconditionError(f"OrientedBox theta out of [-180, 180]: {self.theta}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def canonical(self) -> "OrientedBox":
        """Equivalent box with w >= h and theta in (-90, 90]."""
        w, h, theta = self.w, self.h, self.theta
        if w < h:
            w, h, theta = h, w, theta + 90.0
        return OrientedBox(self.cx, self.cy, w, h, _wrap_half_turn(theta))


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    semi_major: float
    semi_minor: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.semi_major >= self.semi_minor > 0):
            raise PreconditionError(
                f"Ellipse needs semi_major >= semi_minor > 0: {self}"
            )
        if not -180.0 <= self.theta <= 180.0:
            raise PreconditionError(f"Ellipse theta out of [-180, 180]: {self.theta}")

    @property
    def area(self) -> float:
        return math.pi * self.semi_major * self.semi_minor


@dataclass(frozen=True)
class PolarPolygon:
    """
    Star polygon around a pole: radius ``k`` lies on the ray at ``k * 360 / R`` degrees.

    ``pole_outside_mask`` is a diagnostic set by mask conversion when the
    occupied-cell centroid is not itself an occupied cell.
    """

    cx: float
    cy: float
    radii: tuple[float, ...]
    pole_outside_mask: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        if len(self.radii) < 3:
            raise PreconditionError(f"PolarPolygon needs R >= 3, got {len(self.radii)}")
        if any(r < 0 or not math.isfinite(r) for r in self.radii):
            raise PreconditionError("PolarPolygon radii must be finite and >= 0")
        if max(self.radii) <= 0:
            raise PreconditionError("PolarPolygon needs at least one positive radius")

    @property
    def points(self) -> int:
        return len(self.radii)

    def directions(self) -> np.ndarray:
        angles = np.deg2rad(np.arange(self.points) * (360.0 / self.points))
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)


@dataclass(frozen=True, eq=False)
class InstanceMask:
    grid: RasterGrid
    class_label: ClassLabel = ClassLabel.VEHICLE

    @classmethod
    def from_array(
        cls, occupancy, class_label: ClassLabel = ClassLabel.VEHICLE
    ) -> "InstanceMask":
        occupancy = np.asarray(occupancy, dtype=bool)
        frame = RasterFrame(width=occupancy.shape[1], height=occupancy.shape[0])
        return cls(RasterGrid(frame, occupancy), class_label)

    @property
    def occupancy(self) -> np.ndarray:
        return self.grid.occupancy

    @property
    def is_empty(self) -> bool:
        return self.grid.is_empty

    @property
    def area(self) -> float:
        return self.grid.count * self.grid.frame.cell_area

    def cropped(self) -> "InstanceMask":
        """Same mask on the smallest window of its frame that holds every occupied cell."""
        if self.is_empty:
            return self
        occupancy = self.occupancy
        rows = np.flatnonzero(occupancy.any(axis=1))
        cols = np.flatnonzero(occupancy.any(axis=0))
        r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
        frame = self.grid.frame
        window = RasterFrame(
            width=int(c1 - c0),
            height=int(r1 - r0),
            origin_x=frame.origin_x + c0 / frame.scale,
            origin_y=frame.origin_y + r0 / frame.scale,
            scale=frame.scale,
        )
        return InstanceMask(RasterGrid(window, occupancy[r0:r1, c0:c1]), self.class_label)

    def placed(self, frame: RasterFrame) -> "InstanceMask":
        """
        Same mask pasted into ``frame``.

        Raises
        ------
        PreconditionError
            If the two frames do not share a cell lattice or the mask's
            occupied cells fall outside ``frame``.
        """
        source = self.grid.frame
        if source.scale != frame.scale:
            raise PreconditionError("Cannot place a mask on a frame of another scale")
        col = (source.origin_x - frame.origin_x) * frame.scale
        row = (source.origin_y - frame.origin_y) * frame.scale
        if abs(col - round(col)) > 1e-6 or abs(row - round(row)) > 1e-6:
            raise PreconditionError("Mask frame is not aligned with the target lattice")
        if self.is_empty:
            return InstanceMask(RasterGrid.empty(frame), self.class_label)
        cropped = self.cropped()
        window = cropped.grid.frame
        col = round((window.origin_x - frame.origin_x) * frame.scale)
        row = round((window.origin_y - frame.origin_y) * frame.scale)
        if col < 0 or row < 0 or col + window.width > frame.width or row + window.height > frame.height:
            raise PreconditionError("Mask does not fit inside the target frame")
        occupancy = np.zeros((frame.height, frame.width), dtype=bool)
        occupancy[row : row + window.height, col : col + window.width] = cropped.occupancy
        return InstanceMask(RasterGrid(frame, occupancy), self.class_label)

    def __eq__(self, other):
        if not isinstance(other, InstanceMask):
            return NotImplemented
        return self.class_label == other.class_label and self.grid == other.grid

    __hash__ = None


Representation = Union[BoundingBox, OrientedBox, Ellipse, PolarPolygon]
Shape = Union[Representation, InstanceMask]


@dataclass(frozen=True)
class Detection:
    rep: Representation
    class_label: ClassLabel
    confidence: float
    frame_id: str = ""
    detection_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise PreconditionError(
                f"Detection confidence must be in [0, 1], got {self.confidence}"
            )


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """One annotated instance of a frame, addressed by ``(frame_id, index)``."""

    frame_id: str
    index: int
    mask: InstanceMask

    @property
    def class_label(self) -> ClassLabel:
        return self.mask.class_label


def filter_known_fields(cls, data: dict) -> dict:
    allowed = {f.name for f in fields(cls)}
    return {k: v for k, v in data.items() if k in allowed}
