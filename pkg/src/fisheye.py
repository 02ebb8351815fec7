"""
Radial polynomial fisheye model, correction projections and mask warping.

Rays use the camera frame: z along the optical axis, x to the right and y
down, so the image x axis follows the ray x component.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from src.config import (
    CAMERA_COEFFICIENTS,
    CAMERA_IMAGE_SIZE,
    CAMERA_MONOTONIC_SAMPLES,
    CAMERA_THETA_MAX,
    SCHEMA_VERSION,
)
from src.errors import (
    InvalidCameraError,
    LossOfFovError,
    OutOfFovError,
    PreconditionError,
    SchemaError,
)
from src.schemas import InstanceMask, Point2, RasterFrame, RasterGrid

logger = logging.getLogger(__name__)

_NEWTON_TOLERANCE = 1e-12
_NEWTON_MAX_ITERATIONS = 60


@dataclass(frozen=True)
class CameraModel:
    """
    Intrinsics of a radial fisheye camera: ``r(θ) = k1 θ + k2 θ² + k3 θ³ + k4 θ⁴``.

    Attributes
    ----------
    coefficients : tuple of float
        ``(k1, k2, k3, k4)`` in pixels per radian power.
    principal_point : tuple of float
        ``(u0, v0)`` in pixels.
    image_size : tuple of int
        ``(width, height)`` in pixels.
    theta_max : float
        Field-of-view half-angle in radians.
    """

    coefficients: tuple[float, float, float, float] = CAMERA_COEFFICIENTS
    principal_point: tuple[float, float] = (
        CAMERA_IMAGE_SIZE[0] / 2,
        CAMERA_IMAGE_SIZE[1] / 2,
    )
    image_size: tuple[int, int] = CAMERA_IMAGE_SIZE
    theta_max: float = CAMERA_THETA_MAX

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(k) for k in self.coefficients))
        object.__setattr__(self, "principal_point", tuple(float(p) for p in self.principal_point))
        object.__setattr__(self, "image_size", tuple(int(s) for s in self.image_size))
        if len(self.coefficients) != 4:
            raise InvalidCameraError(f"Expected 4 coefficients, got {len(self.coefficients)}")
        if self.coefficients[0] <= 0:
            raise InvalidCameraError(f"k1 must be positive, got {self.coefficients[0]}")
        if not 0 < self.theta_max < math.pi:
            raise InvalidCameraError(f"theta_max must be in (0, pi), got {self.theta_max}")
        if min(self.image_size) < 1:
            raise InvalidCameraError(f"Image size must be positive, got {self.image_size}")
        theta = np.linspace(0.0, self.theta_max, CAMERA_MONOTONIC_SAMPLES + 1)
        if not np.all(np.diff(self.radius(theta)) > 0):
            raise InvalidCameraError(
                f"r(theta) is not strictly increasing on (0, {self.theta_max:.4f}] "
                f"for k = {self.coefficients}"
            )

    def radius(self, theta):
        k1, k2, k3, k4 = self.coefficients
        return theta * (k1 + theta * (k2 + theta * (k3 + theta * k4)))

    def radius_slope(self, theta):
        k1, k2, k3, k4 = self.coefficients
        return k1 + theta * (2 * k2 + theta * (3 * k3 + theta * 4 * k4))

    @property
    def max_radius(self) -> float:
        return float(self.radius(self.theta_max))

    @property
    def frame(self) -> RasterFrame:
        return RasterFrame(*self.image_size)

    @classmethod
    def from_dict(cls, data: dict, strict: bool = False) -> "CameraModel":
        known = {"schemaVersion", "coefficients", "principalPoint", "imageSize", "thetaMax"}
        unknown = sorted(set(data) - known)
        if unknown:
            if strict:
                raise SchemaError(f"camera.{unknown[0]}", "unknown field")
            logger.warning("Ignoring unknown camera fields: %s", ", ".join(unknown))
        version = data.get("schemaVersion", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise SchemaError("camera.schemaVersion", f"unsupported version {version}")
        try:
            return cls(
                coefficients=tuple(data["coefficients"]),
                principal_point=tuple(data["principalPoint"]),
                image_size=tuple(data["imageSize"]),
                theta_max=float(data.get("thetaMax", CAMERA_THETA_MAX)),
            )
        except KeyError as exc:
            raise SchemaError(f"camera.{exc.args[0]}", "missing field") from exc

    def to_dict(self) -> dict:
        return {
            "schemaVersion": SCHEMA_VERSION,
            "coefficients": list(self.coefficients),
            "principalPoint": list(self.principal_point),
            "imageSize": list(self.image_size),
            "thetaMax": self.theta_max,
        }


class ProjectionKind(Enum):
    RECTILINEAR = "rectilinear"
    CYLINDRICAL = "cylindrical"
    PIECEWISE = "piecewiseLinear"


@dataclass(frozen=True)
class Projection:
    """
    A corrected view the fisheye image can be resampled onto.

    ``fov_deg`` is the horizontal field of view covered by the output and
    ``vertical_fov_deg`` the vertical one (same as horizontal when None).
    Piecewise views are ``facet_count`` tangent planes side by side, each
    turned by its own yaw about the vertical axis.
    """

    kind: ProjectionKind
    focal: float
    fov_deg: float = 120.0
    facet_count: int = 1
    vertical_fov_deg: float | None = None
    size: tuple[int, int] | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "kind", ProjectionKind(self.kind))
        if self.size is not None:
            object.__setattr__(self, "size", tuple(int(s) for s in self.size))
            if min(self.size) < 1:
                raise PreconditionError(f"Projection size must be positive, got {self.size}")
        if self.focal <= 0:
            raise PreconditionError(f"Projection focal must be positive, got {self.focal}")
        if self.fov_deg <= 0 or self.vertical_fov <= 0:
            raise PreconditionError("Projection fields of view must be positive")
        if self.kind is ProjectionKind.PIECEWISE and self.facet_count < 2:
            raise PreconditionError(f"Piecewise projection needs >= 2 facets, got {self.facet_count}")
        if self.vertical_fov >= 180.0:
            raise LossOfFovError(
                f"A planar vertical axis cannot cover {self.vertical_fov} degrees"
            )
        if self.kind is ProjectionKind.RECTILINEAR and self.fov_deg >= 180.0:
            raise LossOfFovError(
                f"Rectilinear projection cannot cover {self.fov_deg} degrees"
            )
        if self.kind is ProjectionKind.PIECEWISE and self.fov_deg / self.facet_count >= 180.0:
            raise LossOfFovError("Each piecewise facet must cover less than 180 degrees")
        if self.kind is ProjectionKind.CYLINDRICAL and self.fov_deg > 360.0:
            raise LossOfFovError("Cylindrical projection covers at most 360 degrees")

    @property
    def vertical_fov(self) -> float:
        return self.fov_deg if self.vertical_fov_deg is None else self.vertical_fov_deg

    @property
    def facet_width(self) -> float:
        return 2 * self.focal * math.tan(math.radians(self.fov_deg / self.facet_count) / 2)

    @property
    def output_size(self) -> tuple[int, int]:
        """
        Output image size in pixels.

        Width is ``2f tan(FoV/2)`` for rectilinear, ``f FoV`` for cylindrical
        and ``n 2f tan(FoV/2n)`` for piecewise views.
        """
        if self.size is not None:
            return self.size
        half_v = math.radians(self.vertical_fov) / 2
        height = 2 * self.focal * math.tan(half_v)
        if self.kind is ProjectionKind.CYLINDRICAL:
            width = self.focal * math.radians(self.fov_deg)
        elif self.kind is ProjectionKind.PIECEWISE:
            width = self.facet_count * self.facet_width
        else:
            width = 2 * self.focal * math.tan(math.radians(self.fov_deg) / 2)
        return max(1, round(width)), max(1, round(height))

    @property
    def frame(self) -> RasterFrame:
        return RasterFrame(*self.output_size)

    def facet_yaws(self) -> np.ndarray:
        step = math.radians(self.fov_deg) / self.facet_count
        return -math.radians(self.fov_deg) / 2 + (np.arange(self.facet_count) + 0.5) * step

    def pixels_to_rays(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Unit rays (..., 3) through view pixel positions."""
        width, height = self.output_size
        y = (v - height / 2) / self.focal
        if self.kind is ProjectionKind.CYLINDRICAL:
            phi = (u - width / 2) / self.focal
            rays = np.stack(np.broadcast_arrays(np.sin(phi), y, np.cos(phi)), axis=-1)
        elif self.kind is ProjectionKind.PIECEWISE:
            facet = np.clip(np.floor(u / self.facet_width), 0, self.facet_count - 1).astype(int)
            yaw = self.facet_yaws()[facet]
            x = (u - (facet + 0.5) * self.facet_width) / self.focal
            x, y, yaw = np.broadcast_arrays(x, y, yaw)
            rays = np.stack(
                [x * np.cos(yaw) + np.sin(yaw), y, -x * np.sin(yaw) + np.cos(yaw)], axis=-1
            )
        else:
            x = (u - width / 2) / self.focal
            rays = np.stack(np.broadcast_arrays(x, y, np.ones_like(x)), axis=-1)
        return rays / np.linalg.norm(rays, axis=-1, keepdims=True)

    def rays_to_pixels(self, rays: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        View positions ``(u, v)`` of rays, plus a validity mask.

        Piecewise views send each ray to its nearest facet by yaw, without
        blending across facet borders.
        """
        width, height = self.output_size
        x, y, z = rays[..., 0], rays[..., 1], rays[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind is ProjectionKind.CYLINDRICAL:
                phi = np.arctan2(x, z)
                planar = np.hypot(x, z)
                u = width / 2 + self.focal * phi
                v = height / 2 + self.focal * y / planar
                valid = (planar > 0) & (np.abs(phi) <= math.radians(self.fov_deg) / 2)
            elif self.kind is ProjectionKind.PIECEWISE:
                yaw = np.arctan2(x, z)
                step = math.radians(self.fov_deg) / self.facet_count
                facet = np.floor((yaw + math.radians(self.fov_deg) / 2) / step)
                facet = np.clip(facet, 0, self.facet_count - 1).astype(int)
                facet_yaw = self.facet_yaws()[facet]
                local_x = x * np.cos(facet_yaw) - z * np.sin(facet_yaw)
                local_z = x * np.sin(facet_yaw) + z * np.cos(facet_yaw)
                u = (facet + 0.5) * self.facet_width + self.focal * local_x / local_z
                v = height / 2 + self.focal * y / local_z
                valid = (local_z > 0) & (np.abs(yaw) <= math.radians(self.fov_deg) / 2)
            else:
                u = width / 2 + self.focal * x / z
                v = height / 2 + self.focal * y / z
                valid = z > 0
        valid = valid & np.isfinite(u) & np.isfinite(v)
        return u, v, valid


def _as_ray(ray) -> np.ndarray:
    ray = np.asarray(ray, dtype=float)
    norm = float(np.linalg.norm(ray))
    if ray.shape != (3,) or norm == 0.0 or not math.isfinite(norm):
        raise PreconditionError(f"Ray must be a non-zero 3-vector, got {ray}")
    return ray / norm


def project_rays(cam: CameraModel, rays: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Fisheye image positions (N, 2) of unit rays (N, 3).

    Returns the positions and a mask of rays inside the field of view; outside
    rays get NaN positions.
    """
    rays = np.asarray(rays, dtype=float)
    planar = np.hypot(rays[..., 0], rays[..., 1])
    theta = np.arctan2(planar, rays[..., 2])
    radius = cam.radius(theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(planar > 0, radius / planar, 0.0)
    u0, v0 = cam.principal_point
    points = np.stack([u0 + rays[..., 0] * scale, v0 + rays[..., 1] * scale], axis=-1)
    inside = theta <= cam.theta_max
    points[~inside] = np.nan
    return points, inside


def project_ray(cam: CameraModel, ray) -> Point2 | None:
    """
    Image point of a ray, or None when the ray is outside the field of view.

    Raises
    ------
    PreconditionError
        If the ray has zero length.
    """
    points, inside = project_rays(cam, _as_ray(ray)[np.newaxis, :])
    if not inside[0]:
        return None
    return Point2(float(points[0, 0]), float(points[0, 1]))


def _solve_theta(cam: CameraModel, radius: np.ndarray) -> np.ndarray:
    """Solve ``r(θ) = radius`` by Newton steps kept inside a shrinking bracket."""
    lo = np.zeros_like(radius)
    hi = np.full_like(radius, cam.theta_max)
    theta = np.clip(radius / cam.coefficients[0], 0.0, cam.theta_max)
    for _ in range(_NEWTON_MAX_ITERATIONS):
        residual = cam.radius(theta) - radius
        hi = np.where(residual > 0, theta, hi)
        lo = np.where(residual <= 0, theta, lo)
        slope = cam.radius_slope(theta)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = theta - residual / slope
        bisect = (lo + hi) / 2
        use_newton = (slope > 0) & (newton >= lo) & (newton <= hi)
        updated = np.where(use_newton, newton, bisect)
        step = np.abs(updated - theta)
        theta = updated
        if np.all(step <= _NEWTON_TOLERANCE):
            break
    return theta


def unproject_points(
    cam: CameraModel, points: np.ndarray, strict: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """
    Unit rays (N, 3) through fisheye image points (N, 2).

    Returns the rays and a mask of points within ``r(theta_max)``. With
    ``strict`` an out-of-view point raises; otherwise its ray is NaN.
    """
    points = np.asarray(points, dtype=float)
    u0, v0 = cam.principal_point
    dx = points[..., 0] - u0
    dy = points[..., 1] - v0
    radius = np.hypot(dx, dy)
    inside = radius <= cam.max_radius * (1 + 1e-12)
    if strict and not np.all(inside):
        raise OutOfFovError(
            f"Radius {float(radius[~inside].max()):.3f} px exceeds r(theta_max) = {cam.max_radius:.3f} px"
        )
    theta = _solve_theta(cam, np.minimum(radius, cam.max_radius))
    with np.errstate(divide="ignore", invalid="ignore"):
        sin_over_r = np.where(radius > 0, np.sin(theta) / radius, 0.0)
    rays = np.stack([dx * sin_over_r, dy * sin_over_r, np.cos(theta)], axis=-1)
    rays[~inside] = np.nan
    return rays, inside


def unproject_point(cam: CameraModel, point: Point2) -> np.ndarray:
    """
    Unit ray through an image point.

    Raises
    ------
    OutOfFovError
        If the point is farther from the principal point than ``r(theta_max)``.
    """
    rays, _ = unproject_points(cam, np.array([[point.x, point.y]]))
    return rays[0]


class WarpDirection(Enum):
    CORRECT = "correct"  # fisheye -> projection view
    DISTORT = "distort"  # projection view -> fisheye


@dataclass(frozen=True, eq=False)
class WarpMap:
    """Destination-to-source lookup: destination cell (r, c) reads source cell (rows[r, c], cols[r, c])."""

    source: RasterFrame
    destination: RasterFrame
    rows: np.ndarray
    cols: np.ndarray
    valid: np.ndarray


@lru_cache(maxsize=16)
def warp_map(cam: CameraModel, proj: Projection, direction: WarpDirection) -> WarpMap:
    """Nearest-neighbour lookup between fisheye image and projection view (cached)."""
    if direction is WarpDirection.CORRECT:
        source, destination = cam.frame, proj.frame
    else:
        source, destination = proj.frame, cam.frame
    u = destination.column_centers()[np.newaxis, :]
    v = destination.row_centers()[:, np.newaxis]
    u, v = np.broadcast_arrays(u, v)

    if direction is WarpDirection.CORRECT:
        rays = proj.pixels_to_rays(u, v)
        points, valid = project_rays(cam, rays)
        src_u, src_v = points[..., 0], points[..., 1]
    else:
        rays, valid = unproject_points(cam, np.stack([u, v], axis=-1), strict=False)
        src_u, src_v, in_view = proj.rays_to_pixels(np.nan_to_num(rays))
        valid = valid & in_view

    with np.errstate(invalid="ignore"):
        cols = np.floor(np.nan_to_num(src_u, nan=-1.0)).astype(int)
        rows = np.floor(np.nan_to_num(src_v, nan=-1.0)).astype(int)
    valid = valid & (cols >= 0) & (cols < source.width) & (rows >= 0) & (rows < source.height)
    logger.debug(
        "Built %s warp map %dx%d (%d valid cells)",
        direction.value,
        destination.width,
        destination.height,
        int(valid.sum()),
    )
    return WarpMap(source, destination, np.where(valid, rows, 0), np.where(valid, cols, 0), valid)


def warp_array(values: np.ndarray, mapping: WarpMap, fill=0) -> np.ndarray:
    """Gather a source array (H, W) onto the destination grid of ``mapping``."""
    if values.shape != (mapping.source.height, mapping.source.width):
        raise PreconditionError(
            f"Array of shape {values.shape} does not match warp source "
            f"{mapping.source.height}x{mapping.source.width}"
        )
    out = values[mapping.rows, mapping.cols]
    out[~mapping.valid] = fill
    return out


def warp_mask(
    m: InstanceMask, cam: CameraModel, proj: Projection, direction: WarpDirection
) -> InstanceMask:
    """
    Resample a mask between the fisheye image and a projection view.

    ``correct`` reads a fisheye-sized mask and returns a view-sized one;
    ``distort`` goes the other way. Masks cropped to a window are placed back
    on the full source grid first.
    """
    mapping = warp_map(cam, proj, direction)
    grid = m.grid if m.grid.frame == mapping.source else m.placed(mapping.source).grid
    occupancy = warp_array(np.asarray(grid.occupancy), mapping, fill=False)
    return InstanceMask(RasterGrid(mapping.destination, occupancy), m.class_label)
