import math

import numpy as np
import pytest

from src.errors import (
    InvalidCameraError,
    LossOfFovError,
    OutOfFovError,
    PreconditionError,
    SchemaError,
)
from src.fisheye import (
    CameraModel,
    Projection,
    ProjectionKind,
    WarpDirection,
    project_ray,
    project_rays,
    unproject_point,
    unproject_points,
    warp_array,
    warp_map,
    warp_mask,
)
from src.geometry import rasterize
from src.representations import mask_to_bounding_box, representation_iou, to_polygon
from src.schemas import BoundingBox, Ellipse, InstanceMask, Point2


def create_random_rays(rng, count, theta_max):
    theta = rng.uniform(0.0, theta_max, count)
    phi = rng.uniform(-math.pi, math.pi, count)
    return np.stack(
        [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=1
    )


def create_view():
    return Projection(ProjectionKind.RECTILINEAR, 400.0, fov_deg=90.0, vertical_fov_deg=70.0)


def test_on_axis_ray_hits_principal_point():
    cam = CameraModel()
    assert project_ray(cam, (0.0, 0.0, 1.0)) == Point2(*cam.principal_point)


def test_linear_model_projection():
    cam = CameraModel(coefficients=(500.0, 0.0, 0.0, 0.0), principal_point=(320.0, 240.0), image_size=(640, 480))
    point = project_ray(cam, (math.sin(0.1), 0.0, math.cos(0.1)))
    assert point.x == pytest.approx(370.0, abs=1e-9)
    assert point.y == pytest.approx(240.0, abs=1e-9)


def test_ray_beyond_field_of_view():
    cam = CameraModel()
    theta = cam.theta_max + 1e-6
    assert project_ray(cam, (math.sin(theta), 0.0, math.cos(theta))) is None
    points, inside = project_rays(cam, np.array([[math.sin(theta), 0.0, math.cos(theta)]]))
    assert not inside[0]
    assert np.all(np.isnan(points[0]))


def test_zero_ray_is_rejected():
    with pytest.raises(PreconditionError):
        project_ray(CameraModel(), (0.0, 0.0, 0.0))


def test_rotation_equivariance():
    cam = CameraModel()
    u0, v0 = cam.principal_point
    ray = np.array([math.sin(0.7), 0.0, math.cos(0.7)])
    base = project_ray(cam, ray)
    for phi in (0.3, 1.2, -2.0):
        c, s = math.cos(phi), math.sin(phi)
        rotated = project_ray(cam, (c * ray[0] - s * ray[1], s * ray[0] + c * ray[1], ray[2]))
        expected_x = u0 + c * (base.x - u0) - s * (base.y - v0)
        expected_y = v0 + s * (base.x - u0) + c * (base.y - v0)
        assert rotated.x == pytest.approx(expected_x, abs=1e-9)
        assert rotated.y == pytest.approx(expected_y, abs=1e-9)


def test_unproject_principal_point():
    cam = CameraModel()
    ray = unproject_point(cam, Point2(*cam.principal_point))
    assert ray.tolist() == [0.0, 0.0, 1.0]


def test_unproject_pure_k1_is_closed_form():
    cam = CameraModel(coefficients=(300.0, 0.0, 0.0, 0.0), principal_point=(0.0, 0.0), image_size=(800, 800))
    ray = unproject_point(cam, Point2(100.0, 0.0))
    theta = 100.0 / 300.0
    np.testing.assert_allclose(ray, [math.sin(theta), 0.0, math.cos(theta)], rtol=0, atol=1e-12)


def test_project_unproject_round_trip():
    cam = CameraModel()
    rays = create_random_rays(np.random.default_rng(8), 1000, cam.theta_max)
    points, inside = project_rays(cam, rays)
    assert inside.all()
    back, _ = unproject_points(cam, points)
    angles = np.arccos(np.clip(np.sum(back * rays, axis=1), -1.0, 1.0))
    assert angles.max() <= 1e-8
    reprojected, _ = project_rays(cam, back)
    assert np.abs(reprojected - points).max() <= 1e-6


def test_unproject_outside_field_of_view():
    cam = CameraModel()
    u0, v0 = cam.principal_point
    with pytest.raises(OutOfFovError):
        unproject_point(cam, Point2(u0 + cam.max_radius + 1.0, v0))
    rays, inside = unproject_points(cam, np.array([[u0 + cam.max_radius + 1.0, v0]]), strict=False)
    assert not inside[0]
    assert np.all(np.isnan(rays[0]))


def test_camera_validation():
    with pytest.raises(InvalidCameraError):
        CameraModel(coefficients=(0.0, 1.0, 0.0, 0.0))
    with pytest.raises(InvalidCameraError):
        CameraModel(coefficients=(100.0, 0.0, -100.0, 0.0))
    with pytest.raises(PreconditionError):
        CameraModel(coefficients=(100.0, 0.0, -100.0, 0.0))


def test_camera_dict_round_trip():
    cam = CameraModel()
    assert CameraModel.from_dict(cam.to_dict()) == cam


def test_camera_dict_errors():
    data = CameraModel().to_dict()
    with pytest.raises(SchemaError) as info:
        CameraModel.from_dict({**data, "skew": 0.0}, strict=True)
    assert info.value.path == "camera.skew"
    assert CameraModel.from_dict({**data, "skew": 0.0}) == CameraModel()
    del data["coefficients"]
    with pytest.raises(SchemaError) as info:
        CameraModel.from_dict(data)
    assert info.value.path == "camera.coefficients"


def test_projection_loss_of_fov():
    with pytest.raises(LossOfFovError):
        Projection(ProjectionKind.RECTILINEAR, 300.0, fov_deg=180.0)
    with pytest.raises(LossOfFovError):
        Projection(ProjectionKind.CYLINDRICAL, 300.0, fov_deg=190.0, vertical_fov_deg=180.0)
    cylindrical = Projection(ProjectionKind.CYLINDRICAL, 300.0, fov_deg=190.0, vertical_fov_deg=100.0)
    assert cylindrical.output_size[0] == round(300.0 * math.radians(190.0))
    piecewise = Projection(ProjectionKind.PIECEWISE, 300.0, fov_deg=190.0, facet_count=3, vertical_fov_deg=100.0)
    assert piecewise.output_size[0] == round(3 * piecewise.facet_width)


def test_piecewise_needs_two_facets():
    with pytest.raises(PreconditionError):
        Projection(ProjectionKind.PIECEWISE, 300.0, fov_deg=120.0, facet_count=1)


@pytest.mark.parametrize(
    "projection",
    [
        Projection(ProjectionKind.RECTILINEAR, 300.0, fov_deg=120.0),
        Projection(ProjectionKind.CYLINDRICAL, 300.0, fov_deg=190.0, vertical_fov_deg=100.0),
        Projection("piecewiseLinear", 300.0, fov_deg=180.0, facet_count=3, vertical_fov_deg=100.0),
    ],
)
def test_projection_pixel_ray_round_trip(projection):
    width, height = projection.output_size
    facet = projection.facet_width if projection.kind is ProjectionKind.PIECEWISE else width
    u = np.array([0.2, 0.5, 0.8]) * facet
    if projection.kind is ProjectionKind.PIECEWISE:
        u = np.concatenate([u + k * facet for k in range(projection.facet_count)])
    v = np.full_like(u, 0.3 * height)
    rays = projection.pixels_to_rays(u, v)
    back_u, back_v, valid = projection.rays_to_pixels(rays)
    assert valid.all()
    assert back_u == pytest.approx(u, abs=1e-6)
    assert back_v == pytest.approx(v, abs=1e-6)


def test_cylindrical_view_keeps_vertical_lines_straight():
    cam = CameraModel()
    view = Projection(ProjectionKind.CYLINDRICAL, 300.0, fov_deg=180.0, vertical_fov_deg=100.0)
    heights = np.linspace(-1.0, 1.0, 21)
    rays = np.stack([np.full_like(heights, 1.0), heights, np.full_like(heights, 1.5)], axis=1)
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    u, _, valid = view.rays_to_pixels(rays)
    assert valid.all()
    assert np.ptp(u) <= 0.5
    fisheye, _ = project_rays(cam, rays)
    assert np.ptp(fisheye[:, 0]) > 0.5


def test_warp_near_identity():
    size = 218
    cam = CameraModel(
        coefficients=(300.0, 0.0, 0.0, 0.0),
        principal_point=(size / 2, size / 2),
        image_size=(size, size),
        theta_max=math.radians(60.0),
    )
    view = Projection(ProjectionKind.RECTILINEAR, 300.0, fov_deg=40.0)
    assert view.output_size == (size, size)
    mask = InstanceMask(rasterize(Ellipse(size / 2, size / 2, 30, 30), view.frame))
    warped = warp_mask(mask, cam, view, WarpDirection.DISTORT)
    assert warped.grid.frame == cam.frame
    assert representation_iou(warped, mask) >= 0.98


def test_distort_correct_round_trip():
    cam = CameraModel()
    view = create_view()
    width, height = view.output_size
    mask = InstanceMask(rasterize(Ellipse(width / 2, height / 2, 80, 80), view.frame))
    fisheye = warp_mask(mask, cam, view, WarpDirection.DISTORT)
    assert fisheye.grid.frame == cam.frame
    back = warp_mask(fisheye, cam, view, WarpDirection.CORRECT)
    assert representation_iou(back, mask) >= 0.95


def test_warp_accepts_cropped_masks():
    cam = CameraModel()
    view = create_view()
    mask = InstanceMask(rasterize(Ellipse(300, 250, 40, 20), view.frame))
    full = warp_mask(mask, cam, view, WarpDirection.DISTORT)
    cropped = warp_mask(mask.cropped(), cam, view, WarpDirection.DISTORT)
    assert np.array_equal(full.occupancy, cropped.occupancy)


def test_distortion_bends_straight_bars():
    cam = CameraModel()
    view = create_view()
    width, height = view.output_size
    bar = to_polygon(BoundingBox(width / 2 + 300, height / 2, 20, 400))
    mask = InstanceMask(rasterize(bar, view.frame))
    straight = representation_iou(mask_to_bounding_box(mask), mask)
    distorted = warp_mask(mask, cam, view, WarpDirection.DISTORT)
    bent = representation_iou(mask_to_bounding_box(distorted), distorted)
    assert straight == 1.0
    assert bent < straight


def test_warp_array_checks_shape():
    mapping = warp_map(CameraModel(), create_view(), WarpDirection.CORRECT)
    with pytest.raises(PreconditionError):
        warp_array(np.zeros((3, 3), dtype=bool), mapping)
