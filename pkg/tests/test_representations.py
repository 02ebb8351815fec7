import math

import numpy as np
import pytest

from src.errors import PreconditionError, SchemaError, UndefinedIoUError
from src.geometry import frame_covering, polygon_area, raster_iou, rasterize
from src.representation_register import (
    REPRESENTATION_REGISTRY,
    RepresentationSpec,
    get_kind,
    kind_name_of,
    representation_from_dict,
    representation_to_dict,
    table_specs,
)
from src.representations import (
    mask_to_bounding_box,
    mask_to_ellipse,
    mask_to_oriented_box,
    mask_to_polar_polygon,
    polygon_parameter_count,
    rasterizable,
    representation_bounds,
    representation_iou,
    to_polygon,
)
from src.schemas import (
    BoundingBox,
    ClassLabel,
    Ellipse,
    InstanceMask,
    OrientedBox,
    PolarPolygon,
    RasterFrame,
)


def create_disk_mask(radius=50.0, size=128, center=None):
    cx, cy = center or (size / 2, size / 2)
    return InstanceMask(rasterize(Ellipse(cx, cy, radius, radius), RasterFrame(size, size)))


def create_l_mask():
    occupancy = np.zeros((10, 10), dtype=bool)
    occupancy[:, 0] = True
    occupancy[9, :] = True
    return InstanceMask.from_array(occupancy)


def create_bar_mask(angle=45.0):
    outline = to_polygon(OrientedBox(50, 50, 60, 10, angle))
    return InstanceMask(rasterize(outline, RasterFrame(100, 100)))


def test_bounding_box_single_cell():
    occupancy = np.zeros((10, 10), dtype=bool)
    occupancy[4, 3] = True
    box = mask_to_bounding_box(InstanceMask.from_array(occupancy))
    assert box == BoundingBox(3.5, 4.5, 1.0, 1.0)


def test_bounding_box_full_mask():
    box = mask_to_bounding_box(InstanceMask.from_array(np.ones((10, 10))))
    assert box == BoundingBox(5.0, 5.0, 10.0, 10.0)


def test_bounding_box_of_l_shape():
    mask = create_l_mask()
    box = mask_to_bounding_box(mask)
    assert (box.w, box.h) == (10.0, 10.0)
    assert representation_iou(box, mask) == pytest.approx(0.19)


def test_conversions_reject_empty_mask():
    empty = InstanceMask.from_array(np.zeros((4, 4)))
    for convert in (mask_to_bounding_box, mask_to_oriented_box, mask_to_ellipse):
        with pytest.raises(PreconditionError):
            convert(empty)
    with pytest.raises(PreconditionError):
        mask_to_polar_polygon(empty, 12)


def test_oriented_box_of_rectangle_is_axis_aligned():
    occupancy = np.zeros((10, 12), dtype=bool)
    occupancy[2:6, 1:9] = True
    mask = InstanceMask.from_array(occupancy)
    obox = mask_to_oriented_box(mask)
    box = mask_to_bounding_box(mask)
    assert obox.theta == pytest.approx(0.0)
    assert (obox.cx, obox.cy, obox.w, obox.h) == pytest.approx((box.cx, box.cy, box.w, box.h))


def test_oriented_box_single_cell():
    occupancy = np.zeros((3, 3), dtype=bool)
    occupancy[1, 1] = True
    obox = mask_to_oriented_box(InstanceMask.from_array(occupancy))
    assert (obox.w, obox.h, obox.theta) == pytest.approx((1.0, 1.0, 0.0))


def test_oriented_box_follows_diagonal_bar():
    mask = create_bar_mask(45.0)
    obox = mask_to_oriented_box(mask)
    assert obox.theta == pytest.approx(45.0, abs=1.0)
    assert obox.w >= obox.h
    assert obox.area < mask_to_bounding_box(mask).area


def test_oriented_box_never_larger_than_box():
    for mask in (create_l_mask(), create_bar_mask(30.0), create_disk_mask(20.0, 64)):
        assert mask_to_oriented_box(mask).area <= mask_to_bounding_box(mask).area + 1e-9


def test_ellipse_of_square_is_inscribed_circle():
    occupancy = np.zeros((10, 10), dtype=bool)
    occupancy[2:8, 2:8] = True
    ellipse = mask_to_ellipse(InstanceMask.from_array(occupancy))
    assert (ellipse.cx, ellipse.cy) == pytest.approx((5.0, 5.0))
    assert (ellipse.semi_major, ellipse.semi_minor) == pytest.approx((3.0, 3.0))


def test_ellipse_of_disk():
    ellipse = mask_to_ellipse(create_disk_mask(20.0, 64))
    assert ellipse.semi_major == pytest.approx(20.0, abs=1.0)
    assert ellipse.semi_minor == pytest.approx(20.0, abs=1.0)


def test_ellipse_shares_oriented_box_parameters():
    mask = create_bar_mask(45.0)
    obox = mask_to_oriented_box(mask)
    ellipse = mask_to_ellipse(mask)
    assert ellipse.theta == obox.theta
    assert (ellipse.semi_major, ellipse.semi_minor) == (obox.w / 2, obox.h / 2)


def test_ellipse_inside_its_oriented_box():
    mask = create_bar_mask(30.0)
    box_polygon = to_polygon(mask_to_oriented_box(mask))
    frame = RasterFrame(100, 100)
    inside_box = rasterize(box_polygon, frame).occupancy
    inside_ellipse = rasterize(mask_to_ellipse(mask), frame).occupancy
    assert not np.any(inside_ellipse & ~inside_box)


def test_polar_polygon_of_disk():
    mask = create_disk_mask(50.0)
    polygon = mask_to_polar_polygon(mask, 12)
    assert polygon.points == 12
    assert np.allclose(polygon.radii, 50.0, atol=1.0)
    expected = 12 / (2 * math.pi) * math.sin(2 * math.pi / 12)
    assert representation_iou(polygon, mask) == pytest.approx(expected, abs=0.01)


def test_polar_polygon_improves_with_points():
    mask = create_disk_mask(50.0)
    ious = [representation_iou(mask_to_polar_polygon(mask, r), mask) for r in (12, 36, 120)]
    assert ious[0] < ious[1]
    assert ious[0] < ious[2]


def test_polar_polygon_between_two_blobs_is_empty():
    occupancy = np.zeros((12, 12), dtype=bool)
    occupancy[5, 0] = occupancy[5, 10] = True
    mask = InstanceMask.from_array(occupancy)
    polygon = mask_to_polar_polygon(mask, 12)
    assert polygon.pole_outside_mask
    assert rasterizable(polygon) is None
    assert representation_bounds(polygon) == pytest.approx((0.0, 5.5, 11.0, 5.5))
    assert representation_iou(polygon, mask) == 0.0
    assert representation_iou(polygon, BoundingBox(5.5, 5.5, 11.0, 1.0)) == 0.0
    with pytest.raises(UndefinedIoUError):
        representation_iou(polygon, PolarPolygon(5.5, 5.5, (1.0, 0.0, 1.0, 0.0)))


def test_polar_polygon_of_square_is_diamond():
    mask = InstanceMask.from_array(np.ones((20, 20)))
    polygon = mask_to_polar_polygon(mask, 4)
    assert polygon.radii == pytest.approx((10.0, 10.0, 10.0, 10.0))
    assert representation_iou(polygon, mask) == pytest.approx(0.5, abs=0.03)


def test_polar_polygon_flags_pole_outside_mask():
    polygon = mask_to_polar_polygon(create_l_mask(), 12)
    assert polygon.pole_outside_mask
    assert max(polygon.radii) > 0


def test_polar_polygon_bin_rule_uses_cell_centers():
    mask = InstanceMask.from_array(np.ones((20, 20)))
    polygon = mask_to_polar_polygon(mask, 4, rule="bin")
    assert polygon.radii == pytest.approx((math.hypot(9.5, 9.5),) * 4)


def test_polar_polygon_rejects_bad_arguments():
    mask = create_l_mask()
    with pytest.raises(PreconditionError):
        mask_to_polar_polygon(mask, 2)
    with pytest.raises(PreconditionError):
        mask_to_polar_polygon(mask, 12, rule="nearest")


def test_polygon_parameter_count():
    assert polygon_parameter_count(24) == 24
    assert polygon_parameter_count(24, sparse=True) == 72


def test_to_polygon_box():
    polygon = to_polygon(BoundingBox(1, 1, 2, 2))
    assert polygon.array.tolist() == [[0, 0], [2, 0], [2, 2], [0, 2]]


def test_to_polygon_oriented_box_symmetry():
    turned = to_polygon(OrientedBox(0, 0, 4, 2, 90.0)).array
    swapped = to_polygon(OrientedBox(0, 0, 2, 4, 0.0)).array
    assert sorted(map(tuple, np.round(turned, 9))) == sorted(map(tuple, np.round(swapped, 9)))


def test_to_polygon_ellipse_area():
    polygon = to_polygon(Ellipse(0, 0, 10, 10), arc_segments=360)
    assert polygon_area(polygon) == pytest.approx(math.pi * 100, rel=1e-3)


def test_to_polygon_ellipse_needs_segments():
    with pytest.raises(PreconditionError):
        to_polygon(Ellipse(0, 0, 2, 1), arc_segments=4)


def test_to_polygon_polar():
    polygon = to_polygon(PolarPolygon(0, 0, (1.0, 1.0, 1.0, 1.0)))
    assert polygon_area(polygon) == pytest.approx(2.0)


def test_representation_iou_identity():
    for rep in (
        BoundingBox(5, 5, 4, 2),
        OrientedBox(5, 5, 4, 2, 30.0),
        Ellipse(5, 5, 4, 2, 10.0),
        PolarPolygon(5, 5, (1.0, 2.0, 1.0, 2.0, 1.5)),
    ):
        assert representation_iou(rep, rep) == 1.0


def test_representation_iou_rotated_unit_square():
    iou = representation_iou(OrientedBox(0, 0, 1, 1, 0.0), OrientedBox(0, 0, 1, 1, 45.0))
    octagon = 2 * (math.sqrt(2) - 1)
    assert iou == pytest.approx(octagon / (2 - octagon), abs=0.005)


def test_representation_iou_is_symmetric():
    ellipse = Ellipse(10, 10, 6, 3, 20.0)
    polygon = PolarPolygon(11, 9, tuple(np.linspace(2, 6, 12)))
    box = BoundingBox(10, 10, 8, 6)
    mask = create_disk_mask(6.0, 24, (10.0, 10.0))
    assert representation_iou(ellipse, polygon) == representation_iou(polygon, ellipse)
    assert representation_iou(box, mask) == representation_iou(mask, box)


def test_exact_and_raster_box_iou_agree():
    rng = np.random.default_rng(11)
    for _ in range(25):
        a = OrientedBox(*rng.uniform(8, 12, 2), *rng.uniform(2, 6, 2), rng.uniform(-90, 90))
        b = OrientedBox(*rng.uniform(8, 12, 2), *rng.uniform(2, 6, 2), rng.uniform(-90, 90))
        poly_a, poly_b = to_polygon(a), to_polygon(b)
        frame = frame_covering([poly_a.bounds(), poly_b.bounds()], 512)
        try:
            raster = raster_iou(rasterize(poly_a, frame), rasterize(poly_b, frame))
        except UndefinedIoUError:
            continue
        assert abs(representation_iou(a, b) - raster) <= 0.01


def test_mask_iou_across_frames():
    disk = create_disk_mask(6.0, 24, (10.0, 10.0))
    assert disk.cropped().grid.frame != disk.grid.frame
    assert representation_iou(disk, disk.cropped()) == 1.0
    mask = create_l_mask()
    shifted = InstanceMask.from_array(np.pad(mask.occupancy, ((0, 0), (0, 1)))[:, 1:])
    assert representation_iou(mask, shifted) < 1.0


def test_table_specs_columns():
    assert [spec.column for spec in table_specs()] == [
        "BoundingBox",
        "RotatedBox",
        "P12",
        "P24",
        "P36",
        "P60",
        "P120",
    ]


def test_representation_spec_parse():
    assert RepresentationSpec.parse("P24") == RepresentationSpec("polygon", 24)
    assert RepresentationSpec.parse("polygon:12").column == "P12"
    assert RepresentationSpec.parse("obox").column == "RotatedBox"
    with pytest.raises(PreconditionError):
        RepresentationSpec.parse("polygon:2")
    with pytest.raises(PreconditionError):
        RepresentationSpec("hexagon")


def test_spec_convert_matches_kind():
    mask = create_l_mask()
    for name in REPRESENTATION_REGISTRY:
        spec = RepresentationSpec(name, 12 if name == "polygon" else None)
        rep = spec.convert(mask)
        assert isinstance(rep, get_kind(name).rep_type)
        assert kind_name_of(rep) == name
    assert kind_name_of(mask) == "mask"


def test_representation_dict_round_trip():
    rep = OrientedBox(3.0, 4.0, 5.0, 2.0, 12.5)
    data = representation_to_dict(rep)
    assert data["type"] == "obox"
    assert representation_from_dict(data) == rep


def test_representation_from_dict_errors_name_field():
    with pytest.raises(SchemaError) as info:
        representation_from_dict({"type": "box", "cx": 1, "cy": 1, "w": 2})
    assert info.value.path == "rep.h"
    with pytest.raises(SchemaError) as info:
        representation_from_dict({"type": "circle"}, path="detections[0].rep")
    assert info.value.path == "detections[0].rep.type"


def test_class_label_survives_conversion():
    mask = InstanceMask.from_array(np.ones((3, 3)), ClassLabel.PEDESTRIAN)
    assert mask.cropped().class_label is ClassLabel.PEDESTRIAN
