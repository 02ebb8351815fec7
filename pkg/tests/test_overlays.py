import xml.etree.ElementTree as ET

from src.evaluation import Match
from src.overlays import build_layers, mask_outline_path, write_frame_overlay
from src.schemas import BoundingBox, ClassLabel, Detection, GroundTruth, InstanceMask


def create_matches():
    truth = GroundTruth("000000", 0, InstanceMask.from_array([[0, 0, 0], [0, 1, 1], [0, 0, 0]]))
    missed = GroundTruth("000000", 1, InstanceMask.from_array([[1, 0, 0], [0, 0, 0], [0, 0, 0]]))
    hit = Detection(BoundingBox(2.0, 1.5, 2.0, 1.0), ClassLabel.VEHICLE, 0.9, "000000", 0)
    stray = Detection(BoundingBox(0.5, 2.5, 1.0, 1.0), ClassLabel.VEHICLE, 0.4, "000000", 1)
    return [Match(hit, truth, 1.0), Match(stray, None, 0.0), Match(None, missed, 0.0)]


def test_mask_outline_single_cell():
    path = mask_outline_path(InstanceMask.from_array([[1]]))
    assert sorted(path.split("M")[1:]) == ["0.00 0.00h1.00", "0.00 0.00v1.00", "0.00 1.00h1.00", "1.00 0.00v1.00"]


def test_layers_sort_matches():
    layers = {layer.name: layer for layer in build_layers(create_matches())}
    assert len(layers["truth"].elements) == 1
    assert len(layers["fn"].elements) == 1
    assert any("IoU 1.000" in e for e in layers["tp"].elements)
    assert any("FP 0.40" in e for e in layers["fp"].elements)


def test_overlay_file_is_valid_svg(tmp_path):
    path = write_frame_overlay(tmp_path / "overlays", "000000", (3, 3), create_matches())
    assert path.name == "frame-000000.svg"
    root = ET.parse(path).getroot()
    groups = [g.get("id") for g in root.iter("{http://www.w3.org/2000/svg}g")]
    assert groups == ["truth", "fn", "tp", "fp"]
