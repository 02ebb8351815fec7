import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from src.config import (
    IOU_THRESHOLD,
    NMS_IOU_THRESHOLD,
    OCCUPANCY_FRACTION,
)
from src.dataset import default_plane
from src.errors import PreconditionError, UndefinedMapError
from src.fisheye import CameraModel, Projection, WarpDirection, project_rays, warp_mask
from src.geometry import (
    clip_convex,
    frame_covering,
    is_convex,
    polygon_area,
    rasterize,
)
from src.representation_register import (
    MASK_KIND_NAME,
    RepresentationSpec,
    kind_of,
)
from src.representations import (
    IoUConfig,
    mask_to_bounding_box,
    mask_window_frame,
    rasterizable,
    representation_bounds,
    representation_iou,
    supersample_mask,
    to_polygon,
)
from src.schemas import (
    BoundingBox,
    CameraView,
    ClassLabel,
    Detection,
    EvalMode,
    GroundTruth,
    InstanceMask,
    Occupancy,
    OrientedBox,
    PolarPolygon,
    RasterFrame,
    Representation,
    Shape,
    SimplePolygon,
    filter_known_fields,
)
from src.workers import ordered_map

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalConfig:
    """
    Attributes
    ----------
    iou_threshold : float
        Minimum IoU for a true positive.
    mode : EvalMode
        ``repVsRep`` compares against the truth converted to the detection's
        representation, ``repVsInstance`` against the raw mask.
    nms_iou : float or None
        Suppression threshold applied per frame before matching; None skips NMS.
    iou : IoUConfig
        Raster settings for non-exact IoU pairs.
    polygon_box_reference : bool
        In ``repVsRep`` mode, score polygon detections by their enclosing box
        against the truth's bounding box.
    """

    iou_threshold: float = IOU_THRESHOLD
    mode: EvalMode = EvalMode.REP_VS_REP
    nms_iou: float | None = NMS_IOU_THRESHOLD
    iou: IoUConfig = field(default_factory=IoUConfig)
    polygon_box_reference: bool = False

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise PreconditionError(f"IoU threshold must be in (0, 1): {self.iou_threshold}")
        if self.nms_iou is not None and not 0.0 < self.nms_iou < 1.0:
            raise PreconditionError(f"NMS threshold must be in (0, 1): {self.nms_iou}")

    @classmethod
    def from_dict(cls, data: dict) -> "EvalConfig":
        data = filter_known_fields(cls, data)
        if "mode" in data:
            data["mode"] = EvalMode(data["mode"])
        if "iou" in data and isinstance(data["iou"], dict):
            data["iou"] = IoUConfig(**filter_known_fields(IoUConfig, data["iou"]))
        return cls(**data)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["mode"] = self.mode.value
        return data


@dataclass(frozen=True)
class Match:
    """
    One matching outcome: TP (both sides), FP (no truth) or FN (no detection).
    """

    detection: Detection | None
    truth: GroundTruth | None
    iou: float = 0.0

    @property
    def is_tp(self) -> bool:
        return self.detection is not None and self.truth is not None

    @property
    def is_fp(self) -> bool:
        return self.truth is None

    @property
    def is_fn(self) -> bool:
        return self.detection is None

    @property
    def class_label(self) -> ClassLabel:
        return self.detection.class_label if self.detection is not None else self.truth.class_label

    @property
    def frame_id(self) -> str:
        return self.detection.frame_id if self.detection is not None else self.truth.frame_id


@dataclass(frozen=True)
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def truths(self) -> int:
        return self.tp + self.fn


@dataclass(eq=False)
class EvalReport:
    mode: EvalMode
    iou_threshold: float
    per_class_ap: dict[ClassLabel, float | None]
    mean_ap: float
    counts: dict[ClassLabel, ClassCounts]
    matches: list[Match]
    per_camera_ap: dict[CameraView, dict[ClassLabel, float | None]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "iouThreshold": self.iou_threshold,
            "mAP": self.mean_ap,
            "perClassAP": {label.value: ap for label, ap in self.per_class_ap.items()},
            "counts": {label.value: asdict(c) for label, c in self.counts.items()},
            "perCameraAP": {
                view.value: {label.value: ap for label, ap in aps.items()}
                for view, aps in self.per_camera_ap.items()
            },
            "matches": [_match_to_dict(m) for m in self.matches],
        }


def _match_to_dict(match: Match) -> dict:
    return {
        "frameId": match.frame_id,
        "class": match.class_label.value,
        "detection": None if match.detection is None else match.detection.detection_id,
        "truth": None if match.truth is None else match.truth.index,
        "iou": match.iou,
    }


def _detection_order(det: Detection):
    return (-det.confidence, det.frame_id, det.detection_id)


def _single_frame(items: Iterable, what: str) -> str | None:
    frames = {item.frame_id for item in items}
    if len(frames) > 1:
        raise PreconditionError(f"{what} span several frames: {sorted(frames)}")
    return next(iter(frames), None)


def _rep_bounds(shape: Shape) -> tuple[float, float, float, float]:
    if isinstance(shape, InstanceMask):
        box = mask_to_bounding_box(shape)
        return (box.cx - box.w / 2, box.cy - box.h / 2, box.cx + box.w / 2, box.cy + box.h / 2)
    return representation_bounds(shape)


def _bounds_overlap(a, b) -> bool:
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


def nms(
    dets: Sequence[Detection],
    iou_threshold: float = NMS_IOU_THRESHOLD,
    iou_cfg: IoUConfig | None = None,
) -> list[Detection]:
    """
    Greedy per-class non-maximum suppression.

    Detections are visited by descending confidence (ties by detection id); a
    detection is kept iff its IoU with every kept detection of its class is
    below ``iou_threshold``.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise PreconditionError(f"NMS threshold must be in (0, 1): {iou_threshold}")
    _single_frame(dets, "NMS detections")
    kept: list[Detection] = []
    kept_bounds: list[tuple] = []
    for det in sorted(dets, key=_detection_order):
        bounds = _rep_bounds(det.rep)
        suppressed = any(
            other.class_label == det.class_label
            and _bounds_overlap(bounds, other_bounds)
            and representation_iou(det.rep, other.rep, iou_cfg) >= iou_threshold
            for other, other_bounds in zip(kept, kept_bounds)
        )
        if not suppressed:
            kept.append(det)
            kept_bounds.append(bounds)
    logger.debug("NMS kept %d of %d detections", len(kept), len(dets))
    return kept


def _polygon_box(rep: PolarPolygon) -> BoundingBox:
    min_x, min_y, max_x, max_y = representation_bounds(rep)
    return BoundingBox((min_x + max_x) / 2, (min_y + max_y) / 2, max_x - min_x, max_y - min_y)


class _TruthConverter:
    """Converts ground-truth masks to the form a detection is scored against."""

    def __init__(self, cfg: EvalConfig):
        self.cfg = cfg
        self._cache: dict[tuple, Shape] = {}

    def reference(self, det: Detection, truth: GroundTruth) -> tuple[Shape, Shape]:
        """Return ``(detection side, truth side)`` for the IoU."""
        if self.cfg.mode is EvalMode.REP_VS_INSTANCE:
            return det.rep, truth.mask
        if self.cfg.polygon_box_reference and isinstance(det.rep, PolarPolygon):
            return _polygon_box(det.rep), self._converted(truth, RepresentationSpec("box"))
        kind = kind_of(det.rep)
        points = det.rep.points if isinstance(det.rep, PolarPolygon) else None
        return det.rep, self._converted(truth, RepresentationSpec(kind.name, points))

    def _converted(self, truth: GroundTruth, spec: RepresentationSpec) -> Shape:
        key = (truth.frame_id, truth.index, spec)
        if key not in self._cache:
            self._cache[key] = spec.convert(truth.mask)
        return self._cache[key]


def match_detections(
    dets: Sequence[Detection],
    truths: Sequence[GroundTruth],
    cfg: EvalConfig | None = None,
) -> list[Match]:
    """
    Greedy matching of one frame's detections to its ground truth.

    Per class, detections in descending confidence take the unmatched truth of
    highest IoU (ties to the lower truth index) when that IoU reaches the
    threshold; otherwise they are false positives. Unmatched truths become
    false negatives.
    """
    cfg = cfg or EvalConfig()
    frame = _single_frame([*dets, *truths], "Detections and truths")
    if frame is None:
        return []
    converter = _TruthConverter(cfg)
    matches: list[Match] = []
    for label in sorted({d.class_label for d in dets} | {t.class_label for t in truths}):
        class_truths = sorted((t for t in truths if t.class_label == label), key=lambda t: t.index)
        matched: set[int] = set()
        for det in sorted((d for d in dets if d.class_label == label), key=_detection_order):
            best_iou, best_truth = 0.0, None
            for truth in class_truths:
                if truth.index in matched:
                    continue
                det_side, truth_side = converter.reference(det, truth)
                if not _bounds_overlap(_rep_bounds(det_side), _rep_bounds(truth_side)):
                    continue
                iou = representation_iou(det_side, truth_side, cfg.iou)
                if iou > best_iou:
                    best_iou, best_truth = iou, truth
            if best_truth is not None and best_iou >= cfg.iou_threshold:
                matched.add(best_truth.index)
                matches.append(Match(det, best_truth, best_iou))
            else:
                matches.append(Match(det, None, best_iou))
        matches.extend(Match(None, t, 0.0) for t in class_truths if t.index not in matched)
    return matches


def average_precision(matches: Sequence[Match], class_label: ClassLabel) -> float | None:
    """
    All-point interpolated average precision at the configured IoU threshold.

    Precision is replaced by its running maximum from the right (the
    envelope), and summed at every recall step. Returns None when the class
    has no ground truth.

    Examples
    --------
    >>> # TP, FP, TP over 2 truths: (1 + 2/3) / 2
    >>> 5 / 6
    0.8333333333333334
    """
    class_matches = [m for m in matches if m.class_label == class_label]
    n_truths = sum(1 for m in class_matches if m.truth is not None)
    if n_truths == 0:
        return None
    ranked = sorted((m for m in class_matches if m.detection is not None), key=lambda m: _detection_order(m.detection))
    if not ranked:
        return 0.0
    hits = np.array([m.is_tp for m in ranked], dtype=float)
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(ranked) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(envelope[hits == 1.0]) / n_truths)


def _class_aps(matches: Sequence[Match]) -> dict[ClassLabel, float | None]:
    return {label: average_precision(matches, label) for label in ClassLabel}


def _mean_ap(per_class: Mapping[ClassLabel, float | None]) -> float:
    defined = [ap for ap in per_class.values() if ap is not None]
    if not defined:
        raise UndefinedMapError("No class has ground truth; mAP is undefined")
    return math.fsum(defined) / len(defined)


def _count(matches: Sequence[Match]) -> dict[ClassLabel, ClassCounts]:
    counts = {}
    for label in ClassLabel:
        class_matches = [m for m in matches if m.class_label == label]
        counts[label] = ClassCounts(
            tp=sum(m.is_tp for m in class_matches),
            fp=sum(m.is_fp for m in class_matches),
            fn=sum(m.is_fn for m in class_matches),
        )
    return counts


def evaluate(
    dets: Sequence[Detection],
    truths: Sequence[GroundTruth],
    cfg: EvalConfig | None = None,
    cameras: Mapping[str, CameraView] | None = None,
    workers: int | None = None,
) -> EvalReport:
    """
    NMS, matching and AP over a corpus.

    Frames are processed independently (optionally in parallel) and reduced in
    frame-id order.

    Raises
    ------
    UndefinedMapError
        If the ground truth holds no instance at all.
    """
    cfg = cfg or EvalConfig()
    if not truths:
        raise UndefinedMapError("Ground truth is empty; mAP is undefined")
    dets_by_frame: dict[str, list[Detection]] = defaultdict(list)
    truths_by_frame: dict[str, list[GroundTruth]] = defaultdict(list)
    for det in dets:
        dets_by_frame[det.frame_id].append(det)
    for truth in truths:
        truths_by_frame[truth.frame_id].append(truth)
    frames = sorted(set(dets_by_frame) | set(truths_by_frame))

    def run_frame(frame_id: str) -> list[Match]:
        frame_dets = dets_by_frame.get(frame_id, [])
        if cfg.nms_iou is not None:
            frame_dets = nms(frame_dets, cfg.nms_iou, cfg.iou)
        return match_detections(frame_dets, truths_by_frame.get(frame_id, []), cfg)

    per_frame = ordered_map(run_frame, frames, workers)
    matches = [m for frame_matches in per_frame for m in frame_matches]

    per_class = _class_aps(matches)
    report = EvalReport(
        mode=cfg.mode,
        iou_threshold=cfg.iou_threshold,
        per_class_ap=per_class,
        mean_ap=_mean_ap(per_class),
        counts=_count(matches),
        matches=matches,
    )
    if cameras:
        for view in CameraView:
            view_frames = {f for f in frames if cameras.get(f) is view}
            if view_frames:
                report.per_camera_ap[view] = _class_aps(
                    [m for m in matches if m.frame_id in view_frames]
                )
    logger.info(
        "%s: mAP %.4f over %d frames (%d matches)",
        cfg.mode.value,
        report.mean_ap,
        len(frames),
        len(matches),
    )
    return report


def evaluate_both(
    dets: Sequence[Detection],
    truths: Sequence[GroundTruth],
    cfg: EvalConfig | None = None,
    cameras: Mapping[str, CameraView] | None = None,
    workers: int | None = None,
) -> dict[EvalMode, EvalReport]:
    cfg = cfg or EvalConfig()
    return {
        mode: evaluate(dets, truths, replace(cfg, mode=mode), cameras, workers)
        for mode in EvalMode
    }


TABLE_CLASSES = (ClassLabel.VEHICLE, ClassLabel.PEDESTRIAN)


def comparison_header() -> list[str]:
    """Column layout of the representation comparison table."""
    header = ["Experiment"]
    for mode in EvalMode:
        header += [f"{mode.value}.{label.value.capitalize()}" for label in TABLE_CLASSES]
        header.append(f"{mode.value}.mAP")
    return header


def comparison_row(experiment: str, reports: Mapping[EvalMode, EvalReport]) -> list[str]:
    """One table row; modes that were not run are left blank."""
    row = [experiment]
    for mode in EvalMode:
        report = reports.get(mode)
        if report is None:
            row += [""] * (len(TABLE_CLASSES) + 1)
            continue
        for label in TABLE_CLASSES:
            ap = report.per_class_ap.get(label)
            row.append("" if ap is None else f"{ap:.4f}")
        row.append(f"{report.mean_ap:.4f}")
    return row


# Upper-bound study -----------------------------------------------------------


@dataclass(frozen=True)
class UpperBoundTable:
    columns: list[str]
    mean_iou: dict[str, float]
    instances: int

    def header(self) -> list[str]:
        return ["Representation", *self.columns]

    def row(self, label: str = "Mean IoU") -> list[str]:
        return [label, *(f"{self.mean_iou[c]:.4f}" for c in self.columns)]


def upper_bound_study(
    masks: Sequence[InstanceMask],
    specs: Sequence[RepresentationSpec],
    cfg: IoUConfig | None = None,
    workers: int | None = None,
) -> UpperBoundTable:
    """
    Mean IoU between every mask and its own conversion, per representation.

    This is the best score a detector emitting that representation could reach.
    """
    if not masks:
        raise PreconditionError("Upper-bound study needs a non-empty corpus")
    if not specs:
        raise PreconditionError("Upper-bound study needs at least one representation")
    cfg = cfg or IoUConfig()

    def score(mask: InstanceMask) -> list[float]:
        return [representation_iou(spec.convert(mask), mask, cfg) for spec in specs]

    scores = np.array(ordered_map(score, masks, workers))
    columns = [spec.column for spec in specs]
    means = {column: float(np.mean(scores[:, k])) for k, column in enumerate(columns)}
    logger.info("Upper bound over %d instances: %s", len(masks), means)
    return UpperBoundTable(columns=columns, mean_iou=means, instances=len(masks))


# Occupancy -------------------------------------------------------------------


@dataclass(frozen=True)
class OccupancyConfig:
    fraction: float = OCCUPANCY_FRACTION
    iou: IoUConfig = field(default_factory=IoUConfig)

    def __post_init__(self):
        if not 0.0 <= self.fraction < 1.0:
            raise PreconditionError(f"Occupancy fraction must be in [0, 1): {self.fraction}")


def _region_frame(region: SimplePolygon, resolution: int) -> RasterFrame:
    return frame_covering([region.bounds()], resolution)


def region_overlap(region: SimplePolygon, shape: Shape, iou_cfg: IoUConfig | None = None) -> float:
    """Fraction of the region's area covered by ``shape``."""
    iou_cfg = iou_cfg or IoUConfig()
    if isinstance(shape, (BoundingBox, OrientedBox)) and is_convex(region):
        overlap = clip_convex(region, to_polygon(shape))
        return 0.0 if overlap is None else polygon_area(overlap) / polygon_area(region)
    if isinstance(shape, InstanceMask):
        sub, window = mask_window_frame(shape, region.bounds(), iou_cfg.supersampling)
        region_grid = rasterize(region, sub).occupancy
        mask_grid = supersample_mask(shape, sub, window, iou_cfg.supersampling).occupancy
    else:
        frame = _region_frame(region, iou_cfg.resolution)
        region_grid = rasterize(region, frame).occupancy
        target = rasterizable(shape, iou_cfg.arc_segments)
        mask_grid = rasterize(target, frame).occupancy
    region_cells = int(np.count_nonzero(region_grid))
    if region_cells == 0:
        return 0.0
    return int(np.count_nonzero(region_grid & mask_grid)) / region_cells


def occupancy_predicate(
    region: SimplePolygon,
    dets: Iterable[Detection | Shape],
    cfg: OccupancyConfig | None = None,
) -> Occupancy:
    """
    ``occupied`` iff some detection covers more than ``cfg.fraction`` of the region.

    Instance masks are accepted directly so the pixel-level reference can be
    scored alongside the representations.
    """
    cfg = cfg or OccupancyConfig()
    for det in dets:
        shape = det.rep if isinstance(det, Detection) else det
        if region_overlap(region, shape, cfg.iou) > cfg.fraction:
            return Occupancy.OCCUPIED
    return Occupancy.FREE


@dataclass(frozen=True, eq=False)
class ParkingScene:
    """A free parking slot between two parked cars."""

    region: SimplePolygon
    cars: tuple[InstanceMask, ...]
    image_size: tuple[int, int]


def _rotated_rectangle(center, along, across, length, width) -> np.ndarray:
    center, along, across = (np.asarray(v, dtype=float) for v in (center, along, across))
    return np.array(
        [
            center + su * length / 2 * along + sv * width / 2 * across
            for su, sv in ((-1, -1), (1, -1), (1, 1), (-1, 1))
        ]
    )


def distort_outline(
    outline: np.ndarray, cam: CameraModel, plane: Projection, subdivisions: int = 8
) -> SimplePolygon:
    """
    Carry a closed outline drawn on ``plane`` into the fisheye image.

    Every edge is split into ``subdivisions`` pieces first so the curved
    image of a straight edge is followed.
    """
    outline = np.asarray(outline, dtype=float)
    ends = np.roll(outline, -1, axis=0)
    steps = np.arange(subdivisions)[:, np.newaxis, np.newaxis] / subdivisions
    dense = (outline + steps * (ends - outline)).transpose(1, 0, 2).reshape(-1, 2)
    rays = plane.pixels_to_rays(dense[:, 0], dense[:, 1])
    points, inside = project_rays(cam, rays)
    if not inside.all():
        raise PreconditionError("Outline leaves the camera field of view")
    return SimplePolygon.from_array(points)


def build_parking_scene(
    cam: CameraModel | None = None,
    plane: Projection | None = None,
    offset: tuple[float, float] = (250.0, 100.0),
    angle: float = 45.0,
    car_size: tuple[float, float] = (40.0, 100.0),
    car_offset: float = 50.0,
    slot_size: tuple[float, float] = (40.0, 80.0),
) -> ParkingScene:
    """
    Two cars parked side by side along a row at ``angle`` degrees, with an
    empty slot between them, seen through the fisheye camera.

    The scene is laid out on the undistorted plane ``offset`` pixels away
    from its center, then the car masks are warped into the fisheye image and
    the slot outline is projected there. The cars are skewed relative to the
    image axes, so their axis-aligned boxes reach into the slot while the cars
    themselves do not.
    """
    cam = cam or CameraModel()
    plane = plane or default_plane()
    width, height = plane.output_size
    t = math.radians(angle)
    along = np.array([math.cos(t), math.sin(t)])
    across = np.array([math.sin(t), -math.cos(t)])
    center = np.array([width / 2 + offset[0], height / 2 + offset[1]])
    cars = []
    for side in (1.0, -1.0):
        outline = _rotated_rectangle(center + side * car_offset * along, along, across, *car_size)
        flat = InstanceMask(
            rasterize(SimplePolygon.from_array(outline), plane.frame), ClassLabel.VEHICLE
        )
        car = warp_mask(flat, cam, plane, WarpDirection.DISTORT)
        if car.is_empty:
            raise PreconditionError("Parking scene car falls outside the fisheye image")
        cars.append(car.cropped())
    region = distort_outline(_rotated_rectangle(center, along, across, *slot_size), cam, plane)
    return ParkingScene(region=region, cars=tuple(cars), image_size=cam.image_size)


def occupancy_matrix(
    region: SimplePolygon,
    masks: Sequence[InstanceMask],
    specs: Sequence[RepresentationSpec | str],
    cfg: OccupancyConfig | None = None,
) -> dict[str, Occupancy]:
    """Occupancy of ``region`` when every mask is replaced by each representation."""
    result = {}
    for spec in specs:
        if spec == MASK_KIND_NAME:
            result[MASK_KIND_NAME] = occupancy_predicate(region, masks, cfg)
            continue
        spec = spec if isinstance(spec, RepresentationSpec) else RepresentationSpec.parse(spec)
        reps: list[Representation] = [spec.convert(mask) for mask in masks if not mask.is_empty]
        result[spec.column] = occupancy_predicate(region, reps, cfg)
    return result
